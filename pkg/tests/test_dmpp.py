import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from borrowbench.data import builtin_dataset
from borrowbench.inference import ChainSpec
from borrowbench.methods import DmppConfig, dmpp_gamma_log_posterior, fit_dmpp

from helpers import ks_to

AS = builtin_dataset("as_binary")
ADCS = builtin_dataset("adcs_continuous")
SPEC = ChainSpec(n_chains=4, n_warmup=500, n_keep=10000, seed=7)


def _mcse_ok(draws, mean, sd, k=3.0):
    # iid draws from a conjugate update, so the MCSE is sd / sqrt(n)
    return abs(draws.mean() - mean) < k * sd / math.sqrt(draws.size)


def test_full_borrowing_is_pooled_beta():
    res = fit_dmpp(AS, SPEC, DmppConfig(fixed_gamma=1.0))
    target = stats.beta(129, 392)
    assert _mcse_ok(res.theta_cc_draws, target.mean(), target.std())
    assert ks_to(res.theta_cc_draws, target.cdf) < 0.01


def test_no_borrowing_is_current_only():
    res = fit_dmpp(AS, SPEC, DmppConfig(fixed_gamma=0.0))
    target = stats.beta(2, 6)
    assert _mcse_ok(res.theta_cc_draws, target.mean(), target.std())
    assert ks_to(res.theta_cc_draws, target.cdf) < 0.01


def test_continuous_full_borrowing_is_pooled_normal():
    res = fit_dmpp(ADCS, SPEC, DmppConfig(fixed_gamma=1.0))
    arms = ADCS.arms + [ADCS.current_control]
    prec = 1e-4 + sum(1 / a.se**2 for a in arms)
    mean = sum(a.mean / a.se**2 for a in arms) / prec
    target = stats.norm(mean, 1 / math.sqrt(prec))
    assert _mcse_ok(res.theta_cc_draws, target.mean(), target.std())
    assert ks_to(res.theta_cc_draws, target.cdf) < 0.01


def _quad_log_marginal(gamma, data):
    """log p(D_CC | gamma) for a Beta(1, 1) initial prior, by quadrature."""
    def power(t):
        return math.exp(sum(g * (a.y * math.log(t) + (a.n - a.y) * math.log1p(-t))
                            for g, a in zip(gamma, data.arms)))

    cc = data.current_control
    z = integrate.quad(power, 0, 1, epsabs=0, epsrel=1e-12, limit=200)[0]
    num = integrate.quad(lambda t: power(t) * t**cc.y * (1 - t) ** (cc.n - cc.y), 0, 1,
                         epsabs=0, epsrel=1e-12, limit=200)[0]
    return math.log(num / z)


@given(st.lists(st.floats(0.02, 0.98), min_size=8, max_size=8),
       st.lists(st.floats(0.02, 0.98), min_size=8, max_size=8))
def test_gamma_log_posterior_matches_quadrature(g1, g2):
    mu, kappa = 0.4, 3.0
    prior = sum(stats.beta(mu * kappa, (1 - mu) * kappa).logpdf(g1)) - sum(
        stats.beta(mu * kappa, (1 - mu) * kappa).logpdf(g2))
    want = _quad_log_marginal(g1, AS) - _quad_log_marginal(g2, AS) + prior
    got = dmpp_gamma_log_posterior(g1, AS, mu, kappa) - dmpp_gamma_log_posterior(g2, AS, mu, kappa)
    assert got == pytest.approx(want, abs=1e-6)


def test_binomial_coefficient_cancels():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = rng.uniform(0.05, 0.95, AS.K)
        a = dmpp_gamma_log_posterior(g, AS, 0.5, 2.0)
        b = dmpp_gamma_log_posterior(g, AS, 0.5, 2.0, include_binomial_coefficient=True)
        assert a == pytest.approx(b, abs=1e-9)
        h = 1e-5
        for k in range(AS.K):
            e = np.zeros(AS.K)
            e[k] = h
            da = (dmpp_gamma_log_posterior(g + e, AS, 0.5, 2.0) - dmpp_gamma_log_posterior(g - e, AS, 0.5, 2.0)) / (2 * h)
            db = (dmpp_gamma_log_posterior(g + e, AS, 0.5, 2.0, include_binomial_coefficient=True)
                  - dmpp_gamma_log_posterior(g - e, AS, 0.5, 2.0, include_binomial_coefficient=True)) / (2 * h)
            assert da == pytest.approx(db, abs=1e-4)


@pytest.fixture(scope="module")
def as_dmpp():
    return fit_dmpp(AS, ChainSpec(n_chains=2, n_warmup=1000, n_keep=3000, seed=1))


def test_gamma_summaries(as_dmpp):
    summ = as_dmpp.source_summaries["gamma"]
    assert summ.unit_interval
    assert summ.draws.shape == (as_dmpp.n_draws, AS.K)
    assert np.all((summ.draws > 0) & (summ.draws < 1))
    # the current control is tiny, so the data say little about any gamma
    assert np.all(np.abs(summ.values - 0.5) < 0.15)


def test_diagnostics_cover_hyperparameters(as_dmpp):
    keys = set(as_dmpp.diagnostics)
    assert {"theta_cc", "mu_pp", "log_kappa_pp"} <= keys
    assert all(f"gamma[{l}]" in keys for l in AS.labels)


def test_borrowing_shrinks_posterior_spread(as_dmpp):
    assert as_dmpp.theta_cc_draws.std() < stats.beta(2, 6).std()
