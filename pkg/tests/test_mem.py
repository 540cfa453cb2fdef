import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from borrowbench.conjugate import NormalParams
from borrowbench.data import builtin_dataset
from borrowbench.errors import TooManySources
from borrowbench.inference import ChainSpec
from borrowbench.methods import MemConfig, fit_mem
from borrowbench.methods.mem import all_patterns, mem_state, pattern_log_prior

from helpers import binary_study, continuous_study

AS = builtin_dataset("as_binary")


def test_two_source_pattern_prior():
    lp = pattern_log_prior(np.array([[True, False]]))
    assert math.exp(lp[0]) == pytest.approx(1 / 6, abs=1e-15)


def test_pattern_priors_sum_to_one():
    for K in (1, 3, 8, 12):
        assert abs(np.exp(pattern_log_prior(all_patterns(K))).sum() - 1.0) < 1e-12


def test_pattern_enumeration():
    p = all_patterns(3)
    assert p.shape == (8, 3)
    assert len({tuple(r) for r in p}) == 8
    with pytest.raises(TooManySources):
        all_patterns(21)
    with pytest.raises(TooManySources):
        fit_mem(binary_study([(20, 5)] * 21), ChainSpec(n_chains=1, n_keep=100))


def test_posterior_two_ways():
    for data in (AS, builtin_dataset("adcs_continuous")):
        s = mem_state(data)
        assert np.max(np.abs(s.pattern_posterior - s.pattern_posterior_direct)) < 1e-12
        assert abs(s.pattern_posterior.sum() - 1.0) < 1e-12
        assert np.all((s.p_ex >= 0) & (s.p_ex <= 1))


def test_h7_is_least_exchangeable():
    s = mem_state(AS)
    assert int(np.argmin(s.p_ex)) == AS.labels.index("H7")


def _quad_binary_marginal(data, pattern):
    """Pattern marginal by quadrature under Beta(1, 1) priors."""
    def lik(t, arms):
        return math.prod(stats.binom.pmf(a.y, a.n, t) for a in arms)

    pooled = [data.current_control] + [a for a, inc in zip(data.arms, pattern) if inc]
    out = integrate.quad(lik, 0, 1, args=(pooled,), epsabs=0, epsrel=1e-12, limit=200)[0]
    for a, inc in zip(data.arms, pattern):
        if not inc:
            out *= integrate.quad(lik, 0, 1, args=([a],), epsabs=0, epsrel=1e-12)[0]
    return math.log(out)


def test_binary_pattern_marginals_match_quadrature():
    data = binary_study([(30, 6), (25, 14), (40, 9)], cc=(20, 5))
    s = mem_state(data)
    for pat, lm in zip(s.patterns, s.pattern_log_marginal):
        assert lm == pytest.approx(_quad_binary_marginal(data, pat), abs=1e-8)


def test_continuous_pattern_marginals_match_quadrature():
    data = continuous_study([(40, 5.0, 6.0), (30, 9.0, 7.0)])
    prior = NormalParams(4.0, 36.0)
    s = mem_state(data, MemConfig(prior=prior))
    sd = math.sqrt(prior.v)

    def group(arms):
        def f(t):
            return stats.norm.pdf(t, prior.m, sd) * math.prod(stats.norm.pdf(a.mean, t, a.se) for a in arms)
        return integrate.quad(f, prior.m - 12 * sd, prior.m + 12 * sd, epsabs=0, epsrel=1e-12, limit=400)[0]

    for pat, lm in zip(s.patterns, s.pattern_log_marginal):
        pooled = [data.current_control] + [a for a, inc in zip(data.arms, pat) if inc]
        want = math.log(group(pooled)) + sum(math.log(group([a])) for a, inc in zip(data.arms, pat) if not inc)
        assert lm == pytest.approx(want, abs=1e-7)


def test_draws_follow_pattern_mixture():
    data = binary_study([(30, 6), (25, 14)], cc=(20, 5))
    res = fit_mem(data, ChainSpec(n_chains=4, n_keep=10000, seed=2))
    s = res.state
    a = 1 + 5 + s.patterns.astype(float) @ [6, 14]
    b = 1 + 15 + s.patterns.astype(float) @ [24, 11]
    mean = float(s.pattern_posterior @ (a / (a + b)))
    assert abs(res.theta_cc_draws.mean() - mean) < 4 * res.theta_cc_draws.std() / math.sqrt(40000)
    assert res.source_summaries["p_ex"].unit_interval


def test_inclusion_prior_shifts_exchangeability():
    from borrowbench.conjugate import BetaParams

    lo = mem_state(AS, MemConfig(inclusion=BetaParams(1.0, 5.0))).p_ex
    hi = mem_state(AS, MemConfig(inclusion=BetaParams(5.0, 1.0))).p_ex
    assert np.all(hi > lo)
    assert special.beta(2, 2) == pytest.approx(1 / 6)
