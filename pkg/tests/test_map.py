import warnings

import numpy as np
import pytest
from scipy import stats

from borrowbench.analysis import run_method
from borrowbench.conjugate import BetaParams
from borrowbench.data import builtin_dataset
from borrowbench.errors import BorrowWarning
from borrowbench.ess import MixtureApprox, elir_ess
from borrowbench.inference import ChainSpec
from borrowbench.methods import DpmMapConfig, MapConfig, fit_dpm_map, fit_map, fit_robust_map, mixture_posterior

from helpers import binary_study, ks_to, ks_two

SPEC = ChainSpec(n_chains=2, n_warmup=500, n_keep=2000, seed=5)
AS = builtin_dataset("as_binary")


@pytest.fixture(scope="module")
def as_map():
    return fit_map(AS, SPEC)


def test_identical_arms_centre_the_prior():
    data = binary_study([(100, 30)] * 5)
    res = fit_map(data, SPEC)
    assert abs(res.state.prior_mixture.mean() - 0.30) < 0.02
    assert res.source_summaries == {}


def test_prior_ess_grows_as_heterogeneity_shrinks():
    data = binary_study([(100, 30)] * 5)
    ess = []
    for scale in (1.0, 0.1, 1e-4):
        prior = fit_map(data, SPEC, MapConfig(tau_prior_scale=scale)).state.prior_mixture
        draws = prior.sample(np.random.default_rng(0), 20000)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ess.append(elir_ess(prior, draws, "binary"))
    assert ess[0] < ess[1] < ess[2]
    # near-zero heterogeneity approaches full pooling of 500 patients
    assert ess[2] > 250


def test_robust_weight_zero_is_plain_map(as_map):
    res = fit_robust_map(AS, SPEC, MapConfig(robust_weight=0.0))
    assert np.array_equal(res.theta_cc_draws, as_map.theta_cc_draws)


def test_robust_weight_one_is_the_vague_component():
    res = fit_robust_map(AS, ChainSpec(n_chains=4, n_warmup=300, n_keep=10000, seed=5), MapConfig(robust_weight=1.0))
    assert res.n_draws == 40000
    assert ks_to(res.theta_cc_draws, stats.beta(2, 6).cdf) < 0.01


def test_robust_half_sits_between_the_extremes():
    e = {w: run_method("robust_map", AS, SPEC, MapConfig(robust_weight=w)).ess.ess_post for w in (0.0, 0.5, 1.0)}
    assert e[1.0] < e[0.5] < e[0.0]
    assert abs(e[1.0] - 8.0) < 0.5


def test_single_beta_posterior_is_conjugate():
    prior = MixtureApprox("beta", np.array([1.0]), np.array([[3.0, 7.0]]))
    post = mixture_posterior(prior, AS)
    assert np.allclose(post.params, [[4.0, 12.0]])
    assert post.weights.tolist() == [1.0]


def test_mixture_posterior_weights_follow_marginal_likelihood():
    prior = MixtureApprox("beta", np.array([0.5, 0.5]), np.array([[2.0, 8.0], [8.0, 2.0]]))
    post = mixture_posterior(prior, AS)
    # CC has 1/6 responders, so the low-rate component gains weight
    lik = [stats.betabinom(6, a, b).pmf(1) for a, b in prior.params]
    want = np.array(lik) / sum(lik)
    assert np.allclose(post.weights, want, atol=1e-12)


def test_dpm_map_single_scale_matches_map():
    spec = ChainSpec(n_chains=4, n_warmup=1000, n_keep=5000, seed=11)
    a = fit_map(AS, spec)
    b = fit_dpm_map(AS, spec, DpmMapConfig(truncation=1))
    assert ks_two(a.state.predictive_draws.ravel(), b.state.predictive_draws.ravel()) < 0.02
    assert ks_two(a.theta_cc_draws, b.theta_cc_draws) < 0.02


def test_dpm_map_weights_sum_to_one():
    res = fit_dpm_map(AS, ChainSpec(n_chains=1, n_warmup=200, n_keep=1000, seed=2))
    assert res.metadata["max_weight_sum_error"] <= 1e-12
    assert res.source_summaries == {}


def test_single_source_warns():
    with pytest.warns(BorrowWarning):
        fit_map(binary_study([(50, 10)]), ChainSpec(n_chains=1, n_warmup=100, n_keep=1000))


def test_config_validation():
    with pytest.raises(ValueError):
        MapConfig(robust_weight=1.5)
    with pytest.raises(ValueError):
        DpmMapConfig(truncation=0)
    with pytest.raises(ValueError):
        MapConfig(tau_prior_scale=0.0)
    assert BetaParams(1, 1).a == 1
