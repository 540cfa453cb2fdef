import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from borrowbench.conjugate import (BetaParams, NormalParams, beta_binomial_log_marginal,
                                   beta_binomial_pooled_log_marginal, beta_posterior_update,
                                   normal_known_var_log_marginal, normal_pooled_log_marginal,
                                   normal_pooled_posterior, normal_posterior_update)
from borrowbench.errors import InvalidCount

U = BetaParams(1.0, 1.0)


@pytest.mark.parametrize("n, y, expected", [(1, 0, math.log(0.5)), (6, 1, math.log(1 / 7)), (0, 0, 0.0)])
def test_beta_binomial_examples(n, y, expected):
    assert beta_binomial_log_marginal(U, n, y) == pytest.approx(expected, abs=1e-12)


def test_beta_binomial_matches_scipy():
    for a, b, n, y in [(0.5, 2.0, 23, 4), (5, 5, 107, 80), (2, 6, 6, 1)]:
        ref = stats.betabinom.logpmf(y, n, a, b)
        assert beta_binomial_log_marginal(BetaParams(a, b), n, y) == pytest.approx(ref, abs=1e-10)


def test_invalid_counts():
    with pytest.raises(InvalidCount):
        beta_binomial_log_marginal(U, 5, 6)
    with pytest.raises(InvalidCount):
        beta_posterior_update(U, 5, -1)


def test_bad_params():
    with pytest.raises(ValueError):
        BetaParams(0.0, 1.0)
    with pytest.raises(ValueError):
        NormalParams(0.0, 0.0)


@pytest.mark.parametrize("prior, n, y, post", [((1, 1), 6, 1, (2, 6)), ((1, 1), 0, 0, (1, 1)),
                                                ((2, 6), 6, 1, (3, 11))])
def test_beta_update_examples(prior, n, y, post):
    assert beta_posterior_update(BetaParams(*prior), n, y) == BetaParams(*post)


def test_normal_marginal_examples():
    se = 6.3 / math.sqrt(55)
    ref = stats.norm.logpdf(4.8, 0.0, math.sqrt(1e4 + se**2))
    got = normal_known_var_log_marginal(NormalParams(0.0, 1e4), 4.8, se)
    assert got == pytest.approx(ref, abs=1e-12)
    assert got == pytest.approx(-5.525, abs=1e-3)
    assert normal_known_var_log_marginal(NormalParams(4.8, 1e-300), 4.8, 1.0) == pytest.approx(
        -0.5 * math.log(2 * math.pi), abs=1e-12)


def test_normal_update_examples():
    post = normal_posterior_update(NormalParams(0.0, 1e12), 4.8, 0.85)
    assert post.m == pytest.approx(4.8, abs=1e-9)
    assert post.v == pytest.approx(0.7225, abs=1e-9)
    assert normal_posterior_update(NormalParams(3.0, 1.0), 3.0, 1.0) == NormalParams(3.0, 0.5)
    p = normal_posterior_update(NormalParams(1.5, 2.0), 7.0, 1e6)
    assert p.m == pytest.approx(1.5, abs=1e-6) and p.v == pytest.approx(2.0, abs=1e-6)


def test_normal_marginal_monte_carlo():
    rng = np.random.default_rng(20240601)
    prior, obs, se = NormalParams(1.0, 4.0), 2.5, 1.3
    theta = rng.normal(prior.m, math.sqrt(prior.v), 10**6)
    dens = stats.norm.pdf(obs, theta, se)
    est, mcse = dens.mean(), dens.std(ddof=1) / math.sqrt(dens.size)
    assert abs(est - math.exp(normal_known_var_log_marginal(prior, obs, se))) < 3 * mcse


def test_pooled_normal_marginal_matches_multivariate():
    prior = NormalParams(0.5, 9.0)
    arms = [(1.0, 0.7), (2.2, 1.1), (0.1, 0.4)]
    means = np.array([m for m, _ in arms])
    cov = np.full((3, 3), prior.v) + np.diag([s**2 for _, s in arms])
    ref = stats.multivariate_normal.logpdf(means, np.full(3, prior.m), cov)
    assert normal_pooled_log_marginal(prior, arms) == pytest.approx(ref, abs=1e-10)
    chained = prior
    for m, s in arms:
        chained = normal_posterior_update(chained, m, s)
    pooled = normal_pooled_posterior(prior, arms)
    assert pooled.m == pytest.approx(chained.m, rel=1e-12) and pooled.v == pytest.approx(chained.v, rel=1e-12)


def test_pooled_beta_binomial_keeps_each_coefficient():
    arms = [(10, 3), (7, 2)]
    ref = sum(math.log(math.comb(n, y)) for n, y in arms)
    ref += math.lgamma(1 + 5) + math.lgamma(1 + 12) - math.lgamma(2 + 17)
    assert beta_binomial_pooled_log_marginal(U, arms) == pytest.approx(ref, abs=1e-12)


shape = st.floats(0.05, 50.0)


@given(shape, shape, st.integers(0, 50))
def test_beta_binomial_normalizes(a, b, n):
    total = math.fsum(math.exp(beta_binomial_log_marginal(BetaParams(a, b), n, y)) for y in range(n + 1))
    assert abs(total - 1.0) < 1e-10


@given(shape, shape, st.integers(0, 40), st.integers(0, 40), st.data())
def test_chained_beta_updates(a, b, n1, n2, data):
    y1 = data.draw(st.integers(0, n1))
    y2 = data.draw(st.integers(0, n2))
    p = BetaParams(a, b)
    two = beta_posterior_update(beta_posterior_update(p, n1, y1), n2, y2)
    one = beta_posterior_update(p, n1 + n2, y1 + y2)
    assert two.a == pytest.approx(one.a) and two.b == pytest.approx(one.b)


fin = st.floats(-100, 100)


@given(fin, st.floats(0.01, 100), st.floats(0, 50), st.floats(0.01, 20))
def test_normal_marginal_symmetry(m, v, d, se):
    p = NormalParams(m, v)
    assert normal_known_var_log_marginal(p, m + d, se) == pytest.approx(
        normal_known_var_log_marginal(p, m - d, se), abs=1e-9)
