"""Closed-form beta-binomial and normal-known-variance marginals and updates.

Everything is evaluated in the log domain with ``lgamma``; beta functions of
size B(129, 392) underflow as raw floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from .errors import InvalidCount

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BetaParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"beta shapes must be positive, got ({self.a}, {self.b})")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class NormalParams:
    m: float
    v: float

    def __post_init__(self):
        if not self.v > 0:
            raise ValueError(f"normal variance must be positive, got {self.v}")


def betaln(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def log_choose(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _check_counts(n: float, y: float) -> None:
    if not 0 <= y <= n:
        raise InvalidCount(f"need 0 <= y <= n, got n={n}, y={y}")


def beta_binomial_log_marginal(prior: BetaParams, n: int, y: int) -> float:
    """log of the integral of Binom(y | n, p) Beta(p | a, b) over p."""
    _check_counts(n, y)
    return log_choose(n, y) + betaln(prior.a + y, prior.b + n - y) - betaln(prior.a, prior.b)


def beta_binomial_pooled_log_marginal(prior: BetaParams, arms: Iterable[tuple[int, int]]) -> float:
    """Joint marginal of several binomial arms that share one Beta-distributed rate.

    Each arm keeps its own binomial coefficient, so this is a true joint
    probability of the observed counts (not the marginal of the summed arm).
    """
    coef = 0.0
    sy = sf = 0
    for n, y in arms:
        _check_counts(n, y)
        coef += log_choose(n, y)
        sy += y
        sf += n - y
    return coef + betaln(prior.a + sy, prior.b + sf) - betaln(prior.a, prior.b)


def beta_posterior_update(prior: BetaParams, n: int, y: int) -> BetaParams:
    _check_counts(n, y)
    return BetaParams(prior.a + y, prior.b + n - y)


def normal_known_var_log_marginal(prior: NormalParams, obs_mean: float, obs_se: float) -> float:
    """log N(obs_mean; m, v + se^2)."""
    if not obs_se > 0:
        raise ValueError(f"obs_se must be positive, got {obs_se}")
    var = prior.v + obs_se * obs_se
    d = obs_mean - prior.m
    return -0.5 * (LOG_2PI + math.log(var) + d * d / var)


def normal_posterior_update(prior: NormalParams, obs_mean: float, obs_se: float) -> NormalParams:
    if not obs_se > 0:
        raise ValueError(f"obs_se must be positive, got {obs_se}")
    prec_obs = 1.0 / (obs_se * obs_se)
    v = 1.0 / (1.0 / prior.v + prec_obs)
    return NormalParams(v * (prior.m / prior.v + obs_mean * prec_obs), v)


def normal_pooled_log_marginal(prior: NormalParams, arms: Iterable[tuple[float, float]]) -> float:
    """Joint marginal of arm means (mean, se) sharing one normal parameter.

    Computed by the chain rule: each arm is scored against the posterior
    built from the arms before it.
    """
    total = 0.0
    post = prior
    for mean, se in arms:
        total += normal_known_var_log_marginal(post, mean, se)
        post = normal_posterior_update(post, mean, se)
    return total


def normal_pooled_posterior(prior: NormalParams, arms: Iterable[tuple[float, float]]) -> NormalParams:
    prec = 1.0 / prior.v
    wsum = prior.m / prior.v
    for mean, se in arms:
        p = 1.0 / (se * se)
        prec += p
        wsum += mean * p
    return NormalParams(wsum / prec, 1.0 / prec)
