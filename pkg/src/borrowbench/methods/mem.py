"""Multisource exchangeability model by exact enumeration of inclusion patterns."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import betaln, logsumexp

from ..conjugate import BetaParams, NormalParams, log_choose
from ..data import Endpoint, StudySet
from ..errors import TooManySources
from ..inference import ChainSpec, chain_seeds, make_rng
from .base import UNIFORM_BETA, PosteriorResult, SourceSummary, diagnose, treatment_draws

MAX_SOURCES = 20
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MemConfig:
    """``prior`` is the prior for the current control, shared by pooled
    sources and given independently to each excluded source; ``None`` means
    Beta(1, 1) for binary data and the unit-information normal prior of
    :func:`default_prior` for continuous data. ``inclusion`` is the Beta
    prior on the common inclusion probability."""

    prior: Optional[BetaParams | NormalParams] = None
    inclusion: BetaParams = BetaParams(1.0, 1.0)


@dataclass
class MemState:
    patterns: np.ndarray  # (2^K, K) bool, row r has bit k of r
    pattern_log_prior: np.ndarray
    pattern_log_marginal: np.ndarray
    pattern_posterior: np.ndarray
    p_ex: np.ndarray
    pattern_posterior_direct: np.ndarray


def default_prior(data: StudySet) -> BetaParams | NormalParams:
    """Beta(1, 1) for binary data. For continuous data, N(m, sd_CC^2) with m the
    sample-size-weighted mean of all control arms: a proper prior worth about
    one observation, like Beta(1, 1). A vaguer prior makes every pattern
    marginal that excludes a source arbitrarily small, so inclusion wins by
    default (Lindley's paradox)."""
    if data.endpoint is Endpoint.BINARY:
        return UNIFORM_BETA
    arms = [data.current_control] + data.arms
    n = np.array([a.n for a in arms], dtype=float)
    m = np.array([a.mean for a in arms])
    return NormalParams(float(n @ m / n.sum()), data.current_control.sd ** 2)


def all_patterns(K: int) -> np.ndarray:
    if K > MAX_SOURCES:
        raise TooManySources(f"MEM enumerates 2^K patterns; K={K} exceeds the limit of {MAX_SOURCES}")
    idx = np.arange(2**K, dtype=np.int64)
    return ((idx[:, None] >> np.arange(K)) & 1).astype(bool)


def pattern_log_prior(patterns: np.ndarray, inclusion: BetaParams = BetaParams(1.0, 1.0)) -> np.ndarray:
    """log Pr(pattern) with the common inclusion probability integrated out."""
    K = patterns.shape[1]
    s = patterns.sum(axis=1)
    return betaln(inclusion.a + s, inclusion.b + K - s) - betaln(inclusion.a, inclusion.b)


def _binary_log_marginals(data: StudySet, patterns: np.ndarray, prior: BetaParams) -> np.ndarray:
    y = np.array([a.y for a in data.arms], dtype=float)
    f = np.array([a.n - a.y for a in data.arms], dtype=float)
    cc = data.current_control
    coef = sum(log_choose(a.n, a.y) for a in data.arms) + log_choose(cc.n, cc.y)
    inc = patterns.astype(float)
    pooled = betaln(prior.a + cc.y + inc @ y, prior.b + (cc.n - cc.y) + inc @ f) - betaln(prior.a, prior.b)
    own = betaln(prior.a + y, prior.b + f) - betaln(prior.a, prior.b)
    return coef + pooled + (1.0 - inc) @ own


def _normal_group_log_marginal(count, sum_log_se, P, W, Q, prior: NormalParams):
    """Joint log density of arm means sharing theta ~ N(m, v), from precision sums."""
    m, v = prior.m, prior.v
    return (-0.5 * count * LOG_2PI - sum_log_se - 0.5 * np.log1p(v * P)
            - 0.5 * (Q + m * m / v - (W + m / v) ** 2 / (P + 1.0 / v)))


def _continuous_log_marginals(data: StudySet, patterns: np.ndarray, prior: NormalParams) -> np.ndarray:
    means = np.array([a.mean for a in data.arms])
    se = np.array([a.se for a in data.arms])
    prec = 1.0 / se**2
    cc = data.current_control
    inc = patterns.astype(float)
    pooled = _normal_group_log_marginal(
        1.0 + inc.sum(axis=1),
        math.log(cc.se) + inc @ np.log(se),
        1.0 / cc.se**2 + inc @ prec,
        cc.mean / cc.se**2 + inc @ (means * prec),
        cc.mean**2 / cc.se**2 + inc @ (means**2 * prec),
        prior,
    )
    own = _normal_group_log_marginal(1.0, np.log(se), prec, means * prec, means**2 * prec, prior)
    return pooled + (1.0 - inc) @ own


def mem_state(data: StudySet, cfg: MemConfig = MemConfig()) -> MemState:
    patterns = all_patterns(data.K)
    prior = cfg.prior or default_prior(data)
    if data.endpoint is Endpoint.BINARY:
        log_marg = _binary_log_marginals(data, patterns, prior)
    else:
        log_marg = _continuous_log_marginals(data, patterns, prior)
    log_prior = pattern_log_prior(patterns, cfg.inclusion)
    log_joint = log_prior + log_marg
    post = np.exp(log_joint - logsumexp(log_joint))
    direct = np.exp(log_joint - log_joint.max())
    direct /= direct.sum()
    p_ex = np.clip(patterns.T.astype(float) @ post, 0.0, 1.0)
    return MemState(patterns, log_prior, log_marg, post, p_ex, direct)


def _pattern_posteriors(data: StudySet, patterns: np.ndarray, cfg: MemConfig):
    """Conjugate posterior parameters of theta_CC under each pattern."""
    inc = patterns.astype(float)
    cc = data.current_control
    prior = cfg.prior or default_prior(data)
    if data.endpoint is Endpoint.BINARY:
        y = np.array([a.y for a in data.arms], dtype=float)
        f = np.array([a.n - a.y for a in data.arms], dtype=float)
        return prior.a + cc.y + inc @ y, prior.b + (cc.n - cc.y) + inc @ f
    means = np.array([a.mean for a in data.arms])
    prec = 1.0 / np.array([a.se for a in data.arms]) ** 2
    P = 1.0 / prior.v + 1.0 / cc.se**2 + inc @ prec
    W = prior.m / prior.v + cc.mean / cc.se**2 + inc @ (means * prec)
    return W / P, 1.0 / P


def fit_mem(data: StudySet, spec: ChainSpec = ChainSpec(), cfg: MemConfig = MemConfig()) -> PosteriorResult:
    """Exact Bayesian model averaging over all 2^K exchangeability patterns.

    theta_CC draws come from the pattern-averaged posterior: draw a pattern,
    then draw from that pattern's conjugate posterior.
    """
    state = mem_state(data, cfg)
    p1, p2 = _pattern_posteriors(data, state.patterns, cfg)
    chains = []
    for seed in chain_seeds(spec.seed, spec.n_chains):
        rng = make_rng(seed)
        which = rng.choice(state.patterns.shape[0], size=spec.n_keep, p=state.pattern_posterior)
        if data.endpoint is Endpoint.BINARY:
            chains.append(rng.beta(p1[which], p2[which]))
        else:
            chains.append(rng.normal(p1[which], np.sqrt(p2[which])))
    chains = np.stack(chains)
    return PosteriorResult(
        method="mem",
        endpoint=data.endpoint,
        source_labels=data.labels,
        theta_cc_draws=chains.reshape(-1),
        theta_ct_draws=treatment_draws(data, spec),
        source_summaries={"p_ex": SourceSummary(
            "p_ex", "posterior exchangeability probability", state.p_ex, unit_interval=True)},
        diagnostics=diagnose({"theta_cc": chains}),
        metadata={"n_patterns": int(state.patterns.shape[0]),
                  "prior": repr(cfg.prior or default_prior(data)),
                  "inclusion_prior": repr(cfg.inclusion)},
        state=state,
    )
