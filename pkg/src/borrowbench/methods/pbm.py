"""Potential bias model with a horseshoe prior on source-specific biases."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..conjugate import NormalParams
from ..data import Endpoint, StudySet
from ..inference import AdaptiveRW, ChainSpec, SliceStepper, make_rng, run_chains
from .base import PosteriorResult, SourceSummary, binom_loglik_logit, diagnose, expit, stack, treatment_draws

# Reporting thresholds for Pr(|beta_k| > delta); they do not enter the model.
CONFLICT_THRESHOLD = {Endpoint.BINARY: 0.5, Endpoint.CONTINUOUS: 2.0}
_LOG_2_OVER_PI = math.log(2.0 / math.pi)


@dataclass(frozen=True)
class PbmConfig:
    """``theta_prior`` is the prior of theta_CC on the analysis scale
    (N(0, 10^2) on the logit for binary, N(0, 100^2) continuous when None).
    ``flat_theta_prior`` replaces it by a flat prior (continuous only), which
    makes the sampler exactly equivariant to shifting every arm mean."""

    theta_prior: Optional[NormalParams] = None
    flat_theta_prior: bool = False
    conflict_threshold: Optional[float] = None


@dataclass
class PbmState:
    beta_bias: np.ndarray  # (draws, K)
    lam: np.ndarray  # (draws, K)
    tau_hs: np.ndarray  # (draws,)


def _log_half_cauchy_logscale(u: float) -> float:
    # density of log s when s ~ C+(0, 1)
    s2 = math.exp(2.0 * u)
    return _LOG_2_OVER_PI - math.log1p(s2) + u


def _theta_prior(data: StudySet, cfg: PbmConfig) -> NormalParams:
    if cfg.theta_prior is not None:
        return cfg.theta_prior
    return NormalParams(0.0, 10.0**2) if data.endpoint is Endpoint.BINARY else NormalParams(0.0, 100.0**2)


def _update_scales(rng, beta, log_lam, log_tau, lam_slices, tau_slice, adapt):
    K = beta.size
    for k in range(K):
        b2 = beta[k] * beta[k]

        def lam_target(u, b2=b2):
            if u < -50.0:
                return -math.inf
            s2 = math.exp(2.0 * (u + log_tau))
            return -0.5 * math.log(s2) - 0.5 * b2 / s2 + _log_half_cauchy_logscale(u)

        log_lam[k], _ = lam_slices[k].step(rng, log_lam[k], lam_target(log_lam[k]), lam_target, adapt)
    scaled = float(np.sum(beta * beta * np.exp(-2.0 * log_lam)))

    def tau_target(u):
        if u < -50.0:
            return -math.inf
        return -K * u - 0.5 * scaled * math.exp(-2.0 * u) + _log_half_cauchy_logscale(u)

    log_tau, _ = tau_slice.step(rng, log_tau, tau_target(log_tau), tau_target, adapt)
    return log_tau


def _binary_chain(seed_seq, spec: ChainSpec, data: StudySet, cfg: PbmConfig) -> dict:
    rng = make_rng(seed_seq)
    prior = _theta_prior(data, cfg)
    K = data.K
    ys = [a.y for a in data.arms]
    ns = [a.n for a in data.arms]
    cc = data.current_control
    theta = math.log((cc.y + 0.5) / (cc.n - cc.y + 0.5))
    beta = np.array([math.log((y + 0.5) / (n - y + 0.5)) for y, n in zip(ys, ns)]) - theta
    log_lam = np.zeros(K)
    log_tau = 0.0
    rw_theta, rw_shift = AdaptiveRW(0.5), AdaptiveRW(0.5)
    rw_beta = [AdaptiveRW(0.5) for _ in range(K)]
    lam_slices = [SliceStepper(1.0) for _ in range(K)]
    tau_slice = SliceStepper(1.0)

    def log_prior_theta(t):
        d = t - prior.m
        return -0.5 * d * d / prior.v

    keep = spec.n_keep
    out = {"theta_cc": np.empty(keep), "beta": np.empty((keep, K)), "log_lam": np.empty((keep, K)),
           "log_tau": np.empty(keep)}
    j = 0
    for it in range(spec.n_warmup + keep * spec.thin):
        adapt = it < spec.n_warmup
        if it == spec.n_warmup:
            for r in [rw_theta, rw_shift] + rw_beta:
                r.reset_counts()
        var_beta = np.exp(2.0 * (log_lam + log_tau))

        # theta_CC with biases fixed: every historical rate moves with it
        def theta_target(t):
            out_ = binom_loglik_logit(cc.y, cc.n, t) + log_prior_theta(t)
            for k in range(K):
                out_ += binom_loglik_logit(ys[k], ns[k], t + beta[k])
            return out_

        theta, _ = rw_theta.step(rng, theta, theta_target(theta), theta_target, adapt)

        # theta_CC with historical parameters fixed: biases absorb the move
        def shift_target(e):
            t = theta + e
            b = beta - e
            return (binom_loglik_logit(cc.y, cc.n, t) + log_prior_theta(t)
                    - 0.5 * float(np.sum(b * b / var_beta)))

        e, _ = rw_shift.step(rng, 0.0, shift_target(0.0), shift_target, adapt)
        if e != 0.0:
            theta += e
            beta = beta - e
        for k in range(K):
            y, n, v = ys[k], ns[k], var_beta[k]

            def beta_target(b, y=y, n=n, v=v):
                return binom_loglik_logit(y, n, theta + b) - 0.5 * b * b / v

            beta[k], _ = rw_beta[k].step(rng, beta[k], beta_target(beta[k]), beta_target, adapt)
        log_tau = _update_scales(rng, beta, log_lam, log_tau, lam_slices, tau_slice, adapt)
        if it >= spec.n_warmup and (it - spec.n_warmup) % spec.thin == spec.thin - 1:
            out["theta_cc"][j] = expit(theta)
            out["beta"][j] = beta
            out["log_lam"][j] = log_lam
            out["log_tau"][j] = log_tau
            j += 1
    out["accept"] = [r.acceptance_rate for r in [rw_theta, rw_shift] + rw_beta]
    return out


def _continuous_chain(seed_seq, spec: ChainSpec, data: StudySet, cfg: PbmConfig) -> dict:
    """Block Gibbs: (theta_CC, beta) jointly Gaussian given the shrinkage scales."""
    rng = make_rng(seed_seq)
    K = data.K
    prior = None if cfg.flat_theta_prior else _theta_prior(data, cfg)
    cc = data.current_control
    ybar = np.array([a.mean for a in data.arms])
    prec_h = np.array([1.0 / a.se**2 for a in data.arms])
    prec_cc = 1.0 / cc.se**2
    # unknowns x = (theta, beta_1..K); historical arm k observes theta + beta_k
    base = np.zeros((K + 1, K + 1))
    base[0, 0] = prec_cc + prec_h.sum() + (0.0 if prior is None else 1.0 / prior.v)
    base[0, 1:] = base[1:, 0] = prec_h
    base[1:, 1:] = np.diag(prec_h)
    rhs = np.concatenate(([prec_cc * cc.mean + prec_h @ ybar + (0.0 if prior is None else prior.m / prior.v)],
                          prec_h * ybar))
    beta = ybar - cc.mean
    log_lam = np.zeros(K)
    log_tau = 0.0
    lam_slices = [SliceStepper(1.0) for _ in range(K)]
    tau_slice = SliceStepper(1.0)
    keep = spec.n_keep
    out = {"theta_cc": np.empty(keep), "beta": np.empty((keep, K)), "log_lam": np.empty((keep, K)),
           "log_tau": np.empty(keep)}
    j = 0
    idx = np.arange(1, K + 1)
    for it in range(spec.n_warmup + keep * spec.thin):
        adapt = it < spec.n_warmup
        Q = base.copy()
        Q[idx, idx] += np.exp(-2.0 * (log_lam + log_tau))
        L = np.linalg.cholesky(Q)
        mean = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        x = mean + np.linalg.solve(L.T, rng.standard_normal(K + 1))
        theta, beta = x[0], x[1:]
        log_tau = _update_scales(rng, beta, log_lam, log_tau, lam_slices, tau_slice, adapt)
        if it >= spec.n_warmup and (it - spec.n_warmup) % spec.thin == spec.thin - 1:
            out["theta_cc"][j] = theta
            out["beta"][j] = beta
            out["log_lam"][j] = log_lam
            out["log_tau"][j] = log_tau
            j += 1
    out["accept"] = []
    return out


def fit_pbm_hs(data: StudySet, spec: ChainSpec = ChainSpec(), cfg: PbmConfig = PbmConfig()) -> PosteriorResult:
    """theta_Hk = theta_CC + beta_k with horseshoe-shrunk biases beta_k.

    Source summaries are bias draws and Pr(|beta_k| > delta): compatibility or
    conflict summaries, not borrowing amounts.
    """
    binary = data.endpoint is Endpoint.BINARY
    if cfg.flat_theta_prior and binary:
        raise ValueError("flat_theta_prior is only available for continuous data")
    chain_fn = _binary_chain if binary else _continuous_chain
    chains = run_chains(chain_fn, spec, data, cfg)
    theta = stack(chains, "theta_cc")
    beta = stack(chains, "beta")
    log_lam = stack(chains, "log_lam")
    log_tau = stack(chains, "log_tau")
    diag_in = {"theta_cc": theta, "log_tau_hs": log_tau}
    for k, label in enumerate(data.labels):
        diag_in[f"beta[{label}]"] = beta[:, :, k]
    delta = cfg.conflict_threshold if cfg.conflict_threshold is not None else CONFLICT_THRESHOLD[data.endpoint]
    beta_draws = beta.reshape(-1, data.K)
    conflict = (np.abs(beta_draws) > delta).mean(axis=0)
    scale = "logit" if binary else "endpoint units"
    return PosteriorResult(
        method="pbm_hs",
        endpoint=data.endpoint,
        source_labels=data.labels,
        theta_cc_draws=theta.reshape(-1),
        theta_ct_draws=treatment_draws(data, spec),
        source_summaries={
            "beta": SourceSummary("beta", f"posterior mean bias ({scale}; compatibility, not borrowing)",
                                  beta_draws.mean(axis=0), beta_draws),
            "p_conflict": SourceSummary("p_conflict", f"Pr(|beta_k| > {delta:g}) (conflict, not borrowing)",
                                        conflict, unit_interval=True),
        },
        diagnostics=diagnose(diag_in),
        metadata={"conflict_threshold": delta, "analysis_scale": scale,
                  "flat_theta_prior": cfg.flat_theta_prior,
                  "acceptance": np.mean([c["accept"] for c in chains], axis=0).tolist() if binary else []},
        state=PbmState(beta_draws, np.exp(log_lam.reshape(-1, data.K)), np.exp(log_tau.reshape(-1))),
    )
