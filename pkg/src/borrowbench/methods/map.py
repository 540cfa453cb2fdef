"""Meta-analytic predictive priors: MAP, robust MAP and the DPM-MAP variant.

All three run in two stages. A hierarchical model is fitted to the historical
arms only, its predictive distribution for a new trial parameter is
approximated by a finite mixture, and that mixture is updated conjugately
with the current control arm.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import betaln

from ..conjugate import BetaParams, NormalParams
from ..data import Endpoint, StudySet
from ..errors import BorrowWarning
from ..ess import MixtureApprox, fit_mixture_em
from ..inference import AdaptiveRW, ChainSpec, SliceStepper, make_rng, run_chains
from .base import (UNIFORM_BETA, VAGUE_NORMAL, PosteriorResult, binom_loglik_logit, diagnose, expit, stack,
                   treatment_draws)

# Scale used for the continuous ADAS-cog case: half of a typical SD of 6.77.
CONTINUOUS_TAU_SCALE = 6.77 / 2
_STAGE2_STREAM = 0x5746
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MapConfig:
    """``None`` fields take endpoint-specific defaults: tau scale 1 (logit)
    or 6.77/2 (continuous); mu prior N(0, 10^2) or N(0, 100^2); robust
    component Beta(1, 1) or N(0, 100^2)."""

    tau_prior_scale: Optional[float] = None
    mu_prior: Optional[NormalParams] = None
    mixture_components: int = 3
    robust_weight: float = 0.5
    robust_component: Optional[BetaParams | NormalParams] = None
    em_restarts: int = 20

    def __post_init__(self):
        if self.tau_prior_scale is not None and not self.tau_prior_scale > 0:
            raise ValueError("tau_prior_scale must be positive")
        if self.mixture_components < 1:
            raise ValueError("mixture_components must be at least 1")
        if not 0.0 <= self.robust_weight <= 1.0:
            raise ValueError("robust_weight must lie in [0, 1]")


@dataclass(frozen=True)
class DpmMapConfig:
    """Truncated stick-breaking mixture over between-trial scales."""

    truncation: int = 10
    stick_prior: tuple[float, float] = (1.0, 1.0)
    tau_component_scale: Optional[float] = None
    mu_prior: Optional[NormalParams] = None
    mixture_components: int = 3
    em_restarts: int = 20

    def __post_init__(self):
        # L = 1 is allowed: it collapses to the plain MAP model.
        if self.truncation < 1:
            raise ValueError("truncation must be at least 1")
        if min(self.stick_prior) <= 0:
            raise ValueError("stick prior shapes must be positive")


@dataclass
class MapState:
    prior_mixture: MixtureApprox
    posterior_mixture: MixtureApprox
    predictive_draws: np.ndarray = field(repr=False)


def _binary(data: StudySet) -> bool:
    return data.endpoint is Endpoint.BINARY


def _tau_scale(data: StudySet, scale: Optional[float]) -> float:
    if scale is not None:
        return scale
    return 1.0 if _binary(data) else CONTINUOUS_TAU_SCALE


def _mu_prior(data: StudySet, prior: Optional[NormalParams]) -> NormalParams:
    if prior is not None:
        return prior
    return NormalParams(0.0, 10.0**2) if _binary(data) else VAGUE_NORMAL


def _group_log_marginal(x: np.ndarray, var: np.ndarray, prior: NormalParams) -> float:
    """log of prod_k N(x_k; mu, var_k) integrated over mu ~ N(m, v)."""
    p = 1.0 / var
    P = p.sum()
    W = p @ x
    Q = p @ (x * x)
    m, v = prior.m, prior.v
    return float(-0.5 * (x.size * _LOG_2PI + np.log(var).sum()) - 0.5 * math.log1p(v * P)
                 - 0.5 * (Q + m * m / v - (W + m / v) ** 2 / (P + 1.0 / v)))


def _draw_mu(rng, x: np.ndarray, var: np.ndarray, prior: NormalParams) -> float:
    prec = 1.0 / prior.v + (1.0 / var).sum()
    mean = (prior.m / prior.v + (x / var).sum()) / prec
    return mean + rng.standard_normal() / math.sqrt(prec)


def _log_halfnormal_logscale(log_tau: float, scale: float) -> float:
    # density of log tau when tau ~ HN(scale), up to a constant
    t = math.exp(log_tau) / scale
    return -0.5 * t * t + log_tau


class _Historical:
    """Historical arms on the analysis scale."""

    def __init__(self, data: StudySet):
        self.binary = _binary(data)
        arms = data.arms
        if self.binary:
            self.y = [a.y for a in arms]
            self.n = [a.n for a in arms]
            # empirical logits with a half-count correction, used only for initial values
            self.init = np.array([math.log((a.y + 0.5) / (a.n - a.y + 0.5)) for a in arms])
        else:
            self.mean = np.array([a.mean for a in arms])
            self.var = np.array([a.se**2 for a in arms])
            self.init = self.mean.copy()
        self.K = len(arms)


def _map_chain(seed_seq, spec: ChainSpec, data: StudySet, tau_scale: float, mu_prior: NormalParams) -> dict:
    """Stage 1 of MAP; returns predictive draws of theta_new on the analysis scale."""
    rng = make_rng(seed_seq)
    h = _Historical(data)
    K = h.K
    theta = h.init.copy()
    mu = float(theta.mean())
    log_tau = math.log(tau_scale * 0.5)
    tau_slice = SliceStepper(1.0)
    rw = [AdaptiveRW(0.5) for _ in range(K)]
    keep = spec.n_keep
    out = {"theta_new": np.empty(keep), "mu": np.empty(keep), "log_tau": np.empty(keep)}
    j = 0
    for it in range(spec.n_warmup + keep * spec.thin):
        adapt = it < spec.n_warmup
        if it == spec.n_warmup:
            for r in rw:
                r.reset_counts()
        if h.binary:
            tau2 = math.exp(2 * log_tau)
            for k in range(K):
                y, n = h.y[k], h.n[k]

                def target(t, y=y, n=n):
                    d = t - mu
                    return binom_loglik_logit(y, n, t) - 0.5 * d * d / tau2

                theta[k], _ = rw[k].step(rng, theta[k], target(theta[k]), target, adapt)

            def tau_target(lt):
                if lt < -30.0:
                    return -math.inf
                return (_group_log_marginal(theta, np.full(K, math.exp(2 * lt)), mu_prior)
                        + _log_halfnormal_logscale(lt, tau_scale))

            log_tau, _ = tau_slice.step(rng, log_tau, tau_target(log_tau), tau_target, adapt)
            mu = _draw_mu(rng, theta, np.full(K, math.exp(2 * log_tau)), mu_prior)
        else:
            def tau_target(lt):
                if lt < -30.0:
                    return -math.inf
                return (_group_log_marginal(h.mean, h.var + math.exp(2 * lt), mu_prior)
                        + _log_halfnormal_logscale(lt, tau_scale))

            log_tau, _ = tau_slice.step(rng, log_tau, tau_target(log_tau), tau_target, adapt)
            mu = _draw_mu(rng, h.mean, h.var + math.exp(2 * log_tau), mu_prior)
        if it >= spec.n_warmup and (it - spec.n_warmup) % spec.thin == spec.thin - 1:
            out["theta_new"][j] = mu + math.exp(log_tau) * rng.standard_normal()
            out["mu"][j] = mu
            out["log_tau"][j] = log_tau
            j += 1
    out["accept"] = [r.acceptance_rate for r in rw] if h.binary else []
    return out


def _dpm_map_chain(seed_seq, spec: ChainSpec, data: StudySet, cfg: DpmMapConfig, tau_scale: float,
                   mu_prior: NormalParams) -> dict:
    """Stage 1 of DPM-MAP: each historical trial picks its heterogeneity scale
    from a truncated stick-breaking mixture of half-normal scales."""
    rng = make_rng(seed_seq)
    h = _Historical(data)
    K, L = h.K, cfg.truncation
    sa, sb = cfg.stick_prior
    theta = h.init.copy()
    mu = float(theta.mean())
    log_tau = np.log(tau_scale * np.linspace(0.25, 1.0, L))
    c = np.zeros(K, dtype=int)
    weights = np.full(L, 1.0 / L)
    slices = [SliceStepper(1.0) for _ in range(L)]
    rw = [AdaptiveRW(0.5) for _ in range(K)]
    keep = spec.n_keep
    out = {"theta_new": np.empty(keep), "mu": np.empty(keep), "weight_sum_error": 0.0}
    j = 0
    for it in range(spec.n_warmup + keep * spec.thin):
        adapt = it < spec.n_warmup
        if it == spec.n_warmup:
            for r in rw:
                r.reset_counts()
        tau2 = np.exp(2 * log_tau)
        if h.binary:
            for k in range(K):
                y, n, t2 = h.y[k], h.n[k], tau2[c[k]]

                def target(t, y=y, n=n, t2=t2):
                    d = t - mu
                    return binom_loglik_logit(y, n, t) - 0.5 * d * d / t2

                theta[k], _ = rw[k].step(rng, theta[k], target(theta[k]), target, adapt)
            x, base_var = theta, np.zeros(K)
        else:
            x, base_var = h.mean, h.var
        # scale assignments
        if L > 1:
            var = base_var[:, None] + tau2[None, :]
            logp = np.log(weights)[None, :] - 0.5 * (np.log(var) + (x - mu)[:, None] ** 2 / var)
            logp -= logp.max(axis=1, keepdims=True)
            p = np.exp(logp)
            cum = np.cumsum(p, axis=1)
            u = rng.random(K) * cum[:, -1]
            c = (cum < u[:, None]).sum(axis=1)
            counts = np.bincount(c, minlength=L)
            tail = counts[::-1].cumsum()[::-1]
            v = rng.beta(sa + counts[:-1], sb + tail[1:])
            rem = np.concatenate(([1.0], np.cumprod(1.0 - v)))
            weights = np.concatenate((v, [1.0])) * rem
            out["weight_sum_error"] = max(out["weight_sum_error"], abs(weights.sum() - 1.0))
            weights = np.maximum(weights, 1e-300)
        # component scales
        for l in range(L):
            members = c == l
            xm, bv = x[members], base_var[members]

            def tau_target(lt, xm=xm, bv=bv):
                if lt < -30.0:
                    return -math.inf
                var = bv + math.exp(2 * lt)
                r = xm - mu
                return float(-0.5 * (np.log(var).sum() + (r * r / var).sum())) + _log_halfnormal_logscale(lt, tau_scale)

            log_tau[l], _ = slices[l].step(rng, log_tau[l], tau_target(log_tau[l]), tau_target, adapt)
        mu = _draw_mu(rng, x, base_var + np.exp(2 * log_tau[c]), mu_prior)
        if it >= spec.n_warmup and (it - spec.n_warmup) % spec.thin == spec.thin - 1:
            l_new = rng.choice(L, p=weights / weights.sum()) if L > 1 else 0
            out["theta_new"][j] = mu + math.exp(log_tau[l_new]) * rng.standard_normal()
            out["mu"][j] = mu
            j += 1
    out["accept"] = [r.acceptance_rate for r in rw] if h.binary else []
    return out


def mixture_posterior(prior: MixtureApprox, data: StudySet) -> MixtureApprox:
    """Conjugate update of a beta or normal mixture prior with the current control."""
    cc = data.current_control
    a, b = prior.params[:, 0], prior.params[:, 1]
    if prior.family == "beta":
        f = cc.n - cc.y
        logw = np.log(prior.weights) + betaln(a + cc.y, b + f) - betaln(a, b)
        params = np.column_stack([a + cc.y, b + f])
    else:
        se2 = cc.se**2
        tot = b + se2
        logw = np.log(prior.weights) - 0.5 * (np.log(tot) + (cc.mean - a) ** 2 / tot)
        post_var = 1.0 / (1.0 / b + 1.0 / se2)
        params = np.column_stack([post_var * (a / b + cc.mean / se2), post_var])
    w = np.exp(logw - logw.max())
    w /= w.sum()
    keep = w > 0
    return MixtureApprox(prior.family, w[keep] / w[keep].sum(), params[keep])


def _robustify(prior: MixtureApprox, weight: float, component) -> MixtureApprox:
    if weight == 0.0:
        return prior
    robust = [[component.a, component.b]] if prior.family == "beta" else [[component.m, component.v]]
    if weight == 1.0:
        return MixtureApprox(prior.family, np.array([1.0]), np.array(robust))
    return MixtureApprox(prior.family, np.append((1.0 - weight) * prior.weights, weight),
                         np.vstack([prior.params, robust]))


def _predictive_mixture(data: StudySet, theta_new: np.ndarray, k: int, restarts: int, seed: int) -> MixtureApprox:
    if _binary(data):
        p = np.clip(np.array([expit(t) for t in theta_new]), 1e-12, 1.0 - 1e-12)
        return fit_mixture_em(p, "beta", k=k, restarts=restarts, seed=seed)
    return fit_mixture_em(theta_new, "normal", k=k, restarts=restarts, seed=seed)


def _stage2(method: str, data: StudySet, spec: ChainSpec, prior: MixtureApprox, predictive: np.ndarray,
            diag_in: dict, metadata: dict) -> PosteriorResult:
    post = mixture_posterior(prior, data)
    chains = []
    for c in range(spec.n_chains):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(spec.seed), _STAGE2_STREAM, c])))
        chains.append(post.sample(rng, spec.n_keep))
    chains = np.stack(chains)
    diag_in = dict(diag_in, theta_cc=chains)

    def mix_dict(m: MixtureApprox) -> dict:
        return {"family": m.family, "weights": m.weights.tolist(), "params": m.params.tolist()}

    metadata = dict(metadata, prior_mixture=mix_dict(prior), posterior_mixture=mix_dict(post))
    return PosteriorResult(
        method=method,
        endpoint=data.endpoint,
        source_labels=data.labels,
        theta_cc_draws=chains.reshape(-1),
        theta_ct_draws=treatment_draws(data, spec),
        diagnostics=diagnose(diag_in),
        metadata=metadata,
        state=MapState(prior, post, predictive),
    )


def _fit_map_prior(data: StudySet, spec: ChainSpec, cfg: MapConfig):
    if data.K == 1:
        warnings.warn("MAP with a single historical source cannot estimate heterogeneity", BorrowWarning,
                      stacklevel=3)
    tau_scale = _tau_scale(data, cfg.tau_prior_scale)
    mu_prior = _mu_prior(data, cfg.mu_prior)
    chains = run_chains(_map_chain, spec, data, tau_scale, mu_prior)
    predictive = stack(chains, "theta_new")
    prior = _predictive_mixture(data, predictive.reshape(-1), cfg.mixture_components, cfg.em_restarts, spec.seed)
    diag_in = {"mu_ma": stack(chains, "mu"), "log_tau_ma": stack(chains, "log_tau")}
    meta = {"tau_prior_scale": tau_scale, "mu_prior": [mu_prior.m, mu_prior.v]}
    return prior, predictive, diag_in, meta


def fit_map(data: StudySet, spec: ChainSpec = ChainSpec(), cfg: MapConfig = MapConfig()) -> PosteriorResult:
    """MAP prior from a normal hierarchical model, mixture-approximated and
    updated with the current control. No source-level summaries exist."""
    prior, predictive, diag_in, meta = _fit_map_prior(data, spec, cfg)
    return _stage2("map", data, spec, prior, predictive, diag_in, meta)


def fit_robust_map(data: StudySet, spec: ChainSpec = ChainSpec(), cfg: MapConfig = MapConfig()) -> PosteriorResult:
    """MAP prior mixed with a vague robust component of weight w_R."""
    prior, predictive, diag_in, meta = _fit_map_prior(data, spec, cfg)
    component = cfg.robust_component or (UNIFORM_BETA if _binary(data) else VAGUE_NORMAL)
    robust = _robustify(prior, cfg.robust_weight, component)
    meta = dict(meta, robust_weight=cfg.robust_weight, robust_component=repr(component))
    return _stage2("robust_map", data, spec, robust, predictive, diag_in, meta)


def fit_dpm_map(data: StudySet, spec: ChainSpec = ChainSpec(), cfg: DpmMapConfig = DpmMapConfig()) -> PosteriorResult:
    """MAP with trial-specific heterogeneity scales drawn from a truncated
    stick-breaking mixture."""
    tau_scale = _tau_scale(data, cfg.tau_component_scale)
    mu_prior = _mu_prior(data, cfg.mu_prior)
    chains = run_chains(_dpm_map_chain, spec, data, cfg, tau_scale, mu_prior)
    predictive = stack(chains, "theta_new")
    prior = _predictive_mixture(data, predictive.reshape(-1), cfg.mixture_components, cfg.em_restarts, spec.seed)
    meta = {"truncation": cfg.truncation, "stick_prior": list(cfg.stick_prior), "tau_component_scale": tau_scale,
            "mu_prior": [mu_prior.m, mu_prior.v],
            "max_weight_sum_error": max(c["weight_sum_error"] for c in chains)}
    return _stage2("dpm_map", data, spec, prior, predictive, {"mu": stack(chains, "mu")}, meta)
