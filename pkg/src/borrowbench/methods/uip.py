"""Unit information prior built from a weighted combination of historical arms."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..data import Endpoint, StudySet
from ..errors import DegeneratePrior, DegenerateRate
from ..inference import AdaptiveRW, ChainSpec, make_rng, run_chains
from .base import PosteriorResult, SourceSummary, diagnose, expit, stack, treatment_draws

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class UipConfig:
    """w ~ Dirichlet(nu), M ~ Uniform(0, m_upper).

    ``None`` gives nu_k = min(1, n_Hk / n_CC) for binary data, nu_k = 1 for
    continuous data, and m_upper = total historical sample size.
    """

    dirichlet_weights: Optional[Sequence[float]] = None
    m_upper: Optional[float] = None

    def __post_init__(self):
        if self.dirichlet_weights is not None and min(self.dirichlet_weights) <= 0:
            raise ValueError("Dirichlet weights must be positive")
        if self.m_upper is not None and not self.m_upper > 0:
            raise ValueError("m_upper must be positive")


def uip_moments(estimates: Sequence[float], unit_info: Sequence[float], w: Sequence[float],
                M: float) -> tuple[float, float]:
    """Prior mean sum_k w_k est_k and variance 1 / (M sum_k w_k I_k)."""
    est = np.asarray(estimates, dtype=float)
    info = np.asarray(unit_info, dtype=float)
    w = np.asarray(w, dtype=float)
    return float(w @ est), 1.0 / (M * float(w @ info))


def binary_unit_information(p: float) -> float:
    return 1.0 / (p * (1.0 - p))


def moment_match_beta(mean: float, var: float) -> Optional[tuple[float, float]]:
    """Beta(a, b) with the given mean and variance, or None when no beta has them."""
    s = mean * (1.0 - mean) / var - 1.0
    if not s > 0:
        return None
    return mean * s, (1.0 - mean) * s


def _lbeta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def historical_estimates(data: StudySet) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-source point estimates and unit information, plus the number of
    continuity-corrected binary rates."""
    if data.endpoint is Endpoint.BINARY:
        est, corrected = [], 0
        for a in data.arms:
            if a.y in (0, a.n):
                est.append((a.y + 0.5) / (a.n + 1.0))
                corrected += 1
            else:
                est.append(a.y / a.n)
        est = np.array(est)
        return est, 1.0 / (est * (1.0 - est)), corrected
    return np.array([a.mean for a in data.arms]), np.array([1.0 / a.sd**2 for a in data.arms]), 0


def simplex_from_logits(z: Sequence[float]) -> np.ndarray:
    """Stick-breaking map from R^(K-1) to the simplex; z = 0 gives equal weights."""
    K = len(z) + 1
    w = np.empty(K)
    rest = 1.0
    for k, zk in enumerate(z):
        v = expit(zk - math.log(K - 1 - k))
        w[k] = rest * v
        rest *= 1.0 - v
    w[-1] = rest
    return w


def _simplex_log_jacobian(z: Sequence[float]) -> float:
    K = len(z) + 1
    out = 0.0
    rest = 0.0
    for k, zk in enumerate(z):
        v = expit(zk - math.log(K - 1 - k))
        out += math.log(v) + math.log1p(-v) + rest
        rest += math.log1p(-v)
    return out


class _UipModel:
    def __init__(self, data: StudySet, cfg: UipConfig):
        self.binary = data.endpoint is Endpoint.BINARY
        self.est, self.info, self.n_corrected = historical_estimates(data)
        n_cc = data.n_cc
        if cfg.dirichlet_weights is not None:
            nu = np.asarray(cfg.dirichlet_weights, dtype=float)
            if nu.size != data.K:
                raise ValueError("need one Dirichlet weight per historical source")
        elif self.binary:
            nu = np.array([min(1.0, a.n / n_cc) for a in data.arms])
        else:
            nu = np.ones(data.K)
        self.nu = nu
        self.m_upper = cfg.m_upper if cfg.m_upper is not None else float(data.n_historical)
        cc = data.current_control
        self.cc = (cc.y, cc.n - cc.y) if self.binary else (cc.mean, cc.se**2)

    def prior(self, w: np.ndarray, M: float):
        """Conjugate prior parameters for theta_CC, and whether the beta fallback was used."""
        mean, var = uip_moments(self.est, self.info, w, M)
        if self.binary:
            ab = moment_match_beta(mean, var)
            if ab is None:
                return (1.0, 1.0), True
            return ab, False
        return (mean, var), False

    def log_marginal(self, params) -> float:
        p1, p2 = params
        if self.binary:
            return _lbeta(p1 + self.cc[0], p2 + self.cc[1]) - _lbeta(p1, p2)
        var = p2 + self.cc[1]
        d = self.cc[0] - p1
        return -0.5 * (_LOG_2PI + math.log(var) + d * d / var)

    def draw_theta(self, rng, params) -> float:
        p1, p2 = params
        if self.binary:
            return rng.beta(p1 + self.cc[0], p2 + self.cc[1])
        prec = 1.0 / p2 + 1.0 / self.cc[1]
        mean = (p1 / p2 + self.cc[0] / self.cc[1]) / prec
        return mean + rng.standard_normal() / math.sqrt(prec)

    def log_target(self, z: list[float], log_m: float) -> float:
        if log_m >= math.log(self.m_upper):
            return -math.inf
        w = simplex_from_logits(z)
        if np.any(w <= 0):
            return -math.inf
        params, _ = self.prior(w, math.exp(log_m))
        # Dirichlet density, stick-breaking Jacobian, uniform M on the log scale
        return (float((self.nu - 1.0) @ np.log(w)) + _simplex_log_jacobian(z) + log_m
                + self.log_marginal(params))


def _uip_chain(seed_seq, spec: ChainSpec, data: StudySet, cfg: UipConfig) -> dict:
    rng = make_rng(seed_seq)
    model = _UipModel(data, cfg)
    K = data.K
    z = [0.0] * (K - 1)
    log_m = math.log(model.m_upper / 2.0)
    upper = math.log(model.m_upper)
    rw_z = [AdaptiveRW(1.0) for _ in range(K - 1)]
    rw_m = AdaptiveRW(1.0)
    logp = model.log_target(z, log_m)
    keep = spec.n_keep
    out = {"theta_cc": np.empty(keep), "M": np.empty(keep), "w": np.empty((keep, K))}
    fallback = 0
    j = 0
    for it in range(spec.n_warmup + keep * spec.thin):
        adapt = it < spec.n_warmup
        if it == spec.n_warmup:
            for r in rw_z + [rw_m]:
                r.reset_counts()
        for k in range(K - 1):
            def target(x, k=k):
                zz = list(z)
                zz[k] = x
                return model.log_target(zz, log_m)

            z[k], logp = rw_z[k].step(rng, z[k], logp, target, adapt)

        def m_target(u):
            # reflect proposals past log(m_upper) back into the support
            if u > upper:
                u = 2.0 * upper - u
            return model.log_target(z, u)

        prop, logp = rw_m.step(rng, log_m, logp, m_target, adapt)
        log_m = 2.0 * upper - prop if prop > upper else prop
        w = simplex_from_logits(z)
        M = math.exp(log_m)
        params, fell_back = model.prior(w, M)
        theta = model.draw_theta(rng, params)
        if it >= spec.n_warmup and (it - spec.n_warmup) % spec.thin == spec.thin - 1:
            out["theta_cc"][j] = theta
            out["M"][j] = M
            out["w"][j] = w
            fallback += fell_back
            j += 1
    out["fallback"] = fallback
    out["accept"] = [r.acceptance_rate for r in rw_z + [rw_m]]
    return out


def fit_uip(data: StudySet, spec: ChainSpec = ChainSpec(), cfg: UipConfig = UipConfig()) -> PosteriorResult:
    """Posterior over (theta_CC, w, M) with theta_CC integrated out of the
    (w, M) updates and drawn conjugately. Source summaries are the prior
    contributions M * w_k, not borrowing amounts."""
    model = _UipModel(data, cfg)
    if model.n_corrected:
        warnings.warn(f"{model.n_corrected} historical rate(s) at 0 or 1 were continuity-corrected",
                      DegenerateRate, stacklevel=2)
    chains = run_chains(_uip_chain, spec, data, cfg)
    fallback = sum(c["fallback"] for c in chains)
    if fallback:
        warnings.warn(f"{fallback} draws used the Beta(1, 1) fallback prior", DegeneratePrior, stacklevel=2)
    theta = stack(chains, "theta_cc")
    M = stack(chains, "M")
    w = stack(chains, "w")
    diag_in = {"theta_cc": theta, "M": M}
    for k, label in enumerate(data.labels):
        diag_in[f"w[{label}]"] = w[:, :, k]
    contrib = (M[:, :, None] * w).reshape(-1, data.K)
    return PosteriorResult(
        method="uip",
        endpoint=data.endpoint,
        source_labels=data.labels,
        theta_cc_draws=theta.reshape(-1),
        theta_ct_draws=treatment_draws(data, spec),
        source_summaries={"m_w": SourceSummary(
            "m_w", "contribution to constructed prior (M * w_k)", contrib.mean(axis=0), contrib)},
        diagnostics=diagnose(diag_in),
        metadata={"dirichlet_weights": model.nu.tolist(), "m_upper": model.m_upper,
                  "n_continuity_corrected": model.n_corrected, "n_fallback_draws": int(fallback),
                  "acceptance": np.mean([c["accept"] for c in chains], axis=0).tolist()},
    )
