"""Dirichlet process mixtures over control-arm parameters (DPM and DDPM) and
the shared-clustering borrowing index (SBI)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from ..conjugate import BetaParams, NormalParams
from ..data import Endpoint, StudySet
from ..errors import TooFewDraws
from ..inference import ChainSpec, SliceStepper, make_rng, run_chains
from .base import VAGUE_NORMAL, PosteriorResult, SourceSummary, diagnose, stack, treatment_draws

# Gamma(shape 1, scale 5) prior on every concentration parameter.
CONCENTRATION_SHAPE = 1.0
CONCENTRATION_SCALE = 5.0
MIN_SBI_DRAWS = 100
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DpConfig:
    """``concentration`` fixes M_DP (or both DDPM concentrations) instead of
    sampling it. ``base`` overrides the base distribution G0. ``truncation``
    and ``dependence`` apply to DDPM only. ``dependence`` sets how the
    current control's weights relate to the historical ones: "mixture"
    (eps ~ U(0, 1)), "independent" (eps = 0) or "shared" (eps = 1, which
    collapses DDPM onto a truncated DPM)."""

    concentration: Optional[float] = None
    base: Optional[BetaParams | NormalParams] = None
    truncation: int = 10
    dependence: str = "mixture"

    def __post_init__(self):
        if self.concentration is not None and not self.concentration > 0:
            raise ValueError("concentration must be positive")
        if self.truncation < 1:
            raise ValueError("truncation must be at least 1")
        if self.dependence not in ("mixture", "independent", "shared"):
            raise ValueError(f"unknown DDPM dependence {self.dependence!r}")


@dataclass
class DpState:
    """Cluster labels per kept iteration; column 0 is the current control,
    columns 1..K the historical sources."""

    assignments: np.ndarray  # (iterations, K + 1) int
    unit_labels: list[str]

    @property
    def n_clusters(self) -> np.ndarray:
        return np.array([np.unique(row).size for row in self.assignments])


def compute_sbi(state: DpState | np.ndarray) -> np.ndarray:
    """SBI_k = share of iterations in which H_k sits in the current control's cluster."""
    z = state.assignments if isinstance(state, DpState) else np.asarray(state)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError("assignments must be (iterations, K + 1) with K >= 1")
    if z.shape[0] < MIN_SBI_DRAWS:
        raise TooFewDraws(f"SBI needs at least {MIN_SBI_DRAWS} kept iterations, got {z.shape[0]}")
    return (z[:, 1:] == z[:, :1]).mean(axis=0)


def default_base(data: StudySet) -> BetaParams | NormalParams:
    """Beta(1, 1) for binary data, N(0, 100^2) for continuous data: the same
    weakly informative priors used for the treatment arm."""
    if data.endpoint is Endpoint.BINARY:
        return BetaParams(1.0, 1.0)
    return VAGUE_NORMAL


def _lbeta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


class _Units:
    """Control arms in unit order (CC first) with conjugate cluster algebra."""

    def __init__(self, data: StudySet, base):
        self.binary = data.endpoint is Endpoint.BINARY
        arms = [data.current_control] + data.arms
        self.N = len(arms)
        self.base = base
        if self.binary:
            self.s1 = np.array([a.y for a in arms], dtype=float)
            self.s2 = np.array([a.n - a.y for a in arms], dtype=float)
        else:
            prec = np.array([1.0 / a.se**2 for a in arms])
            self.s1 = prec
            self.s2 = prec * np.array([a.mean for a in arms])
            self.mean = np.array([a.mean for a in arms])
            self.var = 1.0 / prec

    def log_predictive(self, i: int, t1: float, t2: float) -> float:
        """log density of unit i given a cluster with summed statistics (t1, t2)."""
        if self.binary:
            a = self.base.a + t1
            b = self.base.b + t2
            return _lbeta(a + self.s1[i], b + self.s2[i]) - _lbeta(a, b)
        prec = 1.0 / self.base.v + t1
        m = (self.base.m / self.base.v + t2) / prec
        v = 1.0 / prec + self.var[i]
        d = self.mean[i] - m
        return -0.5 * (_LOG_2PI + math.log(v) + d * d / v)

    def log_predictive_all(self, i: int, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
        """Vectorized log_predictive over clusters."""
        if self.binary:
            a = self.base.a + t1
            b = self.base.b + t2
            y, f = self.s1[i], self.s2[i]
            return (gammaln(a + y) + gammaln(b + f) - gammaln(a + b + y + f)
                    - gammaln(a) - gammaln(b) + gammaln(a + b))
        prec = 1.0 / self.base.v + t1
        m = (self.base.m / self.base.v + t2) / prec
        v = 1.0 / prec + self.var[i]
        d = self.mean[i] - m
        return -0.5 * (_LOG_2PI + np.log(v) + d * d / v)

    def draw_param(self, rng, t1: float, t2: float) -> float:
        """Draw the cluster parameter from its conjugate posterior."""
        if self.binary:
            return rng.beta(self.base.a + t1, self.base.b + t2)
        prec = 1.0 / self.base.v + t1
        m = (self.base.m / self.base.v + t2) / prec
        return m + rng.standard_normal() / math.sqrt(prec)


def _categorical(rng, logp: np.ndarray) -> int:
    p = np.exp(logp - logp.max())
    cum = np.cumsum(p)
    return int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))


def _log_concentration_target(u: float, k: int, n: int) -> float:
    # p(M | k clusters among n units) with Gamma(1, scale 5) prior, on log M
    m = math.exp(u)
    return (k * u + math.lgamma(m) - math.lgamma(m + n)
            + (CONCENTRATION_SHAPE - 1.0) * u - m / CONCENTRATION_SCALE + u)


def _dpm_chain(seed_seq, spec: ChainSpec, data: StudySet, cfg: DpConfig, base) -> dict:
    rng = make_rng(seed_seq)
    units = _Units(data, base)
    N = units.N
    z = np.zeros(N, dtype=int)
    counts = np.zeros(N, dtype=int)
    t1 = np.zeros(N)
    t2 = np.zeros(N)
    counts[0] = N
    t1[0], t2[0] = units.s1.sum(), units.s2.sum()
    log_m = 0.0 if cfg.concentration is None else math.log(cfg.concentration)
    m_slice = SliceStepper(1.0)
    keep = spec.n_keep
    out = {"theta_cc": np.empty(keep), "z": np.empty((keep, N), dtype=int), "log_m": np.empty(keep)}
    j = 0
    for it in range(spec.n_warmup + keep * spec.thin):
        adapt = it < spec.n_warmup
        for i in range(N):
            c = z[i]
            counts[c] -= 1
            t1[c] -= units.s1[i]
            t2[c] -= units.s2[i]
            if counts[c] == 0:
                t1[c] = t2[c] = 0.0
            # one empty slot stands in for a new cluster
            empty = int(np.argmin(counts))
            with np.errstate(divide="ignore"):
                logp = np.log(counts) + units.log_predictive_all(i, t1, t2)
            logp[empty] = log_m + units.log_predictive(i, 0.0, 0.0)
            c = _categorical(rng, logp)
            z[i] = c
            counts[c] += 1
            t1[c] += units.s1[i]
            t2[c] += units.s2[i]
        if cfg.concentration is None:
            k = int(np.count_nonzero(counts))

            def target(u, k=k):
                return _log_concentration_target(u, k, N) if u > -30.0 else -math.inf

            log_m, _ = m_slice.step(rng, log_m, target(log_m), target, adapt)
        theta = units.draw_param(rng, t1[z[0]], t2[z[0]])
        if it >= spec.n_warmup and (it - spec.n_warmup) % spec.thin == spec.thin - 1:
            out["theta_cc"][j] = theta
            out["z"][j] = z
            out["log_m"][j] = log_m
            j += 1
    return out


def _stick_weights(v: np.ndarray) -> np.ndarray:
    rem = np.concatenate(([1.0], np.cumprod(1.0 - v)))
    return np.concatenate((v, [1.0])) * rem


def _draw_sticks(rng, counts: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    tail = counts[::-1].cumsum()[::-1]
    v = rng.beta(1.0 + counts[:-1], alpha + tail[1:])
    v = np.minimum(v, 1.0 - 1e-12)
    return v, _stick_weights(v)


def _log_sticks_marginal(counts: np.ndarray, alpha: float) -> float:
    """log p(assignment counts | alpha) for truncated stick-breaking with the
    Beta(1, alpha) sticks integrated out."""
    # plain floats: L is small and numpy call overhead dominates here
    c = counts.tolist()
    lg = math.lgamma
    out = (len(c) - 1) * (lg(1.0 + alpha) - lg(alpha))
    m = 0.0
    for k in range(len(c) - 1, 0, -1):
        m += c[k]
        n = c[k - 1]
        out += lg(1.0 + n) + lg(alpha + m) - lg(1.0 + n + alpha + m)
    return out


def _swap_labels(rng, z: np.ndarray, r: int, t1: np.ndarray, t2: np.ndarray, alpha: np.ndarray,
                 L: int) -> None:
    """Metropolis moves that exchange two atom labels.

    With atoms and sticks integrated out only the stick-breaking order
    matters, so the acceptance ratio is a ratio of count marginals.
    """
    def counts_of(zz):
        c = np.zeros((2, L))
        np.add.at(c[0], zz[1:], 1)
        c[r, zz[0]] += 1
        return c

    cur = counts_of(z)
    cur_lp = _log_sticks_marginal(cur[0], alpha[0]) + _log_sticks_marginal(cur[1], alpha[1])
    for _ in range(L):
        l, m = rng.choice(L, size=2, replace=False)
        if not (cur[:, l].any() or cur[:, m].any()):
            continue  # both atoms empty: the swap changes nothing
        zz = z.copy()
        zz[z == l] = m
        zz[z == m] = l
        new = counts_of(zz)
        new_lp = _log_sticks_marginal(new[0], alpha[0]) + _log_sticks_marginal(new[1], alpha[1])
        if math.log(rng.random()) < new_lp - cur_lp:
            z[:] = zz
            t1[[l, m]] = t1[[m, l]]
            t2[[l, m]] = t2[[m, l]]
            cur, cur_lp = new, new_lp


def _alpha_target(u: float, counts: np.ndarray) -> float:
    # Gamma(1, scale 5) prior on alpha, sampled on log alpha
    if u < -30.0 or u > 30.0:
        return -math.inf
    a = math.exp(u)
    return (_log_sticks_marginal(counts, a) + CONCENTRATION_SHAPE * u - a / CONCENTRATION_SCALE)


def _ddpm_chain(seed_seq, spec: ChainSpec, data: StudySet, cfg: DpConfig, base) -> dict:
    """Common atoms; historical units draw atoms from pi_H, the current control
    from eps * pi_H + (1 - eps) * pi_C. Both weight vectors are truncated
    stick-breaking with their own concentration."""
    rng = make_rng(seed_seq)
    units = _Units(data, base)
    N, L = units.N, cfg.truncation
    if cfg.dependence == "shared":
        eps_fixed = 1.0
    elif cfg.dependence == "independent":
        eps_fixed = 0.0
    else:
        eps_fixed = None
    eps = 0.5 if eps_fixed is None else eps_fixed
    alpha = np.full(2, 1.0 if cfg.concentration is None else cfg.concentration)
    alpha_slices = [SliceStepper(1.0), SliceStepper(1.0)]
    weights = np.full((2, L), 1.0 / L)  # rows: historical, current-control-specific
    z = np.zeros(N, dtype=int)
    r = 0  # 0: the current control follows pi_H, 1: it follows pi_C
    keep = spec.n_keep
    out = {"theta_cc": np.empty(keep), "z": np.empty((keep, N), dtype=int),
           "log_alpha": np.empty((keep, 2)), "eps": np.empty(keep), "weight_sum_error": 0.0}
    j = 0
    t1 = np.zeros(L)
    t2 = np.zeros(L)
    t1[0], t2[0] = units.s1.sum(), units.s2.sum()
    with np.errstate(divide="ignore"):
        for it in range(spec.n_warmup + keep * spec.thin):
            # assignments given weights, with the atoms integrated out
            logw = np.log(weights)
            if L > 1:
                for i in range(N):
                    c = z[i]
                    t1[c] -= units.s1[i]
                    t2[c] -= units.s2[i]
                    pred = units.log_predictive_all(i, t1, t2)
                    if i == 0:
                        logp = np.concatenate((math.log(eps) + logw[0] if eps > 0 else np.full(L, -np.inf),
                                               math.log1p(-eps) + logw[1] if eps < 1 else np.full(L, -np.inf)))
                        pick = _categorical(rng, logp + np.tile(pred, 2))
                        r, c = divmod(pick, L)
                    else:
                        c = _categorical(rng, logw[0] + pred)
                    z[i] = c
                    t1[c] += units.s1[i]
                    t2[c] += units.s2[i]
            elif eps_fixed is None:
                r = int(rng.random() >= eps)
            if L > 1:
                _swap_labels(rng, z, r, t1, t2, alpha, L)
            # weights, concentrations and the mixing proportion
            counts = np.zeros((2, L), dtype=int)
            np.add.at(counts[0], z[1:], 1)
            counts[r, z[0]] += 1
            adapt = it < spec.n_warmup
            for g in range(2):
                if L > 1:
                    if cfg.concentration is None:
                        # alpha with the sticks integrated out, then sticks given alpha

                        def target(u, g=g):
                            return _alpha_target(u, counts[g])

                        u = math.log(alpha[g])
                        u, _ = alpha_slices[g].step(rng, u, target(u), target, adapt)
                        alpha[g] = math.exp(u)
                    _, weights[g] = _draw_sticks(rng, counts[g], alpha[g])
                    out["weight_sum_error"] = max(out["weight_sum_error"], abs(weights[g].sum() - 1.0))
                else:
                    weights[g] = 1.0
            if eps_fixed is None:
                eps = rng.beta(1.0 + (r == 0), 1.0 + (r == 1))
            if it >= spec.n_warmup and (it - spec.n_warmup) % spec.thin == spec.thin - 1:
                # atoms given assignments; only the current control's atom is reported
                out["theta_cc"][j] = units.draw_param(rng, t1[z[0]], t2[z[0]])
                out["z"][j] = z
                out["log_alpha"][j] = np.log(alpha)
                out["eps"][j] = eps
                j += 1
    return out


def _result(method: str, data: StudySet, spec: ChainSpec, chains: list[dict], diag_in: dict,
            metadata: dict) -> PosteriorResult:
    z = np.concatenate([c["z"] for c in chains])
    state = DpState(z, [data.control_label] + data.labels)
    sbi = compute_sbi(state)
    theta = stack(chains, "theta_cc")
    return PosteriorResult(
        method=method,
        endpoint=data.endpoint,
        source_labels=data.labels,
        theta_cc_draws=theta.reshape(-1),
        theta_ct_draws=treatment_draws(data, spec),
        source_summaries={"sbi": SourceSummary("sbi", "shared-clustering borrowing index", sbi,
                                               unit_interval=True)},
        diagnostics=diagnose(dict(diag_in, theta_cc=theta)),
        metadata=metadata,
        state=state,
    )


def _base_meta(base) -> dict:
    if isinstance(base, BetaParams):
        return {"family": "beta", "a": base.a, "b": base.b}
    return {"family": "normal", "mean": base.m, "var": base.v}


def fit_dpm(data: StudySet, spec: ChainSpec = ChainSpec(), cfg: DpConfig = DpConfig()) -> PosteriorResult:
    """DP mixture over the K + 1 control parameters, sampled by collapsed
    Gibbs over cluster assignments (Chinese restaurant process form)."""
    base = cfg.base or default_base(data)
    chains = run_chains(_dpm_chain, spec, data, cfg, base)
    diag_in = {}
    if cfg.concentration is None:
        diag_in["log_m_dp"] = stack(chains, "log_m")
    meta = {"base": _base_meta(base),
            "concentration": "Gamma(shape 1, scale 5)" if cfg.concentration is None else cfg.concentration}
    return _result("dpm", data, spec, chains, diag_in, meta)


def fit_ddpm(data: StudySet, spec: ChainSpec = ChainSpec(), cfg: DpConfig = DpConfig()) -> PosteriorResult:
    """Dependent DP mixture: common atoms shared by all control arms; the
    current control's mixture weights are a random blend of the historical
    weights and its own stick-breaking weights."""
    base = cfg.base or default_base(data)
    chains = run_chains(_ddpm_chain, spec, data, cfg, base)
    diag_in = {}
    if cfg.concentration is None:
        la = stack(chains, "log_alpha")
        diag_in["log_alpha[historical]"] = la[:, :, 0]
        if cfg.dependence != "shared":
            diag_in["log_alpha[control]"] = la[:, :, 1]
    if cfg.dependence == "mixture":
        diag_in["eps"] = stack(chains, "eps")
    meta = {
        "base": _base_meta(base),
        "structure": {
            "construction": "common atoms",
            "truncation": cfg.truncation,
            "historical_weights": "pi_H, stick-breaking Beta(1, alpha_H)",
            "control_weights": {"mixture": "eps * pi_H + (1 - eps) * pi_C, eps ~ Uniform(0, 1)",
                                "independent": "pi_C",
                                "shared": "pi_H"}[cfg.dependence],
            "pi_C": "stick-breaking Beta(1, alpha_C)",
            "concentration": "Gamma(shape 1, scale 5)" if cfg.concentration is None else cfg.concentration,
        },
        "max_weight_sum_error": max(c["weight_sum_error"] for c in chains),
    }
    return _result("ddpm", data, spec, chains, diag_in, meta)
