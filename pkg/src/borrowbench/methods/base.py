"""Result container and helpers shared by every borrowing method."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ..conjugate import BetaParams, NormalParams, beta_posterior_update, normal_posterior_update
from ..data import Endpoint, StudySet
from ..inference import ChainSpec, chain_ess, rhat

METHODS = ("current_only", "map", "robust_map", "dpm_map", "dmpp", "uip", "pbm_hs", "mem", "dpm", "ddpm")
# Figure order for `--methods all`.
CANONICAL_ORDER = ("current_only", "map", "dpm_map", "dmpp", "uip", "pbm_hs", "mem", "dpm", "ddpm")

VAGUE_NORMAL = NormalParams(0.0, 100.0**2)
UNIFORM_BETA = BetaParams(1.0, 1.0)

# Arbitrary fixed stream tag so the treatment arm never shares draws with a
# control-arm chain but is identical across methods for one seed.
_TREATMENT_STREAM = 0x7EA7


@dataclass
class SourceSummary:
    """Per-source posterior quantity, in historical-source order.

    ``values`` is the point summary shown in reports (posterior mean or
    probability); ``draws`` (iterations x sources) is kept when the quantity
    has a posterior distribution.
    """

    quantity: str
    semantics: str
    values: np.ndarray
    draws: Optional[np.ndarray] = None
    unit_interval: bool = False

    def table(self, labels: list[str]) -> list[dict[str, Any]]:
        rows = []
        for k, label in enumerate(labels):
            row = {"source": label, "value": float(self.values[k])}
            if self.draws is not None:
                d = self.draws[:, k]
                row.update(mean=float(d.mean()), median=float(np.median(d)),
                           ci_low=float(np.quantile(d, 0.025)), ci_high=float(np.quantile(d, 0.975)))
            rows.append(row)
        return rows


@dataclass
class PosteriorResult:
    method: str
    endpoint: Endpoint
    source_labels: list[str]
    theta_cc_draws: np.ndarray
    theta_ct_draws: np.ndarray
    source_summaries: dict[str, SourceSummary] = field(default_factory=dict)
    diagnostics: dict[str, dict[str, float]] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)
    state: Any = None

    def __post_init__(self):
        self.theta_cc_draws = np.asarray(self.theta_cc_draws, dtype=float)
        self.theta_ct_draws = np.asarray(self.theta_ct_draws, dtype=float)
        if self.theta_cc_draws.shape != self.theta_ct_draws.shape:
            raise ValueError("control and treatment draw sequences must have equal length")
        self.effect_draws = self.theta_ct_draws - self.theta_cc_draws

    @property
    def n_draws(self) -> int:
        return self.theta_cc_draws.size

    def effect_summary(self) -> tuple[float, float, float]:
        lo, hi = np.quantile(self.effect_draws, [0.025, 0.975])
        return float(self.effect_draws.mean()), float(lo), float(hi)

    def max_rhat(self) -> float:
        vals = [d["rhat"] for d in self.diagnostics.values() if math.isfinite(d.get("rhat", float("nan")))]
        return max(vals) if vals else float("nan")

    def min_mc_ess(self) -> float:
        vals = [d["mc_ess"] for d in self.diagnostics.values() if "mc_ess" in d]
        return min(vals) if vals else float("nan")


def treatment_draws(study: StudySet, spec: ChainSpec) -> np.ndarray:
    """Exact conjugate posterior draws for the treatment arm.

    Binary: Beta(1, 1) prior. Continuous: N(0, 100^2) prior with the arm SE
    treated as known.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(spec.seed), _TREATMENT_STREAM])))
    arm = study.current_treatment
    size = spec.n_total
    if study.endpoint is Endpoint.BINARY:
        post = beta_posterior_update(UNIFORM_BETA, arm.n, arm.y)
        return rng.beta(post.a, post.b, size)
    post = normal_posterior_update(VAGUE_NORMAL, arm.mean, arm.se)
    return rng.normal(post.m, math.sqrt(post.v), size)


def diagnose(chains: dict[str, np.ndarray]) -> dict[str, dict[str, float]]:
    """R-hat and MC-ESS for each (chain, iteration) array."""
    out = {}
    for name, arr in chains.items():
        arr = np.asarray(arr, dtype=float)
        entry = {"mc_ess": chain_ess(arr)}
        entry["rhat"] = rhat(arr) if arr.shape[0] >= 2 else float("nan")
        out[name] = entry
    return out


def stack(chains: list[dict], key: str) -> np.ndarray:
    return np.stack([c[key] for c in chains])


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def log1pexp(x: float) -> float:
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def binom_loglik_logit(y: int, n: int, eta: float) -> float:
    """y*log(p) + (n-y)*log(1-p) with p = expit(eta), without the coefficient."""
    return y * eta - n * log1pexp(eta)
