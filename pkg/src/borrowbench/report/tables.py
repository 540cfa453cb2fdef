"""Forest-plot rows and the source-level borrowing heatmap."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from ..errors import MissingEss, NoEligibleMethods
from ..ess import EssResult
from ..methods.base import METHODS, PosteriorResult

# Methods whose source summary is a posterior quantity on a 0-1 scale, and
# the summary that goes into the heatmap. MAP and DPM-MAP have no source
# summary; UIP (M * w_k) and PBM (bias terms) are not 0-1 borrowing scales.
HEATMAP_QUANTITY = {"dmpp": "gamma", "mem": "p_ex", "dpm": "sbi", "ddpm": "sbi"}

# Type-7 (linear interpolation) sample quantiles, numpy's default.
QUANTILE_METHOD = "linear"


@dataclass(frozen=True)
class ForestRow:
    method: str
    effect_mean: float
    ci_low: float
    ci_high: float
    ehss: Optional[float] = None


@dataclass(frozen=True)
class HeatmapMatrix:
    methods: list[str]
    sources: list[str]
    values: np.ndarray  # methods x sources
    semantics: dict[str, str]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.methods), len(self.sources)):
            raise ValueError("heatmap values must be methods x sources")
        if np.any((v < 0.0) | (v > 1.0)):
            raise ValueError("heatmap values must lie in [0, 1]")
        if set(self.semantics) != set(self.methods):
            raise ValueError("one semantics legend is required per method")
        object.__setattr__(self, "values", v)

    def records(self) -> list[dict]:
        return [{"method": m, "source": s, "value": float(self.values[i, j]), "semantics": self.semantics[m]}
                for i, m in enumerate(self.methods) for j, s in enumerate(self.sources)]


def _order_key(method: str) -> int:
    return METHODS.index(method) if method in METHODS else len(METHODS)


EssInput = Union[Sequence[Optional[EssResult]], Mapping[str, EssResult], None]


def forest_data(results: Sequence[PosteriorResult], ess_results: EssInput = None) -> list[ForestRow]:
    """One row per result: current_only first, then the canonical method order.

    ``ess_results`` is either aligned with ``results`` (None for current_only)
    or a mapping from method name to EssResult.
    """
    if ess_results is None:
        ess_results = {}
    if not isinstance(ess_results, Mapping):
        ess_results = list(ess_results)
        if len(ess_results) != len(results):
            raise ValueError("ess_results must align with results")
        ess_results = {r.method: e for r, e in zip(results, ess_results) if e is not None}
    rows = []
    for res in sorted(results, key=lambda r: _order_key(r.method)):
        draws = res.effect_draws
        lo, hi = np.quantile(draws, [0.025, 0.975], method=QUANTILE_METHOD)
        ehss = None
        if res.method != "current_only":
            ess = ess_results.get(res.method)
            if ess is None:
                raise MissingEss(f"no EssResult for borrowing method {res.method!r}")
            ehss = float(ess.ehss)
        rows.append(ForestRow(res.method, float(draws.mean()), float(lo), float(hi), ehss))
    return rows


def borrowing_heatmap_data(results: Sequence[PosteriorResult]) -> HeatmapMatrix:
    """Rows for the methods with a 0-1 source summary, in canonical order."""
    eligible = sorted((r for r in results if r.method in HEATMAP_QUANTITY), key=lambda r: _order_key(r.method))
    if not eligible:
        raise NoEligibleMethods("none of dmpp, mem, dpm, ddpm is among the results")
    sources = list(eligible[0].source_labels)
    rows, semantics = [], {}
    for res in eligible:
        if list(res.source_labels) != sources:
            raise ValueError("heatmap methods must share the same historical sources")
        summ = res.source_summaries[HEATMAP_QUANTITY[res.method]]
        vals = np.asarray(summ.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{res.method} source summary is not finite")
        # guard against round-off just outside the unit interval
        rows.append(np.clip(vals, 0.0, 1.0))
        semantics[res.method] = summ.semantics
    return HeatmapMatrix([r.method for r in eligible], sources, np.vstack(rows), semantics)


def finite_or_none(x: Optional[float]) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None
