"""Assemble a serializable report from method runs."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from ..data import StudySet, serialize
from ..errors import NoEligibleMethods
from .tables import ForestRow, HeatmapMatrix, borrowing_heatmap_data, forest_data

FORMAT_VERSION = 1


@dataclass
class Report:
    rows: list[ForestRow]
    heatmap: Optional[HeatmapMatrix]
    methods: dict[str, dict[str, Any]] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    dataset: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        heat = None
        if self.heatmap is not None:
            heat = {"methods": self.heatmap.methods, "sources": self.heatmap.sources,
                    "values": self.heatmap.values, "semantics": self.heatmap.semantics}
        return jsonable({
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "config": self.config,
            "dataset": self.dataset,
            "forest": [dataclasses.asdict(r) for r in self.rows],
            "heatmap": heat,
            "methods": self.methods,
        })


def jsonable(obj: Any) -> Any:
    """Convert to plain JSON types; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, enum.Enum):
        return jsonable(obj.value)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.repr})
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _method_entry(run) -> dict[str, Any]:
    res = run.result
    entry: dict[str, Any] = {
        "n_draws": res.n_draws,
        "max_rhat": res.max_rhat(),
        "min_mc_ess": res.min_mc_ess(),
        "diagnostics": res.diagnostics,
        "source_summaries": {
            name: {"quantity": s.quantity, "semantics": s.semantics, "unit_interval": s.unit_interval,
                   "sources": s.table(res.source_labels)}
            for name, s in res.source_summaries.items()},
        "metadata": res.metadata,
    }
    if run.ess is not None:
        entry["ess"] = run.ess
    if run.mixture is not None:
        entry["mixture"] = {"family": run.mixture.family, "weights": run.mixture.weights,
                            "params": run.mixture.params, "fit_loglik": run.mixture.fit_loglik}
    return entry


def build_report(runs: Sequence, data: Optional[StudySet] = None, config: Optional[dict] = None,
                 seed: Optional[int] = None, dataset_name: Optional[str] = None) -> Report:
    """Build a report from ``MethodRun`` objects (result plus optional EHSS)."""
    results = [r.result for r in runs]
    rows = forest_data(results, [r.ess for r in runs])
    try:
        heat = borrowing_heatmap_data(results)
    except NoEligibleMethods:
        heat = None
    dataset: dict[str, Any] = {}
    if data is not None:
        dataset = {"name": dataset_name, "endpoint": data.endpoint.value, "csv": serialize(data)}
    order = {row.method: i for i, row in enumerate(rows)}
    methods = {r.method: _method_entry(r) for r in sorted(runs, key=lambda r: order[r.method])}
    return Report(rows, heat, methods, dict(config or {}), seed, dataset)
