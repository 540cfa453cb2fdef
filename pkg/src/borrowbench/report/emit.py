"""Write reports as JSON, CSV or SVG."""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Iterable, Union

from ..errors import IoFailure
from .document import Report
from .tables import finite_or_none

FORMATS = ("json", "csv", "svg")
RESULTS_JSON = "results.json"
FOREST_CSV = "forest.csv"
HEATMAP_CSV = "heatmap.csv"
FOREST_SVG = "forest.svg"
HEATMAP_SVG = "heatmap.svg"


def _g6(x) -> str:
    x = finite_or_none(x)
    return "" if x is None else f"{x:.6g}"


def results_json(report: Report) -> str:
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


def forest_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "effect_mean", "ci_low", "ci_high", "ehss"])
    for r in report.rows:
        w.writerow([r.method, _g6(r.effect_mean), _g6(r.ci_low), _g6(r.ci_high), _g6(r.ehss)])
    return buf.getvalue()


def heatmap_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "source", "value", "semantics"])
    if report.heatmap is not None:
        for rec in report.heatmap.records():
            w.writerow([rec["method"], rec["source"], _g6(rec["value"]), rec["semantics"]])
    return buf.getvalue()


def _write_text(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit(report: Report, formats: Union[str, Iterable[str]], destination: Union[str, os.PathLike]) -> list[Path]:
    """Write ``report`` into directory ``destination``; returns written paths."""
    if isinstance(formats, str):
        formats = [f.strip() for f in formats.split(",") if f.strip()]
    formats = list(dict.fromkeys(formats))
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise ValueError(f"unknown output format(s): {', '.join(unknown)}")
    dest = Path(destination)
    try:
        dest.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create output directory {dest}: {exc}") from exc
    written = []
    for fmt in formats:
        if fmt == "json":
            _write_text(dest / RESULTS_JSON, results_json(report))
            written.append(dest / RESULTS_JSON)
        elif fmt == "csv":
            _write_text(dest / FOREST_CSV, forest_csv(report))
            _write_text(dest / HEATMAP_CSV, heatmap_csv(report))
            written += [dest / FOREST_CSV, dest / HEATMAP_CSV]
        else:
            from .plots import forest_svg, heatmap_svg

            _write_text(dest / FOREST_SVG, forest_svg(report.rows))
            written.append(dest / FOREST_SVG)
            if report.heatmap is not None:
                _write_text(dest / HEATMAP_SVG, heatmap_svg(report.heatmap))
                written.append(dest / HEATMAP_SVG)
    return written
