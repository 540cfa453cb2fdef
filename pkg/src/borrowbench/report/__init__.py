"""Forest rows, borrowing heatmap and report serialization."""

from .document import Report, build_report, jsonable
from .emit import FORMATS, emit, forest_csv, heatmap_csv, results_json
from .tables import (HEATMAP_QUANTITY, QUANTILE_METHOD, ForestRow, HeatmapMatrix, borrowing_heatmap_data,
                     forest_data)

__all__ = ["FORMATS", "HEATMAP_QUANTITY", "QUANTILE_METHOD", "ForestRow", "HeatmapMatrix", "Report",
           "borrowing_heatmap_data", "build_report", "emit", "forest_csv", "forest_data", "heatmap_csv",
           "jsonable", "results_json"]
