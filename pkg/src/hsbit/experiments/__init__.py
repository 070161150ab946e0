"""Training, evaluation and reporting for the three encoding experiments."""

from .metrics import (
    CategoryMetrics,
    OverlapComposition,
    confusion_matrix,
    evaluate,
    evaluate_predictions,
    f1_score,
    macro_average,
    overlap_composition,
    overlap_composition_analysis,
    pooled_two_way,
)
from .presets import DISPLAY_NAMES, PRESETS, ExperimentPreset, get_preset
from .report import RunResult, merged_table, read_report, report_csv, report_rows, run_preset
from .train import TrainHistory, train

__all__ = [
    "DISPLAY_NAMES", "PRESETS", "CategoryMetrics", "ExperimentPreset", "OverlapComposition",
    "RunResult", "TrainHistory", "confusion_matrix", "evaluate", "evaluate_predictions",
    "f1_score", "get_preset", "macro_average", "merged_table", "overlap_composition",
    "overlap_composition_analysis", "pooled_two_way", "read_report", "report_csv",
    "report_rows", "run_preset", "train",
]
