from .bench import BenchmarkResult, benchmark, hardware_string
from .detection import ALL, DEFAULT_IOU_THRESHOLDS, RANGE_BUCKETS, APResult, ap_detection, interpolated_ap, mean_ap
from .pointwise import ClassificationScores, average_precision, pointwise_metrics, regression_metrics
from .report import MetricReport, evaluate, evaluate_detection, evaluate_point_tasks
from .sweep import DEFAULT_FACTORS, robustness_sweep, sweep_csv

__all__ = [
    "ALL",
    "APResult",
    "BenchmarkResult",
    "ClassificationScores",
    "DEFAULT_FACTORS",
    "DEFAULT_IOU_THRESHOLDS",
    "MetricReport",
    "RANGE_BUCKETS",
    "ap_detection",
    "average_precision",
    "benchmark",
    "evaluate",
    "evaluate_detection",
    "evaluate_point_tasks",
    "hardware_string",
    "interpolated_ap",
    "mean_ap",
    "pointwise_metrics",
    "regression_metrics",
    "robustness_sweep",
    "sweep_csv",
]
