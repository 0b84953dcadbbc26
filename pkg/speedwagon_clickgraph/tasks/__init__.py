"""Shared task code."""

from .logs import DescribeLogTask, LogDescription, SplitLogTask, SplitResult
from .graphs import BuildGraphsTask, GraphReport
from .synthesis import GenerateSyntheticLogTask, SyntheticLogResult
from .training import (
    AblationVariantTask,
    EvaluateModelTask,
    EvaluationResult,
    TrainModelTask,
    TrainingSummary,
    VariantResult,
    WriteMetricsReportTask,
)
from .baselines import BaselineResult, FitBaselineTask

__all__ = [
    "DescribeLogTask",
    "LogDescription",
    "SplitLogTask",
    "SplitResult",
    "BuildGraphsTask",
    "GraphReport",
    "GenerateSyntheticLogTask",
    "SyntheticLogResult",
    "TrainModelTask",
    "TrainingSummary",
    "EvaluateModelTask",
    "EvaluationResult",
    "AblationVariantTask",
    "VariantResult",
    "WriteMetricsReportTask",
    "FitBaselineTask",
    "BaselineResult",
]
