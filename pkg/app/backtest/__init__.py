"""Experiment harness: training, evaluation, cross-topology matrix, CLI.

The same `StructuralRNN.forward_window` code path runs in training and in
every evaluation; baselines are scored on exactly the same windows.
"""

HARNESS_VERSION = "1.0.0"

from .harness import cross_matrix, evaluate, rmse  # noqa: E402
from .models import EvalReport, EvalResult, TrainHistory  # noqa: E402

__all__ = ["cross_matrix", "evaluate", "rmse", "EvalReport", "EvalResult", "TrainHistory", "HARNESS_VERSION"]
