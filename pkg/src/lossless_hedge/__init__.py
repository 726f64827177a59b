"""Bounded-loss online prediction with confidence-function betting."""

from .combiner import (ComparisonTree, build_linear_tree, build_multiscale_tree, build_unbalanced_tree,
                       run_tree, windowed_regret_audit)
from .confidence import ConfidenceParams, Variant, check_drift_condition, derive_params, eval_g
from .estimators import HedgePredictor, TreeCombiner
from .predictor import run, simulate

__version__ = "0.1.0"

__all__ = [
    "ConfidenceParams",
    "Variant",
    "derive_params",
    "eval_g",
    "check_drift_condition",
    "run",
    "simulate",
    "ComparisonTree",
    "build_linear_tree",
    "build_multiscale_tree",
    "build_unbalanced_tree",
    "run_tree",
    "windowed_regret_audit",
    "HedgePredictor",
    "TreeCombiner",
]
