"""Adaptive fast multipole evaluation of Rotne-Prager-Yamakawa mobility products."""

from .evaluator import AccuracySetting, EvaluationReport, evaluate
from .rpy import RPYParams, direct_rpy_matvec
from .tree import BeadSet

__all__ = ["AccuracySetting", "BeadSet", "EvaluationReport", "RPYParams", "direct_rpy_matvec", "evaluate"]
