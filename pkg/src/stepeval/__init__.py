"""Diagnostic evaluation of multi-step reasoning over sub-question DAGs."""

from .models import (
    AuxiliaryReasoningSet,
    MainQuestion,
    PathSet,
    ReasoningPath,
    SamplingParams,
    SubQuestion,
    topo_order,
    validate_ars,
)
from .consistency import AnswerEquivalence, compute_consistency, equivalent
from .diagnostics import (
    PathDiagnostics,
    RegionConfig,
    classify_region,
    diagnose_pathset,
    first_failure_step,
    improvement_curve,
    threshold_sweep,
)
from .execution import SamplingPlan, run_baseline, run_path, run_pathset

__all__ = [
    "AnswerEquivalence",
    "AuxiliaryReasoningSet",
    "MainQuestion",
    "PathDiagnostics",
    "PathSet",
    "ReasoningPath",
    "RegionConfig",
    "SamplingParams",
    "SamplingPlan",
    "SubQuestion",
    "classify_region",
    "compute_consistency",
    "diagnose_pathset",
    "equivalent",
    "first_failure_step",
    "improvement_curve",
    "run_baseline",
    "run_path",
    "run_pathset",
    "threshold_sweep",
    "topo_order",
    "validate_ars",
]
