"""Bayesian model averaging and instrumental-variable BMA (MC3-within-Gibbs)."""

__version__ = "0.1.0"

from .bma import (
    LinearDesign,
    PosteriorSummary,
    exact_bma,
    log_marginal_likelihood,
    mc3_sample,
)
from .config import PriorConfig, RunConfig, SamplerConfig
from .iv import IvbmaResult, draw_sigma, condition_outcome, run_ivbma
from .models import InclusionMask
from .pipeline import DesignMatrices, VariableSpec, build_design, build_from_files
from .report import EvidenceClass, classify_evidence, render_table

__all__ = [
    "DesignMatrices", "EvidenceClass", "InclusionMask", "IvbmaResult", "LinearDesign",
    "PosteriorSummary", "PriorConfig", "RunConfig", "SamplerConfig", "VariableSpec",
    "build_design", "build_from_files", "classify_evidence", "condition_outcome", "draw_sigma",
    "exact_bma", "log_marginal_likelihood", "mc3_sample", "render_table", "run_ivbma",
]
