"""Black-box attribution maps and patch interactions from HSIC sensitivity analysis."""

from .design import MaskDesign, exhaustive_design, sample_bernoulli_masks, sample_lhs_masks
from .hsic import (
    AttributionResult,
    HSICAnalysis,
    InteractionMatrix,
    attribute,
    hsic_estimate,
    hsic_subset,
    interaction,
    interaction_matrix,
)
from .kernel import OutputKernel
from .model import ModelEndpoint, TransportError, evaluate_batch
from .perturb import PerturbConfig
from .pipeline import explain

__all__ = [
    "AttributionResult",
    "HSICAnalysis",
    "InteractionMatrix",
    "MaskDesign",
    "ModelEndpoint",
    "OutputKernel",
    "PerturbConfig",
    "TransportError",
    "attribute",
    "evaluate_batch",
    "exhaustive_design",
    "explain",
    "hsic_estimate",
    "hsic_subset",
    "interaction",
    "interaction_matrix",
    "sample_bernoulli_masks",
    "sample_lhs_masks",
]
