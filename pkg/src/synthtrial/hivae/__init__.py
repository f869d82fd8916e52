"""Heterogeneous-type VAE with censored survival heads."""

from .config import PIECEWISE, SURVIVAL_HEADS, WEIBULL, HiVaeConfig
from .model import Batch, ElboTerms, Feature, HiVaeModel, ModelError
from .sampling import (
    POSTERIOR,
    PRIOR,
    GeneratedArm,
    generate,
    identity_decoder,
    sample_posterior,
    sample_prior,
)
from .training import TrainingDivergence, TrainResult, train

__all__ = [
    "PIECEWISE",
    "POSTERIOR",
    "PRIOR",
    "SURVIVAL_HEADS",
    "WEIBULL",
    "Batch",
    "ElboTerms",
    "Feature",
    "GeneratedArm",
    "HiVaeConfig",
    "HiVaeModel",
    "ModelError",
    "TrainResult",
    "TrainingDivergence",
    "generate",
    "identity_decoder",
    "sample_posterior",
    "sample_prior",
    "train",
]
