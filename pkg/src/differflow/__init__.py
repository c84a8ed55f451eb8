"""Likelihood-based defect detection with a normalizing flow over multi-scale
convolutional image features."""

from .estimator import FlowAnomalyDetector, MultiScaleFeatureExtractor
from .flow import FlowModel, coupling_forward, coupling_inverse, flow_forward, flow_inverse, soft_clamp
from .metrics import auroc, roc_curve
from .training import Adam, DivergenceError, TrainConfig, TrainResult, nll, train

__all__ = [
    "Adam",
    "DivergenceError",
    "FlowAnomalyDetector",
    "FlowModel",
    "MultiScaleFeatureExtractor",
    "TrainConfig",
    "TrainResult",
    "auroc",
    "coupling_forward",
    "coupling_inverse",
    "flow_forward",
    "flow_inverse",
    "nll",
    "roc_curve",
    "soft_clamp",
    "train",
]

__version__ = "0.1.0"
