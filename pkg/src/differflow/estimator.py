"""Scikit-learn style wrappers around the flow detector.

`FlowAnomalyDetector` is a one-class estimator over feature vectors
(fit on normal samples only); `MultiScaleFeatureExtractor` is a stateless
transformer turning images into feature vectors, so the two compose in a
standard Pipeline.
"""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin, TransformerMixin

from .detect import classify
from .extractor import ConvNetSpec, MultiScaleConfig, extract, toy_extractor
from .training import TrainConfig, model_nll, train


def check_feature_matrix(X, *, dim: int | None = None, name: str = "X") -> np.ndarray:
    """Validate a dense (n_samples, n_features) float matrix."""
    X = np.asarray(X)
    if X.dtype not in (np.float32, np.float64):
        X = X.astype(np.float32)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or Inf")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {dim}")
    return X


class FlowAnomalyDetector(OutlierMixin, BaseEstimator):
    """One-class detector: density of normal feature vectors via a flow.

    The anomaly score of a sample is its negative log-likelihood under the
    fitted flow; `predict` follows the scikit-learn outlier convention
    (+1 inlier, -1 outlier) with a threshold set from the training scores
    at the `contamination` quantile.
    """

    def __init__(self, n_blocks: int = 8, hidden_width: int = 2048,
                 clamp_alpha: float = 3.0, epochs: int = 192, batch_size: int = 96,
                 learning_rate: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, noise_std: float = 0.5, contamination: float = 0.05,
                 random_state: int = 0):
        self.n_blocks = n_blocks
        self.hidden_width = hidden_width
        self.clamp_alpha = clamp_alpha
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.noise_std = noise_std
        self.contamination = contamination
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, blocks=self.n_blocks, hidden_width=self.hidden_width,
            clamp_alpha=self.clamp_alpha, seed=self.random_state,
            holdout_fraction=0.0, noise_std=self.noise_std)

    def fit(self, X, y=None):
        if not isinstance(self.contamination, numbers.Real) or not 0 < self.contamination < 0.5:
            raise ValueError("contamination must be in (0, 0.5)")
        X = check_feature_matrix(X)
        result = train(X, self._train_config())
        self.flow_ = result.model
        self.loss_curve_ = list(result.epoch_nll)
        self.n_features_in_ = X.shape[1]
        train_scores = model_nll(self.flow_, X)
        self.threshold_ = float(np.quantile(train_scores, 1.0 - self.contamination))
        self.offset_ = -self.threshold_
        return self

    def _check_fitted(self):
        if not hasattr(self, "flow_"):
            raise RuntimeError("this FlowAnomalyDetector instance is not fitted yet")

    def anomaly_score(self, X) -> np.ndarray:
        """Per-sample NLL; larger means more anomalous."""
        self._check_fitted()
        X = check_feature_matrix(X, dim=self.n_features_in_)
        return model_nll(self.flow_, X)

    def score_samples(self, X) -> np.ndarray:
        return -self.anomaly_score(X)

    def decision_function(self, X) -> np.ndarray:
        return self.score_samples(X) - self.offset_

    def predict(self, X) -> np.ndarray:
        scores = self.anomaly_score(X)
        return np.array([-1 if classify(s, self.threshold_) else 1 for s in scores])


class MultiScaleFeatureExtractor(TransformerMixin, BaseEstimator):
    """Images -> pooled multi-scale conv features (stateless transformer).

    By default a seeded toy extractor supplies the weights; pass `spec` to
    use a loaded weight file (see `store.extractor_from_tensorfile`).
    """

    def __init__(self, spec: ConvNetSpec | None = None, extractor_seed: int = 0,
                 scales: tuple[int, ...] = (448, 224, 112), multi_scale: bool = True):
        self.spec = spec
        self.extractor_seed = extractor_seed
        self.scales = scales
        self.multi_scale = multi_scale

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        spec = self.spec if self.spec is not None else toy_extractor(self.extractor_seed)
        cfg = MultiScaleConfig(tuple(self.scales), self.multi_scale)
        rows = [extract(img, spec, cfg) for img in X]
        return np.stack(rows)
