"""Maximum-likelihood training of the flow on feature vectors.

The loss per sample is ||z||^2/2 - logdet (the Gaussian normalization
constant is dropped).  Features are standardized per dimension before they
enter the flow, and a small amount of seeded Gaussian noise is mixed into
each training batch; desk-scale feature sets have no image-transform
augmentation, and without the noise the flow memorizes individual vectors.
Optimization is plain Adam over seeded, shuffled mini-batches; everything
is deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .flow import FlowModel, flow_forward


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exceeded the divergence limit."""


@dataclass
class TrainConfig:
    epochs: int = 192
    batch_size: int = 96
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    blocks: int = 8
    hidden_width: int = 2048
    clamp_alpha: float = 3.0
    seed: int = 0
    holdout_fraction: float = 0.1
    noise_std: float = 0.5
    divergence_limit: float = 1e6

    def validate(self) -> None:
        positive = {
            "epochs": self.epochs + 1,  # 0 epochs is allowed
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "blocks": self.blocks,
            "hidden_width": self.hidden_width,
            "clamp_alpha": self.clamp_alpha,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def nll(z, logdet) -> Tensor:
    """Negative log-likelihood ||z||^2/2 - logdet (additive constant dropped).

    Accepts a single vector with scalar logdet, or a batch with per-sample
    logdets; returns a matching scalar or per-sample tensor.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    logdet = logdet if isinstance(logdet, Tensor) else Tensor(np.asarray(logdet, dtype=z.dtype))
    if not np.all(np.isfinite(z.data)) or not np.all(np.isfinite(logdet.data)):
        raise ad.NonFiniteError("nll received non-finite inputs")
    half = Tensor(np.asarray(0.5, dtype=z.dtype))
    if z.ndim == 1:
        return ad.add(ad.mul(ad.sq_l2(z), half), ad.neg(logdet))
    sq = ad.reduce_sum(ad.mul(z, z), axis=-1)
    return ad.add(ad.mul(sq, half), ad.neg(logdet))


class Adam:
    """Standard Adam with bias correction over a list of parameter tensors."""

    def __init__(self, params: list[Tensor], learning_rate: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
            # in-place moment updates; parameter tensors at full width are large
            self.m[i] *= b1
            self.m[i] += (1 - b1) * g
            self.v[i] *= b2
            self.v[i] += (1 - b2) * g * g
            update = self.m[i] / (1 - b1 ** self.t)  # bias-corrected first moment
            v_hat = self.v[i] / (1 - b2 ** self.t)
            np.sqrt(v_hat, out=v_hat)
            v_hat += self.eps
            update *= self.learning_rate
            update /= v_hat
            p.data -= update.astype(p.dtype)


@dataclass
class TrainResult:
    model: FlowModel
    epoch_nll: list[float] = field(default_factory=list)
    holdout_nll: list[float] = field(default_factory=list)


def model_nll(model: FlowModel, features: np.ndarray) -> np.ndarray:
    """Per-sample NLL of raw feature vectors, standardized like in training."""
    x = model.standardize(np.asarray(features))
    z, logdet = flow_forward(x, model)
    out = nll(z, logdet).data
    return np.atleast_1d(out)


def mean_nll(model: FlowModel, features: np.ndarray) -> float:
    return float(model_nll(model, features).mean())


def train(features, config: TrainConfig) -> TrainResult:
    """Fit a flow to feature vectors by minimizing the mean NLL.

    `features` is either an (N, D) array or a callable `epoch -> (N, D)`
    yielding freshly transformed features each epoch (same N and row order).
    A seeded holdout split is reported per epoch but never used for training.
    """
    config.validate()
    provider = features if callable(features) else None
    x0 = np.asarray(provider(0) if provider else features)
    if x0.ndim != 2 or x0.shape[0] == 0:
        raise ValueError(f"expected a non-empty (N, D) feature matrix, got shape {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("training features contain non-finite values")
    n, dim = x0.shape

    model = FlowModel.from_seed(dim, config.blocks, config.hidden_width,
                                config.clamp_alpha, config.seed, dtype=x0.dtype)
    model.set_standardization(x0.mean(axis=0), x0.std(axis=0))
    params = list(model.parameters().values())
    optimizer = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)

    n_holdout = int(config.holdout_fraction * n)
    split_rng = np.random.default_rng([config.seed, 3])
    split_order = split_rng.permutation(n)
    holdout_idx = split_order[:n_holdout]
    train_idx = split_order[n_holdout:]
    if len(train_idx) == 0:
        raise ValueError("holdout fraction leaves no training samples")

    shuffle_rng = np.random.default_rng([config.seed, 2])
    noise_rng = np.random.default_rng([config.seed, 4])
    result = TrainResult(model)
    for epoch in range(config.epochs):
        x = np.asarray(provider(epoch) if provider else features)
        if x.shape != x0.shape:
            raise ValueError(f"feature provider changed shape: {x.shape} vs {x0.shape}")
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = model.standardize(x[order[start:start + config.batch_size]])
            if config.noise_std:
                batch = batch + noise_rng.normal(0, config.noise_std, batch.shape).astype(batch.dtype)
            optimizer.zero_grad()
            z, logdet = flow_forward(batch, model)
            per_sample = nll(z, logdet)
            loss = ad.mul(ad.reduce_sum(per_sample),
                          Tensor(np.asarray(1.0 / len(batch), dtype=batch.dtype)))
            value = float(loss.data)
            if not np.isfinite(value) or value > config.divergence_limit:
                raise DivergenceError(
                    f"batch NLL {value} at epoch {epoch} exceeded the divergence limit")
            ad.backward(loss)
            optimizer.step()
            total += value * len(batch)
            count += len(batch)
        result.epoch_nll.append(total / count)
        if n_holdout:
            result.holdout_nll.append(mean_nll(model, x[holdout_idx]))
    return result
