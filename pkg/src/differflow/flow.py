"""Normalizing flow built from affine coupling blocks.

Each block applies a fixed seeded permutation, then two half-coupled affine
transforms whose scale and shift come from small dense subnets.  Scales pass
through a soft clamp (scaled arctan) before exponentiation, and the log
Jacobian determinant is the sum of the clamped scale coefficients.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def soft_clamp(h: Tensor, alpha: float) -> Tensor:
    """Bound values to (-alpha, alpha) via (2*alpha/pi) * arctan(h/alpha)."""
    if alpha <= 0:
        raise ValueError(f"clamp bound must be positive, got {alpha}")
    h = h if isinstance(h, Tensor) else Tensor(h)
    scale = np.asarray(2.0 * alpha / np.pi, dtype=h.dtype)
    inv_alpha = np.asarray(1.0 / alpha, dtype=h.dtype)
    return ad.mul(ad.arctan(ad.mul(h, Tensor(inv_alpha))), Tensor(scale))


class Subnet:
    """Dense net with three hidden relu layers and a linear output layer."""

    def __init__(self, weights: list[Tensor], biases: list[Tensor]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def create(cls, rng: np.random.Generator, d_in: int, width: int, d_out: int,
               dtype=np.float32) -> "Subnet":
        # He-uniform hidden layers; zero final layer so the block starts as identity
        dims = [d_in, width, width, width, d_out]
        weights, biases = [], []
        for i in range(4):
            fan_in = dims[i]
            if i < 3:
                limit = np.sqrt(6.0 / fan_in)
                w = rng.uniform(-limit, limit, size=(dims[i], dims[i + 1]))
            else:
                w = np.zeros((dims[i], dims[i + 1]))
            weights.append(Tensor(w.astype(dtype)))
            biases.append(Tensor(np.zeros(dims[i + 1], dtype=dtype)))
        return cls(weights, biases)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i in range(3):
            h = ad.relu(ad.add(ad.matmul(h, self.weights[i]), self.biases[i]))
        return ad.add(ad.matmul(h, self.weights[3]), self.biases[3])

    def parameters(self) -> list[Tensor]:
        return list(self.weights) + list(self.biases)

    def astype(self, dtype) -> "Subnet":
        return Subnet([Tensor(w.data.astype(dtype)) for w in self.weights],
                      [Tensor(b.data.astype(dtype)) for b in self.biases])


class CouplingBlock:
    """One permutation + double affine coupling step on vectors of even size."""

    def __init__(self, permutation: np.ndarray, subnet1: Subnet, subnet2: Subnet,
                 alpha: float):
        self.permutation = np.asarray(permutation, dtype=np.intp)
        self.inverse_permutation = np.argsort(self.permutation)
        self.subnet1 = subnet1
        self.subnet2 = subnet2
        self.alpha = float(alpha)

    @property
    def dim(self) -> int:
        return len(self.permutation)

    def scale_shift(self, subnet: Subnet, h: Tensor) -> tuple[Tensor, Tensor]:
        """Run a subnet and split its output into clamped scale and raw shift."""
        s_raw, t = ad.split(subnet(h), 2)
        return soft_clamp(s_raw, self.alpha), t

    def parameters(self) -> list[Tensor]:
        return self.subnet1.parameters() + self.subnet2.parameters()


def _as_batch(y, dim: int, what: str) -> tuple[Tensor, bool]:
    t = y if isinstance(y, Tensor) else Tensor(y)
    if t.ndim not in (1, 2):
        raise ValueError(f"{what} expects a vector or a batch of vectors, got shape {t.shape}")
    if t.shape[-1] != dim:
        raise ValueError(f"{what}: input width {t.shape[-1]} does not match flow dim {dim}")
    if t.ndim == 1:
        return ad.reshape(t, (1, dim)), True
    return t, False


def coupling_forward(y_in, block: CouplingBlock) -> tuple[Tensor, Tensor]:
    """Map y -> y' through one block; returns (output, per-sample logdet)."""
    if block.dim % 2 != 0:
        raise ValueError(f"coupling dim must be even, got {block.dim}")
    y, squeeze = _as_batch(y_in, block.dim, "coupling_forward")
    yp = ad.permute(y, block.permutation)
    y1, y2 = ad.split(yp, 2)
    s1, t1 = block.scale_shift(block.subnet1, y1)
    y2_out = ad.add(ad.mul(y2, ad.exp(s1)), t1)
    s2, t2 = block.scale_shift(block.subnet2, y2_out)
    y1_out = ad.add(ad.mul(y1, ad.exp(s2)), t2)
    out = ad.concat([y1_out, y2_out])
    logdet = ad.add(ad.reduce_sum(s1, axis=-1), ad.reduce_sum(s2, axis=-1))
    if squeeze:
        out = ad.reshape(out, (block.dim,))
        logdet = ad.reshape(logdet, ())
    return out, logdet


def coupling_inverse(y_out, block: CouplingBlock) -> Tensor:
    """Exact algebraic inverse of `coupling_forward`."""
    y, squeeze = _as_batch(y_out, block.dim, "coupling_inverse")
    y1_out, y2_out = ad.split(y, 2)
    s2, t2 = block.scale_shift(block.subnet2, y2_out)
    y1 = ad.mul(ad.add(y1_out, ad.neg(t2)), ad.exp(ad.neg(s2)))
    s1, t1 = block.scale_shift(block.subnet1, y1)
    y2 = ad.mul(ad.add(y2_out, ad.neg(t1)), ad.exp(ad.neg(s1)))
    merged = ad.permute(ad.concat([y1, y2]), block.inverse_permutation)
    if squeeze:
        merged = ad.reshape(merged, (block.dim,))
    return merged


class FlowModel:
    """Bijective map between feature space and latent space.

    All permutations and initial weights derive from `seed`; freshly created
    models start as the identity (zero-initialized subnet output layers).
    """

    def __init__(self, blocks: list[CouplingBlock], dim: int, alpha: float,
                 seed: int, hidden_width: int):
        self.blocks = blocks
        self.dim = int(dim)
        self.alpha = float(alpha)
        self.seed = int(seed)
        self.hidden_width = int(hidden_width)
        self.input_mean: np.ndarray | None = None
        self.input_std: np.ndarray | None = None

    def set_standardization(self, mean, std) -> None:
        """Record per-dimension feature statistics applied before the flow."""
        mean = np.asarray(mean, dtype=np.float64).reshape(self.dim)
        std = np.maximum(np.asarray(std, dtype=np.float64).reshape(self.dim), 1e-6)
        self.input_mean = mean
        self.input_std = std

    def standardize(self, features: np.ndarray) -> np.ndarray:
        """Map raw feature vectors into the space the flow was trained on."""
        x = np.asarray(features)
        if self.input_mean is None:
            return x
        return ((x - self.input_mean.astype(x.dtype)) / self.input_std.astype(x.dtype)).astype(x.dtype)

    @classmethod
    def from_seed(cls, dim: int, n_blocks: int = 8, hidden_width: int = 2048,
                  alpha: float = 3.0, seed: int = 0, dtype=np.float32) -> "FlowModel":
        if dim % 2 != 0:
            raise ValueError(f"flow dim must be even, got {dim}")
        if alpha <= 0:
            raise ValueError(f"clamp bound must be positive, got {alpha}")
        perm_rng = np.random.default_rng([seed, 0])
        weight_rng = np.random.default_rng([seed, 1])
        half = dim // 2
        blocks = []
        for _ in range(n_blocks):
            perm = perm_rng.permutation(dim)
            s1 = Subnet.create(weight_rng, half, hidden_width, dim, dtype)
            s2 = Subnet.create(weight_rng, half, hidden_width, dim, dtype)
            blocks.append(CouplingBlock(perm, s1, s2, alpha))
        return cls(blocks, dim, alpha, seed, hidden_width)

    def forward(self, y) -> tuple[Tensor, Tensor]:
        return flow_forward(y, self)

    def inverse(self, z) -> Tensor:
        return flow_inverse(z, self)

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for bi, block in enumerate(self.blocks):
            for ni, subnet in ((1, block.subnet1), (2, block.subnet2)):
                for li in range(4):
                    params[f"block{bi}.net{ni}.w{li}"] = subnet.weights[li]
                    params[f"block{bi}.net{ni}.b{li}"] = subnet.biases[li]
        return params

    def astype(self, dtype) -> "FlowModel":
        blocks = [CouplingBlock(b.permutation, b.subnet1.astype(dtype),
                                b.subnet2.astype(dtype), b.alpha)
                  for b in self.blocks]
        model = FlowModel(blocks, self.dim, self.alpha, self.seed, self.hidden_width)
        if self.input_mean is not None:
            model.set_standardization(self.input_mean, self.input_std)
        return model


def flow_forward(y, model: FlowModel) -> tuple[Tensor, Tensor]:
    """Apply every block in order; logdet is the sum of per-block logdets."""
    t, squeeze = _as_batch(y, model.dim, "flow_forward")
    logdet = Tensor(np.zeros(t.shape[0], dtype=t.dtype))
    for block in model.blocks:
        t, block_logdet = coupling_forward(t, block)
        logdet = ad.add(logdet, block_logdet)
    if squeeze:
        t = ad.reshape(t, (model.dim,))
        logdet = ad.reshape(logdet, ())
    return t, logdet


def flow_inverse(z, model: FlowModel) -> Tensor:
    """Invert every block in reverse order."""
    t, squeeze = _as_batch(z, model.dim, "flow_inverse")
    for block in reversed(model.blocks):
        t = coupling_inverse(t, block)
    if squeeze:
        t = ad.reshape(t, (model.dim,))
    return t
