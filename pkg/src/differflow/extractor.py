"""Differentiable multi-scale convolutional feature extraction.

An image is resized to each configured scale, pushed through a frozen conv
stack, and globally average pooled; the per-scale outputs are concatenated
in the configured order (largest scale first by default).  The whole chain
runs on the autodiff tape, so losses backpropagate to input pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out, in, kh, kw)
    bias: np.ndarray    # (out,)
    stride: int = 1
    padding: int = 0

    def chain_token(self) -> str:
        o, i, kh, kw = self.weight.shape
        return f"conv:{i}:{o}:{kh}:{kw}:{self.stride}:{self.padding}"


@dataclass
class ReluLayer:
    def chain_token(self) -> str:
        return "relu"


@dataclass
class MaxPoolLayer:
    k: int
    stride: int

    def chain_token(self) -> str:
        return f"maxpool:{self.k}:{self.stride}"


Layer = ConvLayer | ReluLayer | MaxPoolLayer


@dataclass
class ConvNetSpec:
    """Frozen conv stack; global average pooling is applied after the last layer."""

    layers: list[Layer]
    preprocess_mean: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.float32))
    preprocess_std: np.ndarray = field(default_factory=lambda: np.ones(3, dtype=np.float32))

    def out_channels(self) -> int:
        channels = 3
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                if layer.weight.shape[1] != channels:
                    raise ValueError(
                        f"conv layer expects {layer.weight.shape[1]} input channels, chain has {channels}")
                channels = layer.weight.shape[0]
        return channels

    def chain_string(self) -> str:
        return ",".join(layer.chain_token() for layer in self.layers)

    def conv_layers(self) -> list[ConvLayer]:
        return [l for l in self.layers if isinstance(l, ConvLayer)]


def parse_chain(chain: str, weights: list[tuple[np.ndarray, np.ndarray]]) -> list[Layer]:
    """Rebuild a layer list from its chain string plus per-conv (weight, bias)."""
    layers: list[Layer] = []
    conv_i = 0
    for token in chain.split(","):
        parts = token.split(":")
        if parts[0] == "conv":
            c_in, c_out, kh, kw, stride, pad = map(int, parts[1:])
            w, b = weights[conv_i]
            conv_i += 1
            if w.shape != (c_out, c_in, kh, kw) or b.shape != (c_out,):
                raise ValueError(f"weight shapes {w.shape}/{b.shape} do not match token {token}")
            layers.append(ConvLayer(w, b, stride, pad))
        elif parts[0] == "relu":
            layers.append(ReluLayer())
        elif parts[0] == "maxpool":
            layers.append(MaxPoolLayer(int(parts[1]), int(parts[2])))
        else:
            raise ValueError(f"unknown layer token: {token}")
    if conv_i != len(weights):
        raise ValueError(f"chain uses {conv_i} conv layers but {len(weights)} weight pairs given")
    return layers


@dataclass
class MultiScaleConfig:
    scales: tuple[int, ...] = (448, 224, 112)
    multi_scale: bool = True

    def effective_scales(self) -> tuple[int, ...]:
        if not self.scales:
            raise ValueError("at least one scale is required")
        return tuple(self.scales) if self.multi_scale else (self.scales[0],)

    def feature_dim(self, out_channels: int) -> int:
        return out_channels * len(self.effective_scales())


def _run_stack(x: Tensor, spec: ConvNetSpec) -> Tensor:
    for layer in spec.layers:
        if isinstance(layer, ConvLayer):
            w = Tensor(layer.weight.astype(x.dtype, copy=False))
            b = Tensor(layer.bias.astype(x.dtype, copy=False))
            x = ad.conv2d(x, w, b, stride=layer.stride, padding=layer.padding)
        elif isinstance(layer, ReluLayer):
            x = ad.relu(x)
        else:
            x = ad.maxpool2d(x, layer.k, layer.stride)
    return ad.global_avg_pool(x)


def extract_tensor(img_chw: Tensor, spec: ConvNetSpec, cfg: MultiScaleConfig) -> Tensor:
    """Tape-recorded multi-scale extraction of a (3, H, W) image tensor."""
    spec.out_channels()  # validates the chain
    mean = spec.preprocess_mean.astype(img_chw.dtype)[:, None, None]
    inv_std = (1.0 / spec.preprocess_std.astype(img_chw.dtype))[:, None, None]
    normalized = ad.mul(ad.add(img_chw, Tensor(-mean)), Tensor(inv_std))
    pooled = []
    for scale in cfg.effective_scales():
        scaled = ad.resize2d(normalized, scale, scale)
        pooled.append(_run_stack(scaled, spec))
    return pooled[0] if len(pooled) == 1 else ad.concat(pooled)


def to_chw(img_hwc: np.ndarray) -> np.ndarray:
    arr = np.asarray(img_hwc)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def extract(img_hwc, spec: ConvNetSpec, cfg: MultiScaleConfig) -> np.ndarray:
    """Feature vector of one image; length = out_channels * number of scales."""
    leaf = Tensor(to_chw(img_hwc))
    return extract_tensor(leaf, spec, cfg).data


def toy_extractor(seed: int, channels: int = 16) -> ConvNetSpec:
    """Small seeded 3-conv stack standing in for pretrained weights in tests."""
    rng = np.random.default_rng([seed, 10])
    dims = [(3, 8), (8, 16), (16, channels)]
    layers: list[Layer] = []
    for i, (c_in, c_out) in enumerate(dims):
        fan_in = c_in * 9
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(c_out, c_in, 3, 3)).astype(np.float32)
        layers.append(ConvLayer(w, np.zeros(c_out, dtype=np.float32), stride=1, padding=1))
        layers.append(ReluLayer())
        if i < 2:
            layers.append(MaxPoolLayer(2, 2))
    return ConvNetSpec(layers,
                       preprocess_mean=np.full(3, 0.5, dtype=np.float32),
                       preprocess_std=np.full(3, 0.5, dtype=np.float32))


def input_gradient(img_hwc, spec: ConvNetSpec, cfg: MultiScaleConfig, model) -> np.ndarray:
    """Gradient of the image NLL with respect to every input pixel/channel.

    Returns an (H, W, 3) array matching the image layout.
    """
    from .training import nll  # local import to avoid a cycle

    leaf = Tensor(to_chw(img_hwc))
    feats = ad.reshape(extract_tensor(leaf, spec, cfg), (1, -1))
    if model.input_mean is not None:
        inv = Tensor((1.0 / model.input_std).astype(leaf.dtype))
        shift = Tensor((-model.input_mean / model.input_std).astype(leaf.dtype))
        feats = ad.add(ad.mul(feats, inv), shift)
    z, logdet = model.forward(feats)
    loss = nll(z, logdet)
    ad.backward(loss)
    grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return np.ascontiguousarray(grad.transpose(1, 2, 0))
