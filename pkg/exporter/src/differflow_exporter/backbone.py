"""AlexNet-style convolutional backbone: zoo loading and weight packaging."""

from __future__ import annotations

import hashlib

import numpy as np
import torch
from torch import nn
from torchvision import models

from .formats import TensorArchive

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_SCALES = (448, 224, 112)


class BackboneError(RuntimeError):
    pass


def load_alexnet(pretrained: bool = True, init_seed: int = 0) -> nn.Sequential:
    """Convolutional part of AlexNet; `pretrained=False` gives seeded random
    weights with the identical topology (offline testing)."""
    if pretrained:
        try:
            net = models.alexnet(weights=models.AlexNet_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise BackboneError(
                f"could not fetch pretrained AlexNet weights ({exc}); "
                "pass --no-pretrained for a seeded random backbone") from exc
    else:
        torch.manual_seed(init_seed)
        net = models.alexnet(weights=None)
    features = net.features.eval()
    for p in features.parameters():
        p.requires_grad_(False)
    return features


def chain_string(features: nn.Sequential) -> str:
    """Serialize the exact layer chain so the core replays it verbatim."""
    tokens = []
    for module in features:
        if isinstance(module, nn.Conv2d):
            if module.stride[0] != module.stride[1] or module.padding[0] != module.padding[1]:
                raise BackboneError("only square strides/paddings are supported")
            tokens.append(
                f"conv:{module.in_channels}:{module.out_channels}:"
                f"{module.kernel_size[0]}:{module.kernel_size[1]}:"
                f"{module.stride[0]}:{module.padding[0]}")
        elif isinstance(module, nn.ReLU):
            tokens.append("relu")
        elif isinstance(module, nn.MaxPool2d):
            k = module.kernel_size if isinstance(module.kernel_size, int) else module.kernel_size[0]
            s = module.stride if isinstance(module.stride, int) else module.stride[0]
            tokens.append(f"maxpool:{k}:{s}")
        else:
            raise BackboneError(f"unsupported layer in backbone: {type(module).__name__}")
    return ",".join(tokens)


def out_channels(features: nn.Sequential) -> int:
    last = [m for m in features if isinstance(m, nn.Conv2d)][-1]
    return last.out_channels


def weight_checksum(features: nn.Sequential) -> str:
    digest = hashlib.sha256()
    for module in features:
        if isinstance(module, nn.Conv2d):
            digest.update(module.weight.detach().numpy().astype("<f4").tobytes())
            digest.update(module.bias.detach().numpy().astype("<f4").tobytes())
    return digest.hexdigest()


def package_weights(features: nn.Sequential, backbone_id: str,
                    scales=DEFAULT_SCALES) -> TensorArchive:
    """Bundle the conv stack plus preprocessing constants for the core."""
    channels = out_channels(features)
    archive = TensorArchive(metadata={
        "kind": "extractor",
        "backbone": backbone_id,
        "checksum": weight_checksum(features),
        "extractor.chain": chain_string(features),
        "extractor.mean": ",".join(repr(float(v)) for v in IMAGENET_MEAN),
        "extractor.std": ",".join(repr(float(v)) for v in IMAGENET_STD),
        "extractor.scales": ",".join(str(s) for s in scales),
        "extractor.multi_scale": "1",
        "feature_dim": str(channels * len(scales)),
    })
    conv_index = 0
    for module in features:
        if isinstance(module, nn.Conv2d):
            archive.tensors[f"extractor.conv{conv_index}.weight"] = (
                module.weight.detach().numpy().astype(np.float32))
            archive.tensors[f"extractor.conv{conv_index}.bias"] = (
                module.bias.detach().numpy().astype(np.float32))
            conv_index += 1
    return archive


def rebuild_from_archive(archive: TensorArchive) -> tuple[nn.Sequential, dict]:
    """Reconstruct the torch stack from an exported archive (for feature export)."""
    layers = []
    conv_index = 0
    for token in archive.metadata["extractor.chain"].split(","):
        parts = token.split(":")
        if parts[0] == "conv":
            c_in, c_out, kh, kw, stride, pad = map(int, parts[1:])
            conv = nn.Conv2d(c_in, c_out, (kh, kw), stride=stride, padding=pad)
            with torch.no_grad():
                conv.weight.copy_(torch.from_numpy(
                    archive.tensors[f"extractor.conv{conv_index}.weight"]))
                conv.bias.copy_(torch.from_numpy(
                    archive.tensors[f"extractor.conv{conv_index}.bias"]))
            conv_index += 1
            layers.append(conv)
        elif parts[0] == "relu":
            layers.append(nn.ReLU(inplace=False))
        elif parts[0] == "maxpool":
            layers.append(nn.MaxPool2d(int(parts[1]), int(parts[2])))
        else:
            raise BackboneError(f"unknown chain token {token}")
    stack = nn.Sequential(*layers).eval()
    for p in stack.parameters():
        p.requires_grad_(False)
    info = {
        "mean": np.array([float(v) for v in archive.metadata["extractor.mean"].split(",")],
                         dtype=np.float32),
        "std": np.array([float(v) for v in archive.metadata["extractor.std"].split(",")],
                        dtype=np.float32),
        "scales": tuple(int(s) for s in archive.metadata["extractor.scales"].split(",")),
    }
    return stack, info
