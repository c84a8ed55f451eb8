"""Image preprocessing and pooled multi-scale forward pass.

Transforms and resizing reproduce the core's documented conventions
(rotation about the center with bilinear sampling and edge clamping,
contrast about the image mean, half-pixel bilinear resize) so pooled
features from both implementations agree tightly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image
from torch import nn


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def _bilinear_gather(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0).astype(img.dtype)[..., None]
    fc = (cols - c0).astype(img.dtype)[..., None]
    top = img[r0, c0] * (1 - fc) + img[r0, c1] * fc
    bottom = img[r1, c0] * (1 - fc) + img[r1, c1] * fc
    return top * (1 - fr) + bottom * fr


def rotate(img: np.ndarray, angle: float) -> np.ndarray:
    if angle == 0.0:
        return img
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    dy, dx = rr - cy, cc - cx
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    src_c = cx + cos_a * dx - sin_a * dy
    src_r = cy + sin_a * dx + cos_a * dy
    return _bilinear_gather(img, src_r, src_c)


def adjust(img: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    if brightness == 1.0 and contrast == 1.0:
        return img
    mean = img.mean(dtype=np.float64).astype(np.float32)
    out = ((img - mean) * np.float32(contrast) + mean) * np.float32(brightness)
    return np.clip(out, 0.0, 1.0)


def resize_chw(img_chw: np.ndarray, size: int) -> np.ndarray:
    """Half-pixel bilinear resize with clamped taps on (C, H, W)."""
    def taps(n_in, n_out):
        pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(pos).astype(np.intp)
        frac = (pos - lo).astype(img_chw.dtype)
        return np.clip(lo, 0, n_in - 1), np.clip(lo + 1, 0, n_in - 1), frac

    _, h, w = img_chw.shape
    r0, r1, rf = taps(h, size)
    c0, c1, cf = taps(w, size)
    rows = img_chw[:, r0, :] * (1 - rf)[None, :, None] + img_chw[:, r1, :] * rf[None, :, None]
    return rows[:, :, c0] * (1 - cf)[None, None, :] + rows[:, :, c1] * cf[None, None, :]


@dataclass(frozen=True)
class Transform:
    angle: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0

    def apply(self, img: np.ndarray) -> np.ndarray:
        out = rotate(img, self.angle)
        return adjust(out, self.brightness, self.contrast)


def sample_transforms(seed, count: int, sample_factors: bool = True) -> list[Transform]:
    """Identity for a single transform, else seeded uniform draws."""
    if count < 1:
        raise ValueError("need at least one transform")
    if count == 1:
        return [Transform()]
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        if sample_factors:
            b = float(rng.uniform(0.85, 1.15))
            c = float(rng.uniform(0.85, 1.15))
        else:
            b = c = 1.0
        out.append(Transform(angle, b, c))
    return out


def pooled_features(img_hwc: np.ndarray, stack: nn.Sequential, mean: np.ndarray,
                    std: np.ndarray, scales: tuple[int, ...]) -> np.ndarray:
    """Normalize once, resize per scale, run the conv stack, average pool,
    and concatenate largest scale first."""
    chw = np.ascontiguousarray(img_hwc.transpose(2, 0, 1)).astype(np.float32)
    normalized = (chw - mean[:, None, None]) / std[:, None, None]
    pieces = []
    with torch.no_grad():
        for scale in scales:
            scaled = torch.from_numpy(resize_chw(normalized, scale)).unsqueeze(0)
            activ = stack(scaled)
            pieces.append(activ.mean(dim=(2, 3)).squeeze(0).numpy())
    return np.concatenate(pieces).astype(np.float32)
