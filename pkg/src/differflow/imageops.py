"""Image loading and the transform family used for training and evaluation.

Images are (H, W, 3) float32 arrays in [0, 1].  Transforms combine a
rotation about the image center (bilinear, edge-clamped) with brightness
and contrast scaling; grayscale sources are replicated across channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

TWO_PI = 2.0 * math.pi


def validate_image(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    return arr.astype(np.float32, copy=False)


def load_image(path) -> np.ndarray:
    """Read a PNG into an (H, W, 3) float array in [0, 1]; grayscale is replicated."""
    with PILImage.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(path, img) -> None:
    arr = validate_image(img)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path, format="PNG")


def _bilinear_gather(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample HWC image at fractional (row, col) grids with edge clamping."""
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


def rotate(img, angle: float) -> np.ndarray:
    """Rotate counterclockwise about the image center, keeping the size.

    Out-of-frame samples clamp to the nearest edge pixel; a zero angle is a
    no-op returning the input bit-identically.
    """
    arr = validate_image(img)
    if angle == 0.0:
        return arr
    h, w = arr.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    dy, dx = rr - cy, cc - cx
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    # visual CCW in row/col coordinates: destination -> source mapping
    src_c = cx + cos_a * dx - sin_a * dy
    src_r = cy + sin_a * dx + cos_a * dy
    return _bilinear_gather(arr, src_r, src_c)


def adjust(img, brightness: float, contrast: float) -> np.ndarray:
    """Scale contrast about the image mean, then brightness; clip to [0, 1]."""
    if brightness <= 0 or contrast <= 0:
        raise ValueError("brightness and contrast factors must be positive")
    arr = validate_image(img)
    if brightness == 1.0 and contrast == 1.0:
        return arr
    mean = arr.mean(dtype=np.float64).astype(np.float32)
    out = ((arr - mean) * np.float32(contrast) + mean) * np.float32(brightness)
    return np.clip(out, 0.0, 1.0)


def resize(img, height: int, width: int) -> np.ndarray:
    """Bilinear resize (half-pixel centers). Same-size calls are bit-identical."""
    arr = validate_image(img)
    if height < 1 or width < 1:
        raise ValueError("target size must be positive")
    h, w = arr.shape[:2]
    if (h, w) == (height, width):
        return arr
    rows = (np.arange(height, dtype=np.float64) + 0.5) * (h / height) - 0.5
    cols = (np.arange(width, dtype=np.float64) + 0.5) * (w / width) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return _bilinear_gather(arr, rr, cc)


@dataclass(frozen=True)
class TransformSpec:
    """One member of the transform family: rotation + brightness + contrast."""

    angle: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0

    @classmethod
    def identity(cls) -> "TransformSpec":
        return cls(0.0, 1.0, 1.0)

    def apply(self, img) -> np.ndarray:
        out = rotate(img, self.angle)
        if self.brightness != 1.0 or self.contrast != 1.0:
            out = adjust(out, self.brightness, self.contrast)
        return out


def _draw_specs(seed, count: int, sample_factors: bool,
                factor_low: float, factor_high: float) -> list[TransformSpec]:
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(count):
        angle = float(rng.uniform(0.0, TWO_PI))
        if sample_factors:
            brightness = float(rng.uniform(factor_low, factor_high))
            contrast = float(rng.uniform(factor_low, factor_high))
        else:
            brightness = contrast = 1.0
        specs.append(TransformSpec(angle, brightness, contrast))
    return specs


def sample_transforms(seed, count: int, *, sample_factors: bool = True,
                      factor_low: float = 0.85, factor_high: float = 1.15) -> list[TransformSpec]:
    """Draw `count` transforms: angles uniform on [0, 2pi), factors on [0.85, 1.15].

    A count of one always yields the identity transform (evaluation on the
    original image only).  Deterministic per seed.
    """
    if count < 1:
        raise ValueError("transform count must be at least 1")
    if count == 1:
        return [TransformSpec.identity()]
    return _draw_specs(seed, count, sample_factors, factor_low, factor_high)


def training_transforms(seed, count: int, *, sample_factors: bool = True,
                        factor_low: float = 0.85, factor_high: float = 1.15) -> list[TransformSpec]:
    """Per-epoch training draw: always random, one spec per training image."""
    if count < 1:
        raise ValueError("transform count must be at least 1")
    return _draw_specs(seed, count, sample_factors, factor_low, factor_high)


# ---------------------------------------------------------------------------
# dataset directory convention: <root>/train/good/*.png, <root>/test/<kind>/*.png
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetEntry:
    sample_id: str
    path: Path
    label: int  # 0 normal, 1 anomalous, -1 unknown


def list_split(root, split: str) -> list[DatasetEntry]:
    """Enumerate one split; labels come from the directory name (good -> 0)."""
    base = Path(root) / split
    if not base.is_dir():
        raise FileNotFoundError(f"missing dataset split directory: {base}")
    entries = []
    for sub in sorted(p for p in base.iterdir() if p.is_dir()):
        label = 0 if sub.name == "good" else 1
        for png in sorted(sub.glob("*.png")):
            entries.append(DatasetEntry(f"{split}/{sub.name}/{png.name}", png, label))
    if not entries:
        raise FileNotFoundError(f"no PNG files found under {base}")
    return entries
