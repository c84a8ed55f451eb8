"""Anomaly scoring and gradient-map localization.

The anomaly score of an image is the mean NLL over a set of transformed
copies; a sample is flagged when the score reaches the decision threshold.
Localization backpropagates the NLL to the pixels of several rotated
copies, blurs and rectifies the per-channel gradients, rotates the maps
back, and averages them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import imageops
from .extractor import ConvNetSpec, MultiScaleConfig, extract, input_gradient
from .flow import FlowModel
from .imageops import TransformSpec
from .training import model_nll


@dataclass
class ScoreReport:
    sample_id: str
    score: float
    label: int  # 0 normal, 1 anomalous, -1 unknown
    per_transform_nll: list[float]


@dataclass
class GradientMap:
    values: np.ndarray  # (H, W), non-negative
    max_value: float


def anomaly_score(img, model: FlowModel, spec: ConvNetSpec, cfg: MultiScaleConfig,
                  transforms: list[TransformSpec], sample_id: str = "",
                  label: int = -1) -> ScoreReport:
    """Mean NLL over the transformed copies of one image."""
    if not transforms:
        raise ValueError("at least one transform is required")
    nlls = [float(model_nll(model, extract(t.apply(img), spec, cfg)[None, :])[0])
            for t in transforms]
    return ScoreReport(sample_id, float(np.mean(nlls)), label, nlls)


def score_feature_groups(model: FlowModel, features: np.ndarray,
                         sample_ids: list[str], labels: list[int]) -> list[ScoreReport]:
    """Score precomputed features, averaging the NLL over rows that share a sample id."""
    nlls = model_nll(model, features)
    groups: dict[str, ScoreReport] = {}
    order: list[str] = []
    for sid, label, value in zip(sample_ids, labels, nlls):
        if sid not in groups:
            groups[sid] = ScoreReport(sid, 0.0, label, [])
            order.append(sid)
        groups[sid].per_transform_nll.append(float(value))
    for sid in order:
        groups[sid].score = float(np.mean(groups[sid].per_transform_nll))
    return [groups[sid] for sid in order]


def classify(tau: float, theta: float) -> int:
    """1 (anomalous) if the score reaches the threshold, else 0."""
    if not (math.isfinite(tau) and math.isfinite(theta)):
        raise ValueError("classify requires finite score and threshold")
    return 1 if tau >= theta else 0


def gaussian_kernel(sigma: float, dtype=np.float32) -> np.ndarray:
    """1-D Gaussian truncated at radius 2*sigma (odd length, normalized)."""
    radius = max(1, int(math.ceil(2.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return (k / k.sum()).astype(dtype)


def gaussian_blur(plane: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a 2-D map with edge-clamped borders."""
    if sigma <= 0:
        return np.asarray(plane).copy()
    k = gaussian_kernel(sigma, np.asarray(plane).dtype)
    r = len(k) // 2
    padded = np.pad(plane, ((r, r), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=0)
    rows = win @ k
    padded = np.pad(rows, ((0, 0), (r, r)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=1)
    return win @ k


def localize(img, model: FlowModel, spec: ConvNetSpec, cfg: MultiScaleConfig,
             rotations: list[float] | None = None,
             blur_sigma: float | None = None) -> GradientMap:
    """Average rectified, blurred input gradients over several rotations."""
    img = imageops.validate_image(img)
    if rotations is None:
        rotations = default_rotations(8)
    if not rotations:
        raise ValueError("at least one rotation is required")
    if blur_sigma is None:
        blur_sigma = img.shape[1] / 64.0
    accum = np.zeros(img.shape[:2], dtype=np.float64)
    for angle in rotations:
        rotated = imageops.rotate(img, angle)
        grad = input_gradient(rotated, spec, cfg, model)
        combined = np.zeros(img.shape[:2], dtype=grad.dtype)
        for c in range(grad.shape[2]):
            combined += np.abs(gaussian_blur(grad[:, :, c], blur_sigma))
        if angle != 0.0:
            back = imageops.rotate(np.repeat(combined[:, :, None], 3, axis=2), -angle)
            combined = back[:, :, 0]
        accum += combined
    values = (accum / len(rotations)).astype(np.float32)
    return GradientMap(values, float(values.max()))


def default_rotations(count: int) -> list[float]:
    return [2.0 * math.pi * i / count for i in range(count)]


# ---------------------------------------------------------------------------
# score and map files
# ---------------------------------------------------------------------------

def write_scores(path, reports: list[ScoreReport]) -> None:
    """One `sample_id,score,label` line per sample (label -1 if unknown)."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(f"{r.sample_id},{r.score!r},{r.label}\n")


def read_scores(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    ids, scores, labels = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.rsplit(",", 2)
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected `sample_id,score,label`")
            ids.append(parts[0])
            scores.append(float(parts[1]))
            labels.append(int(parts[2]))
    return ids, np.asarray(scores), np.asarray(labels, dtype=int)


def save_map_png(path, gradient_map: GradientMap) -> None:
    """8-bit grayscale PNG scaled by the map max; the max goes to a sidecar file."""
    from PIL import Image as PILImage

    values = gradient_map.values
    peak = gradient_map.max_value
    scaled = np.zeros_like(values) if peak <= 0 else values / peak
    data = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(data, mode="L").save(path, format="PNG")
    with open(f"{path}.txt", "w", encoding="utf-8") as fh:
        fh.write(f"max={peak!r}\n")
