"""Seeded synthetic datasets: Gaussian / mixture feature sets and a textured
image fixture with bright square blemishes for end-to-end runs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageops


@dataclass
class FeatureSet:
    features: np.ndarray          # (N, D) float32
    sample_ids: list[str]
    labels: list[int]


def gaussian_features(seed: int, n_train: int = 2000, n_test_each: int = 500,
                      dim: int = 16, shift: float = 1.0) -> tuple[FeatureSet, FeatureSet]:
    """Train: standard normal.  Test: fresh normals plus mean-shifted anomalies."""
    rng = np.random.default_rng([seed, 20])
    train = rng.standard_normal((n_train, dim)).astype(np.float32)
    normals = rng.standard_normal((n_test_each, dim)).astype(np.float32)
    anomalies = (rng.standard_normal((n_test_each, dim)) + shift).astype(np.float32)
    return _feature_sets(train, normals, anomalies)


def mixture_features(seed: int, n_train: int = 2000, n_test_each: int = 500,
                     dim: int = 8, offset: float = 3.0,
                     anomaly_std: float = 0.0) -> tuple[FeatureSet, FeatureSet]:
    """Train: half-and-half Gaussians at +-offset along the first axis.
    Test: fresh mixture normals plus anomalies clustered at the origin."""
    rng = np.random.default_rng([seed, 21])

    def draw_mixture(n):
        x = rng.standard_normal((n, dim)).astype(np.float32)
        x[:, 0] += offset * (rng.integers(0, 2, n) * 2 - 1).astype(np.float32)
        return x

    train = draw_mixture(n_train)
    normals = draw_mixture(n_test_each)
    if anomaly_std > 0:
        anomalies = (rng.standard_normal((n_test_each, dim)) * anomaly_std).astype(np.float32)
    else:
        anomalies = np.zeros((n_test_each, dim), dtype=np.float32)
    return _feature_sets(train, normals, anomalies)


def _feature_sets(train, normals, anomalies) -> tuple[FeatureSet, FeatureSet]:
    train_set = FeatureSet(train, [f"train/good/{i:04d}" for i in range(len(train))],
                           [0] * len(train))
    test = np.concatenate([normals, anomalies])
    ids = [f"test/good/{i:04d}" for i in range(len(normals))]
    ids += [f"test/anomaly/{i:04d}" for i in range(len(anomalies))]
    labels = [0] * len(normals) + [1] * len(anomalies)
    return train_set, FeatureSet(test, ids, labels)


# ---------------------------------------------------------------------------
# texture images
# ---------------------------------------------------------------------------

def smooth_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency grayscale noise in roughly [0.2, 0.8], replicated to RGB."""
    coarse = rng.standard_normal((8, 8, 3)).astype(np.float32).mean(axis=2, keepdims=True)
    coarse = np.repeat(coarse, 3, axis=2)
    fine = rng.standard_normal((16, 16, 3)).astype(np.float32).mean(axis=2, keepdims=True)
    fine = np.repeat(fine, 3, axis=2)
    field = imageops.resize(coarse, size, size) + 0.4 * imageops.resize(fine, size, size)
    field = 0.5 + 0.15 * field
    return np.clip(field, 0.0, 1.0)


def add_blemish(img: np.ndarray, rng: np.random.Generator,
                min_side: int = 10, max_side: int = 16,
                delta: float = 0.4) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Brighten a random interior square; returns the image and its (r0,c0,r1,c1) box."""
    size = img.shape[0]
    side = int(rng.integers(min_side, max_side + 1))
    margin = 4
    r0 = int(rng.integers(margin, size - margin - side + 1))
    c0 = int(rng.integers(margin, size - margin - side + 1))
    out = img.copy()
    out[r0:r0 + side, c0:c0 + side] = np.clip(out[r0:r0 + side, c0:c0 + side] + delta, 0.0, 1.0)
    return out, (r0, c0, r0 + side, c0 + side)


def texture_dataset(out_dir, seed: int, n_train: int = 64, n_test_each: int = 32,
                    size: int = 64) -> dict[str, tuple[int, int, int, int]]:
    """Write train/good, test/good, and test/blemish PNG trees plus a box list.

    Returns the blemish bounding boxes keyed by sample id; the same mapping
    is stored as `blemish_boxes.csv` at the dataset root.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng([seed, 22])
    for sub in ("train/good", "test/good", "test/blemish"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    for i in range(n_train):
        imageops.save_image(out_dir / "train/good" / f"{i:04d}.png", smooth_texture(rng, size))
    for i in range(n_test_each):
        imageops.save_image(out_dir / "test/good" / f"{i:04d}.png", smooth_texture(rng, size))
    boxes: dict[str, tuple[int, int, int, int]] = {}
    for i in range(n_test_each):
        img, box = add_blemish(smooth_texture(rng, size), rng)
        name = f"{i:04d}.png"
        imageops.save_image(out_dir / "test/blemish" / name, img)
        boxes[f"test/blemish/{name}"] = box
    with open(out_dir / "blemish_boxes.csv", "w", encoding="utf-8") as fh:
        fh.write("sample_id,row0,col0,row1,col1\n")
        for sid, (r0, c0, r1, c1) in boxes.items():
            fh.write(f"{sid},{r0},{c0},{r1},{c1}\n")
    return boxes


def read_blemish_boxes(path) -> dict[str, tuple[int, int, int, int]]:
    boxes = {}
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            sid, r0, c0, r1, c1 = line.strip().split(",")
            boxes[sid] = (int(r0), int(c0), int(r1), int(c1))
    return boxes
