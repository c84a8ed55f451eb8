"""Acceptance suite: one test per gate, each printing a PASS/FAIL line.

The texture fixtures run the real CLI end to end (synth -> train -> score ->
eval); numeric gates drive the library directly with independent oracles.
"""

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

import differflow.autodiff as ad
from differflow import detect, store, synth
from differflow.cli import main
from differflow.flow import FlowModel, flow_forward, flow_inverse
from differflow.metrics import auroc
from differflow.training import TrainConfig, model_nll, nll, train


def report(name: str, ok: bool, detail: str) -> bool:
    print(f"ACCEPTANCE {'PASS' if ok else 'FAIL'} {name}: {detail}")
    return ok


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def perturb(model, scale, seed=0):
    rng = np.random.default_rng(seed)
    for p in model.parameters().values():
        p.data += rng.normal(0, scale, p.data.shape).astype(p.data.dtype)
    return model


# ---------------------------------------------------------------------------
# flow-level numeric gates
# ---------------------------------------------------------------------------

def test_bijectivity():
    start = time.time()
    worst = 0.0
    for seed in range(2):
        model = perturb(FlowModel.from_seed(64, 8, 64, seed=seed), 0.02, seed)
        y = np.random.default_rng(100 + seed).standard_normal((1000, 64)).astype(np.float32)
        z, _ = flow_forward(y, model)
        back = flow_inverse(z.data, model)
        worst = max(worst, float(np.max(np.abs(back.data - y))))
    elapsed = time.time() - start
    ok = worst < 1e-4 and elapsed < 10.0
    assert report("bijectivity", ok, f"max roundtrip error {worst:.2e}, {elapsed:.1f}s")


def fd_logdet(model, y, step):
    dim = len(y)
    jac = np.zeros((dim, dim))
    for j in range(dim):
        hi = y.copy(); hi[j] += step
        lo = y.copy(); lo[j] -= step
        jac[:, j] = (flow_forward(hi, model)[0].data -
                     flow_forward(lo, model)[0].data) / (2 * step)
    return np.linalg.slogdet(jac)[1]


def test_logdet_exactness():
    worst = 0.0
    cases = 0
    for dim in (2, 4, 8):
        rng = np.random.default_rng(dim)
        model = perturb(FlowModel.from_seed(dim, 2, 16, seed=dim, dtype=np.float64),
                        0.2, seed=dim)
        while cases < 17 * ((2, 4, 8).index(dim) + 1):
            y = rng.standard_normal(dim)
            coarse, fine = fd_logdet(model, y, 1e-4), fd_logdet(model, y, 1e-5)
            if abs(coarse - fine) > 1e-5:
                continue  # finite differencing straddles a relu kink: redraw
            _, logdet = flow_forward(y, model)
            worst = max(worst, abs(float(logdet.data) - fine))
            cases += 1
    ok = worst < 1e-3 and cases >= 50
    assert report("logdet-exactness", ok, f"{cases} cases, worst |analytic-fd| {worst:.2e}")


def test_gradient_correctness():
    rng = np.random.default_rng(0)
    model = perturb(FlowModel.from_seed(8, 2, 16, seed=1, dtype=np.float64), 0.1)
    x = rng.standard_normal((4, 8))

    def loss_value():
        z, logdet = flow_forward(x, model)
        return float(nll(z, logdet).data.sum())

    z, logdet = flow_forward(x, model)
    ad.backward(ad.reduce_sum(nll(z, logdet)))

    step = 1e-5
    worst = 0.0
    checked = 0
    for name, p in model.parameters().items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat, gflat = p.data.ravel(), grad.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            hi = loss_value()
            flat[i] = original - step
            lo = loss_value()
            flat[i] = original
            numeric = (hi - lo) / (2 * step)
            rel = abs(gflat[i] - numeric) / max(abs(numeric), 1e-6)
            worst = max(worst, rel)
            checked += 1
    ok = worst < 1e-3
    assert report("gradient-correctness", ok,
                  f"{checked} parameters, worst relative error {worst:.2e}")


# ---------------------------------------------------------------------------
# feature-space training gates
# ---------------------------------------------------------------------------

def test_gaussian_fit():
    start = time.time()
    rng = np.random.default_rng(42)
    x = rng.standard_normal((2000, 16)).astype(np.float32)
    result = train(x, TrainConfig(epochs=60, blocks=4, hidden_width=64, seed=0))
    elapsed = time.time() - start
    holdout = result.holdout_nll[-1]
    ok = 7.0 <= holdout <= 9.0 and elapsed < 60.0
    assert report("gaussian-fit", ok,
                  f"held-out mean NLL {holdout:.3f} (optimum 8.0), {elapsed:.1f}s")


def test_synthetic_detection():
    train_set, test_set = synth.gaussian_features(seed=0, n_train=2000, n_test_each=500)
    result = train(train_set.features,
                   TrainConfig(epochs=60, blocks=8, hidden_width=64, seed=0))
    scores = model_nll(result.model, test_set.features)
    labels = np.asarray(test_set.labels)
    value = auroc(scores, labels)
    ok = value >= 0.95
    assert report("synthetic-detection", ok, f"AUROC {value:.4f} (gate 0.95)")


def test_multimodality():
    train_set, test_set = synth.mixture_features(seed=0, n_train=4000, n_test_each=500)
    result = train(train_set.features,
                   TrainConfig(epochs=60, blocks=8, hidden_width=64, seed=0,
                               noise_std=0.2))
    scores = model_nll(result.model, test_set.features)
    labels = np.asarray(test_set.labels)
    value = auroc(scores, labels)
    ok = value >= 0.90
    assert report("multimodality", ok, f"AUROC {value:.4f} (gate 0.90)")


# ---------------------------------------------------------------------------
# metric oracle gate
# ---------------------------------------------------------------------------

def test_auroc_oracle_equivalence():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(4, 501))
        scores = np.round(rng.standard_normal(n), 1)  # plenty of ties
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        fast = auroc(scores, labels)
        pos = scores[labels == 1][:, None]
        neg = scores[labels == 0][None, :]
        oracle = float(((pos > neg).sum() + 0.5 * (pos == neg).sum())
                       / (pos.shape[0] * neg.shape[1]))
        worst = max(worst, abs(fast - oracle))
    ok = worst < 1e-9
    assert report("auroc-oracle-equivalence", ok, f"200 instances, worst gap {worst:.2e}")


# ---------------------------------------------------------------------------
# end-to-end texture fixture (shared across three gates)
# ---------------------------------------------------------------------------

@dataclass
class TextureRun:
    auroc_1: float
    auroc_16: float
    localization_hits: int
    localization_total: int
    elapsed: float


TRAIN_FLAGS = ("--blocks", "4", "--hidden-width", "64", "--epochs", "24",
               "--batch-size", "32", "--scales", "64,32,16", "--no-sample-factors")


def texture_pipeline(root: Path, seed: int, n_train: int, epochs: int = 24,
                     batch: int = 32, localize: bool = False) -> TextureRun:
    start = time.time()
    data = root / f"data{seed}_{n_train}"
    model_path = root / f"model{seed}_{n_train}.dfn"
    assert run_cli("synth", "--kind", "texture", "--out", data, "--seed", seed,
                   "--train-count", n_train, "--test-count", 32) == 0
    assert run_cli("train", "--data", data, "--out", model_path, "--seed", seed,
                   "--blocks", "4", "--hidden-width", "64", "--epochs", epochs,
                   "--batch-size", batch, "--scales", "64,32,16",
                   "--no-sample-factors") == 0
    aurocs = {}
    for n in (1, 16):
        score_path = root / f"scores{seed}_{n_train}_{n}.csv"
        assert run_cli("score", "--model", model_path, "--data", data,
                       "--transforms", n, "--seed", seed, "--no-sample-factors",
                       "--out", score_path) == 0
        report_dir = root / f"report{seed}_{n_train}_{n}"
        assert run_cli("eval", "--scores", score_path, "--out", report_dir) == 0
        text = (report_dir / "auroc.txt").read_text().strip()
        aurocs[n] = float(text.split("=", 1)[1])
    hits = total = 0
    if localize:
        from differflow import imageops
        model, bundle = store.load_model(model_path)
        boxes = synth.read_blemish_boxes(data / "blemish_boxes.csv")
        for sid, box in boxes.items():
            img = imageops.load_image(data / sid)
            gmap = detect.localize(img, model, bundle.spec, bundle.config,
                                   rotations=detect.default_rotations(8), blur_sigma=4.0)
            r, c = np.unravel_index(np.argmax(gmap.values), gmap.values.shape)
            r0, c0, r1, c1 = box
            hits += int(r0 <= r < r1 and c0 <= c < c1)
            total += 1
    return TextureRun(aurocs[1], aurocs[16], hits, total, time.time() - start)


@pytest.fixture(scope="module")
def texture_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_texture")
    runs = {}
    for seed in (0, 1, 2):
        runs[seed] = texture_pipeline(root, seed, n_train=64, localize=(seed == 0))
    return runs


def test_end_to_end_texture_fixture(texture_runs):
    run = texture_runs[0]
    frac = run.localization_hits / run.localization_total
    ok = (run.auroc_16 >= 0.90 and frac >= 0.70 and run.elapsed < 300.0)
    assert report("end-to-end-texture", ok,
                  f"AUROC {run.auroc_16:.4f} (gate 0.90), localization "
                  f"{run.localization_hits}/{run.localization_total} (gate 70%), "
                  f"{run.elapsed:.0f}s (gate 300s)")


def test_ablation_direction(texture_runs):
    gaps = {seed: run.auroc_16 - run.auroc_1 for seed, run in texture_runs.items()}
    ok = all(gap >= -0.02 for gap in gaps.values())
    detail = ", ".join(f"seed {s}: N16-N1 {g:+.4f}" for s, g in sorted(gaps.items()))
    assert report("ablation-direction", ok, detail)


def test_small_training_set(tmp_path):
    run = texture_pipeline(tmp_path, seed=0, n_train=16, epochs=48, batch=16)
    ok = run.auroc_16 >= 0.80
    assert report("small-training-set", ok, f"16-shot AUROC {run.auroc_16:.4f} (gate 0.80)")


def test_determinism(tmp_path):
    data = tmp_path / "data"
    assert run_cli("synth", "--kind", "gaussian", "--out", data, "--seed", "5",
                   "--train-count", "300", "--test-count", "40") == 0
    artifacts = []
    for tag in ("a", "b"):
        model_path = tmp_path / f"{tag}.dfn"
        score_path = tmp_path / f"{tag}.csv"
        assert run_cli("train", "--data", data / "train.dff", "--out", model_path,
                       "--epochs", "6", "--blocks", "2", "--hidden-width", "32",
                       "--seed", "5") == 0
        assert run_cli("score", "--model", model_path, "--data", data / "test.dff",
                       "--out", score_path) == 0
        artifacts.append((model_path.read_bytes(), score_path.read_bytes()))
    ok = artifacts[0] == artifacts[1]
    assert report("determinism", ok,
                  f"model bytes equal: {artifacts[0][0] == artifacts[1][0]}, "
                  f"score bytes equal: {artifacts[0][1] == artifacts[1][1]}")
