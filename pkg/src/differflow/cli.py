"""Command line entry point: train, score, eval, localize, synth.

Exit codes: 0 success, 2 usage or data errors, 3 numerical divergence.
All randomness derives from the single `seed` config key; the worker pool
for scoring obeys the DIFFERFLOW_THREADS environment variable (0 = auto).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import detect, imageops, metrics, store, synth
from .autodiff import NonFiniteError
from .extractor import MultiScaleConfig, extract, toy_extractor
from .imageops import sample_transforms
from .store import ExtractorBundle
from .training import DivergenceError, TrainConfig, train


class UsageError(Exception):
    """Bad flags, bad config, or unusable input data."""


@dataclass
class RunConfig:
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
    scales: str = "448,224,112"
    multi_scale: bool = True
    train_transforms: bool = True
    test_transform_count: int = 64
    sample_factors: bool = True
    rotations: int = 8
    blur_sigma: float = 0.0  # 0 = image_width / 64

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            eps=self.eps, blocks=self.blocks, hidden_width=self.hidden_width,
            clamp_alpha=self.clamp_alpha, seed=self.seed,
            holdout_fraction=self.holdout_fraction, noise_std=self.noise_std)

    def scale_config(self) -> MultiScaleConfig:
        try:
            scales = tuple(int(s) for s in self.scales.split(","))
        except ValueError:
            raise UsageError(f"bad scales list: {self.scales!r}")
        return MultiScaleConfig(scales, self.multi_scale)


_BOOL_KEYS = {"multi_scale", "train_transforms", "sample_factors"}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_config(path) -> RunConfig:
    """Parse a key=value config file; unknown keys fail with their line number."""
    config = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if key in _BOOL_KEYS:
                    setattr(config, key, _parse_bool(value))
                elif key == "scales":
                    setattr(config, key, value)
                elif types[key] in ("int", int):
                    setattr(config, key, int(value))
                else:
                    setattr(config, key, float(value))
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}")
    return config


def worker_count() -> int:
    raw = os.environ.get("DIFFERFLOW_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"DIFFERFLOW_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise UsageError("DIFFERFLOW_THREADS must be >= 0")
    return n if n > 0 else min(8, os.cpu_count() or 1)


def _parallel_map(fn, items):
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _apply_overrides(config: RunConfig, args) -> RunConfig:
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(config, f.name, value)
    return config


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(config, args)


def _extractor_for_training(args, config: RunConfig) -> ExtractorBundle:
    if args.weights:
        tf = store.read_tensors(args.weights)
        bundle = store.extractor_from_tensorfile(tf, prefix="extractor.")
        if bundle is None:
            raise UsageError(f"{args.weights}: no extractor found in weight file")
        bundle.config.multi_scale = config.multi_scale
        return bundle
    spec = toy_extractor(config.seed)
    return ExtractorBundle(spec, config.scale_config())


def cmd_train(args) -> int:
    config = _load_run_config(args)
    data = Path(args.data)
    out = Path(args.out)
    if not data.exists():
        raise UsageError(f"training data not found: {data}")
    extractor_bundle = None
    if data.is_dir():
        extractor_bundle = _extractor_for_training(args, config)
        entries = imageops.list_split(data, "train")
        images = [imageops.load_image(e.path) for e in entries]
        spec, scale_cfg = extractor_bundle.spec, extractor_bundle.config

        def features(epoch: int) -> np.ndarray:
            if config.train_transforms:
                specs = imageops.training_transforms([config.seed, 30, epoch], len(images),
                                                     sample_factors=config.sample_factors)
            else:
                specs = [imageops.TransformSpec.identity()] * len(images)
            rows = _parallel_map(lambda pair: extract(pair[1].apply(pair[0]), spec, scale_cfg),
                                 list(zip(images, specs)))
            return np.stack(rows)
    else:
        dim, records = store.read_features(data)
        features = np.stack([r.values for r in records])

    result = train(features, config.train_config())
    store.save_model(out, result.model, extractor_bundle)
    with open(f"{out}.log", "w", encoding="utf-8") as fh:
        for epoch, value in enumerate(result.epoch_nll):
            fh.write(f"{epoch},{value!r}\n")
    final = result.epoch_nll[-1] if result.epoch_nll else float("nan")
    print(f"trained {config.epochs} epochs, final mean NLL {final}, model -> {out}")
    return 0


def cmd_score(args) -> int:
    config = _load_run_config(args)
    model_path = Path(args.model)
    if not model_path.is_file():
        raise UsageError(f"model file not found: {model_path}")
    model, bundle = store.load_model(model_path)
    data = Path(args.data)
    n_transforms = args.transforms if args.transforms is not None else config.test_transform_count

    if data.is_dir():
        if bundle is None:
            raise UsageError("model has no embedded extractor; score image "
                             "directories with a model trained on images")
        entries = imageops.list_split(data, "test")
        transforms = sample_transforms([config.seed, 31], count=n_transforms,
                                       sample_factors=config.sample_factors)

        def score_one(entry):
            img = imageops.load_image(entry.path)
            return detect.anomaly_score(img, model, bundle.spec, bundle.config,
                                        transforms, entry.sample_id, entry.label)

        reports = _parallel_map(score_one, entries)
    elif data.is_file():
        dim, records = store.read_features(data)
        if dim != model.dim:
            raise UsageError(f"feature dim {dim} does not match model dim {model.dim}")
        feats = np.stack([r.values for r in records])
        reports = detect.score_feature_groups(model, feats,
                                              [r.sample_id for r in records],
                                              [r.label for r in records])
    else:
        raise UsageError(f"score data not found: {data}")

    detect.write_scores(args.out, reports)
    print(f"scored {len(reports)} samples -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    ids, scores, labels = detect.read_scores(args.scores)
    if np.any(labels < 0):
        raise UsageError(f"{args.scores}: contains unlabeled samples; cannot evaluate")
    try:
        curve = metrics.roc_curve(scores, labels)
    except ValueError as exc:
        raise UsageError(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_roc_csv(out / "roc.csv", curve)
    clip_max = args.hist_clip_max if args.hist_clip_max is not None else float(scores.max())
    counts, edges = metrics.histogram(scores, args.hist_bins, clip_max)
    metrics.write_hist_csv(out / "hist.csv", counts, edges)
    summary = f"auroc={curve.auroc!r}"
    (out / "auroc.txt").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return 0


def cmd_localize(args) -> int:
    config = _load_run_config(args)
    model_path = Path(args.model)
    if not model_path.is_file():
        raise UsageError(f"model file not found: {model_path}")
    model, bundle = store.load_model(model_path)
    if bundle is None:
        raise UsageError("model has no embedded extractor; localization needs a "
                         "model trained on images, not on precomputed features")
    image_path = Path(args.image)
    if not image_path.is_file():
        raise UsageError(f"image not found: {image_path}")
    img = imageops.load_image(image_path)
    sigma = config.blur_sigma if config.blur_sigma > 0 else img.shape[1] / 64.0
    rotations = detect.default_rotations(config.rotations)
    gmap = detect.localize(img, model, bundle.spec, bundle.config,
                           rotations=rotations, blur_sigma=sigma)
    detect.save_map_png(args.out, gmap)
    print(f"gradient map -> {args.out} (max={gmap.max_value!r})")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind in ("gaussian", "mixture"):
        dim = args.dim if args.dim is not None else (16 if args.kind == "gaussian" else 8)
        maker = synth.gaussian_features if args.kind == "gaussian" else synth.mixture_features
        train_set, test_set = maker(args.seed, args.train_count, args.test_count, dim)
        for name, fset in (("train.dff", train_set), ("test.dff", test_set)):
            records = [store.FeatureRecord(sid, label, 0, row)
                       for sid, label, row in zip(fset.sample_ids, fset.labels, fset.features)]
            store.write_features(out / name, dim, records)
        print(f"{args.kind} features -> {out}/train.dff, {out}/test.dff (D={dim})")
    elif args.kind == "texture":
        boxes = synth.texture_dataset(out, args.seed, n_train=args.train_count,
                                      n_test_each=args.test_count, size=args.size)
        print(f"texture dataset -> {out} ({args.train_count} train, "
              f"{args.test_count}+{args.test_count} test, {len(boxes)} blemish boxes)")
    else:
        raise UsageError(f"unknown synthetic kind: {args.kind}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--beta1", type=float)
    parser.add_argument("--beta2", type=float)
    parser.add_argument("--eps", type=float)
    parser.add_argument("--blocks", type=int)
    parser.add_argument("--hidden-width", dest="hidden_width", type=int)
    parser.add_argument("--clamp-alpha", dest="clamp_alpha", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    parser.add_argument("--noise-std", dest="noise_std", type=float)
    parser.add_argument("--scales")
    parser.add_argument("--multi-scale", dest="multi_scale", action="store_true", default=None)
    parser.add_argument("--no-multi-scale", dest="multi_scale", action="store_false", default=None)
    parser.add_argument("--train-transforms", dest="train_transforms",
                        action="store_true", default=None)
    parser.add_argument("--no-train-transforms", dest="train_transforms",
                        action="store_false", default=None)
    parser.add_argument("--sample-factors", dest="sample_factors",
                        action="store_true", default=None)
    parser.add_argument("--no-sample-factors", dest="sample_factors",
                        action="store_false", default=None)
    parser.add_argument("--test-transform-count", dest="test_transform_count", type=int)
    parser.add_argument("--rotations", type=int)
    parser.add_argument("--blur-sigma", dest="blur_sigma", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="differflow",
        description="Normalizing-flow defect detection on multi-scale image features")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a flow to a dataset directory or feature file")
    p.add_argument("--data", required=True, help="dataset dir (train/good/*.png) or .dff file")
    p.add_argument("--out", required=True, help="output model file (.dfn)")
    p.add_argument("--weights", help="extractor weight file; defaults to the seeded toy extractor")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write anomaly scores for test samples")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="dataset dir (test/...) or .dff file")
    p.add_argument("--transforms", type=int, help="number of test transforms (1 = original only)")
    p.add_argument("--out", required=True, help="output scores.csv")
    _add_config_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute AUROC, ROC curve, and score histogram")
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True, help="output report directory")
    p.add_argument("--hist-bins", dest="hist_bins", type=int, default=40)
    p.add_argument("--hist-clip-max", dest="hist_clip_max", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("localize", help="write a defect gradient map for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output PNG (sidecar <out>.txt holds the max)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("synth", help="generate synthetic datasets")
    p.add_argument("--kind", required=True, choices=("gaussian", "mixture", "texture"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-count", dest="train_count", type=int, default=None)
    p.add_argument("--test-count", dest="test_count", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth":
        if args.train_count is None:
            args.train_count = 64 if args.kind == "texture" else 2000
        if args.test_count is None:
            args.test_count = 32 if args.kind == "texture" else 500
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, store.StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, NonFiniteError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
