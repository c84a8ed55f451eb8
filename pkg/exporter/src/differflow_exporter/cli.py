"""Entry points: `export-weights` and `export-features`."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import backbone, pipeline
from .formats import read_tensor_file, write_feature_file, write_tensor_file


def weights_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-weights",
        description="Export a zoo backbone's conv weights into the DFN1 weight format")
    parser.add_argument("--backbone", default="alexnet", choices=["alexnet"])
    parser.add_argument("--out", required=True)
    parser.add_argument("--scales", default="448,224,112")
    parser.add_argument("--pretrained", dest="pretrained", action="store_true", default=True)
    parser.add_argument("--no-pretrained", dest="pretrained", action="store_false",
                        help="seeded random weights with the same topology (offline use)")
    parser.add_argument("--init-seed", type=int, default=0)
    args = parser.parse_args(argv)
    try:
        features = backbone.load_alexnet(args.pretrained, args.init_seed)
        scales = tuple(int(s) for s in args.scales.split(","))
        archive = backbone.package_weights(features, args.backbone, scales)
        if not args.pretrained:
            archive.metadata["init_seed"] = str(args.init_seed)
            archive.metadata["pretrained"] = "0"
        write_tensor_file(args.out, archive)
    except (backbone.BackboneError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    dim = archive.metadata["feature_dim"]
    print(f"{args.backbone} conv weights -> {args.out} (feature dim {dim})")
    return 0


def _dataset_entries(root: Path):
    entries = []
    for split in ("train", "test"):
        base = root / split
        if not base.is_dir():
            continue
        for sub in sorted(p for p in base.iterdir() if p.is_dir()):
            label = 0 if sub.name == "good" else 1
            for png in sorted(sub.glob("*.png")):
                entries.append((f"{split}/{sub.name}/{png.name}", png, label))
    if not entries:
        raise FileNotFoundError(f"no train/ or test/ PNG files under {root}")
    return entries


def features_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-features",
        description="Precompute pooled multi-scale features for a dataset directory")
    parser.add_argument("--data", required=True, help="dataset root (train/..., test/...)")
    parser.add_argument("--weights", required=True, help="DFN1 weight file from export-weights")
    parser.add_argument("--n", type=int, default=16, help="transforms per sample (1 = original)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--no-factors", dest="factors", action="store_false", default=True,
                        help="rotations only, no brightness/contrast jitter")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        archive = read_tensor_file(args.weights)
        stack, info = backbone.rebuild_from_archive(archive)
        entries = _dataset_entries(Path(args.data))
        transforms = pipeline.sample_transforms([args.seed, 31], args.n, args.factors)
        records = []
        for sample_id, path, label in entries:
            img = pipeline.load_image(path)
            for t_id, transform in enumerate(transforms):
                feats = pipeline.pooled_features(transform.apply(img), stack,
                                                 info["mean"], info["std"], info["scales"])
                records.append((sample_id, label, t_id, feats))
        dim = len(records[0][3])
        write_feature_file(args.out, dim, records)
    except (FileNotFoundError, ValueError, backbone.BackboneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{len(records)} records ({len(entries)} samples x {args.n} transforms, "
          f"D={dim}, seed={args.seed}) -> {args.out}")
    return 0
