"""Binary file formats for weights/models ("DFN1") and feature sets ("DFF1").

Both formats are little-endian and platform independent; reading back a
written file reproduces it byte for byte.  These layouts are the contract
shared with the standalone weight/feature exporter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .extractor import ConvNetSpec, MultiScaleConfig, parse_chain
from .flow import CouplingBlock, FlowModel, Subnet
from .autodiff import Tensor

TENSOR_MAGIC = b"DFN1"
FEATURE_MAGIC = b"DFF1"
FORMAT_VERSION = 1
_MAX_ELEMENTS = 1 << 40


class StoreError(Exception):
    """Base class for malformed or unreadable store files."""


class BadMagicError(StoreError):
    pass


class VersionError(StoreError):
    pass


class TruncatedFileError(StoreError):
    pass


class DimOverflowError(StoreError):
    pass


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise TruncatedFileError(f"{self.path}: truncated while reading {what}")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def i8(self, what: str) -> int:
        return struct.unpack("<b", self.take(1, what))[0]

    def string(self, what: str) -> str:
        n = self.u32(f"{what} length")
        return self.take(n, what).decode("utf-8")

    def floats(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)

    def done(self) -> None:
        if self.off != len(self.data):
            raise StoreError(f"{self.path}: {len(self.data) - self.off} trailing bytes")


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


@dataclass
class TensorFile:
    metadata: dict[str, str] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def write_tensors(path, tf: TensorFile) -> None:
    chunks = [TENSOR_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    meta = "".join(f"{k}={v}\n" for k, v in tf.metadata.items()).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta)))
    chunks.append(meta)
    chunks.append(struct.pack("<I", len(tf.tensors)))
    for name, arr in tf.tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        chunks.append(_pack_string(name))
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_tensors(path) -> TensorFile:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    magic = reader.take(4, "magic")
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    meta_raw = reader.take(reader.u32("metadata length"), "metadata").decode("utf-8")
    metadata: dict[str, str] = {}
    for line in meta_raw.splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        metadata[key] = value
    count = reader.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name = reader.string(f"tensor {i} name")
        rank = reader.u32(f"tensor {i} rank")
        dims = [reader.u32(f"tensor {i} dim") for _ in range(rank)]
        n_elem = 1
        for d in dims:
            n_elem *= d
        if n_elem > _MAX_ELEMENTS:
            raise DimOverflowError(f"{path}: tensor {name!r} has {n_elem} elements")
        tensors[name] = reader.floats(n_elem, f"tensor {name!r} payload").reshape(dims)
    reader.done()
    return TensorFile(metadata, tensors)


@dataclass
class FeatureRecord:
    sample_id: str
    label: int  # -1 unknown / 0 normal / 1 anomalous
    transform_id: int
    values: np.ndarray


def write_features(path, dim: int, records: list[FeatureRecord]) -> None:
    seen = set()
    chunks = [FEATURE_MAGIC, struct.pack("<II", FORMAT_VERSION, dim),
              struct.pack("<Q", len(records))]
    for i, rec in enumerate(records):
        values = np.ascontiguousarray(rec.values, dtype=np.float32)
        if values.shape != (dim,):
            raise ValueError(f"record {i} has {values.shape} values, expected ({dim},)")
        key = (rec.sample_id, rec.transform_id)
        if key in seen:
            raise ValueError(f"duplicate (sample_id, transform_id) pair: {key}")
        seen.add(key)
        chunks.append(_pack_string(rec.sample_id))
        chunks.append(struct.pack("<bI", rec.label, rec.transform_id))
        chunks.append(values.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_features(path) -> tuple[int, list[FeatureRecord]]:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    magic = reader.take(4, "magic")
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    dim = reader.u32("feature dim")
    count = reader.u64("record count")
    records = []
    seen = set()
    for i in range(count):
        sample_id = reader.string(f"record {i} sample id")
        label = reader.i8(f"record {i} label")
        transform_id = reader.u32(f"record {i} transform id")
        values = reader.floats(dim, f"record {i} features")
        key = (sample_id, transform_id)
        if key in seen:
            raise StoreError(f"{path}: duplicate (sample_id, transform_id) pair {key}")
        seen.add(key)
        records.append(FeatureRecord(sample_id, label, transform_id, values))
    reader.done()
    return dim, records


# ---------------------------------------------------------------------------
# model and extractor packaging on top of the tensor format
# ---------------------------------------------------------------------------

@dataclass
class ExtractorBundle:
    spec: ConvNetSpec
    config: MultiScaleConfig


def _floats_csv(values) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(values).ravel())


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=np.float32)


def extractor_to_tensorfile(bundle: ExtractorBundle, tf: TensorFile | None = None,
                            prefix: str = "extractor.") -> TensorFile:
    tf = tf or TensorFile()
    spec, cfg = bundle.spec, bundle.config
    tf.metadata[f"{prefix}chain"] = spec.chain_string()
    tf.metadata[f"{prefix}mean"] = _floats_csv(spec.preprocess_mean)
    tf.metadata[f"{prefix}std"] = _floats_csv(spec.preprocess_std)
    tf.metadata[f"{prefix}scales"] = ",".join(str(s) for s in cfg.scales)
    tf.metadata[f"{prefix}multi_scale"] = "1" if cfg.multi_scale else "0"
    for i, layer in enumerate(spec.conv_layers()):
        tf.tensors[f"{prefix}conv{i}.weight"] = layer.weight
        tf.tensors[f"{prefix}conv{i}.bias"] = layer.bias
    return tf


def extractor_from_tensorfile(tf: TensorFile, prefix: str = "extractor.") -> ExtractorBundle | None:
    chain = tf.metadata.get(f"{prefix}chain")
    if chain is None:
        return None
    weights = []
    i = 0
    while f"{prefix}conv{i}.weight" in tf.tensors:
        weights.append((tf.tensors[f"{prefix}conv{i}.weight"], tf.tensors[f"{prefix}conv{i}.bias"]))
        i += 1
    layers = parse_chain(chain, weights)
    spec = ConvNetSpec(layers,
                       preprocess_mean=_parse_floats(tf.metadata[f"{prefix}mean"]),
                       preprocess_std=_parse_floats(tf.metadata[f"{prefix}std"]))
    scales = tuple(int(s) for s in tf.metadata[f"{prefix}scales"].split(","))
    cfg = MultiScaleConfig(scales, tf.metadata.get(f"{prefix}multi_scale", "1") == "1")
    return ExtractorBundle(spec, cfg)


def save_model(path, model: FlowModel, extractor: ExtractorBundle | None = None,
               extra_metadata: dict[str, str] | None = None) -> None:
    tf = TensorFile()
    tf.metadata["kind"] = "flow-model"
    tf.metadata["blocks"] = str(len(model.blocks))
    tf.metadata["dim"] = str(model.dim)
    tf.metadata["alpha"] = repr(model.alpha)
    tf.metadata["seed"] = str(model.seed)
    tf.metadata["hidden_width"] = str(model.hidden_width)
    for key, value in (extra_metadata or {}).items():
        tf.metadata[key] = value
    if model.input_mean is not None:
        tf.tensors["standardize.mean"] = model.input_mean.astype(np.float32)
        tf.tensors["standardize.std"] = model.input_std.astype(np.float32)
    for bi, block in enumerate(model.blocks):
        tf.tensors[f"block{bi}.permutation"] = block.permutation.astype(np.float32)
        for ni, subnet in ((1, block.subnet1), (2, block.subnet2)):
            for li in range(4):
                tf.tensors[f"block{bi}.net{ni}.w{li}"] = subnet.weights[li].data
                tf.tensors[f"block{bi}.net{ni}.b{li}"] = subnet.biases[li].data
    if extractor is not None:
        extractor_to_tensorfile(extractor, tf)
    write_tensors(path, tf)


def load_model(path) -> tuple[FlowModel, ExtractorBundle | None]:
    tf = read_tensors(path)
    if tf.metadata.get("kind") != "flow-model":
        raise StoreError(f"{path}: not a flow model file (kind={tf.metadata.get('kind')!r})")
    n_blocks = int(tf.metadata["blocks"])
    dim = int(tf.metadata["dim"])
    alpha = float(tf.metadata["alpha"])
    seed = int(tf.metadata["seed"])
    hidden_width = int(tf.metadata["hidden_width"])
    blocks = []
    for bi in range(n_blocks):
        perm = tf.tensors[f"block{bi}.permutation"].astype(np.intp)
        subnets = []
        for ni in (1, 2):
            weights = [Tensor(tf.tensors[f"block{bi}.net{ni}.w{li}"]) for li in range(4)]
            biases = [Tensor(tf.tensors[f"block{bi}.net{ni}.b{li}"]) for li in range(4)]
            subnets.append(Subnet(weights, biases))
        blocks.append(CouplingBlock(perm, subnets[0], subnets[1], alpha))
    model = FlowModel(blocks, dim, alpha, seed, hidden_width)
    if "standardize.mean" in tf.tensors:
        model.set_standardization(tf.tensors["standardize.mean"], tf.tensors["standardize.std"])
    return model, extractor_from_tensorfile(tf)
