"""Node feature tiers: loading, random baselines, standardization, concatenation."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .graph import Split

STD_EPS = 1e-8
_FTRX_MAGIC = b"FTRX"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class RandomSpec:
    dim: int
    seed: int


@dataclass(frozen=True)
class FileSpec:
    path: str


@dataclass(frozen=True)
class ConcatSpec:
    children: tuple["FeatureSpec", ...]

    def __post_init__(self):
        if not self.children:
            raise FeatureError("ConcatSpec needs at least one child")


@dataclass(frozen=True)
class StandardizedSpec:
    inner: "FeatureSpec"


FeatureSpec = Union[RandomSpec, FileSpec, ConcatSpec, StandardizedSpec]


def random_features(num_nodes: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=(num_nodes, dim)).astype(np.float32)


def standardize(x: np.ndarray, split: np.ndarray) -> np.ndarray:
    """Per-column z-score using statistics of the train rows only."""
    x64 = np.asarray(x, dtype=np.float64)
    ref = x64[np.asarray(split) == Split.TRAIN]
    if ref.shape[0] == 0:
        raise FeatureError("standardization needs at least one train node")
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    # constant columns collapse to zero instead of dividing by ~0
    sd = np.where(sd < STD_EPS, np.inf, sd)
    return ((x64 - mu) / sd).astype(np.float32)


def materialize(spec: FeatureSpec, num_nodes: int, split: np.ndarray, base_dir=None) -> np.ndarray:
    """Evaluate a feature spec into a ``num_nodes x dim`` float32 matrix."""
    if isinstance(spec, RandomSpec):
        out = random_features(num_nodes, spec.dim, spec.seed)
    elif isinstance(spec, FileSpec):
        path = Path(spec.path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        out = load_feature_file(path)
        if out.shape[0] != num_nodes:
            raise FeatureError(f"{path}: {out.shape[0]} rows, expected {num_nodes}")
    elif isinstance(spec, ConcatSpec):
        parts = [materialize(c, num_nodes, split, base_dir) for c in spec.children]
        out = np.concatenate(parts, axis=1)
    elif isinstance(spec, StandardizedSpec):
        out = standardize(materialize(spec.inner, num_nodes, split, base_dir), split)
    else:
        raise TypeError(f"not a feature spec: {spec!r}")
    if not np.all(np.isfinite(out)):
        raise FeatureError("feature matrix contains non-finite values")
    return out


def spec_dim(spec: FeatureSpec, base_dir=None) -> int:
    if isinstance(spec, RandomSpec):
        return spec.dim
    if isinstance(spec, FileSpec):
        path = Path(base_dir, spec.path) if base_dir is not None else Path(spec.path)
        return read_ftrx_header(path)[1]
    if isinstance(spec, ConcatSpec):
        return sum(spec_dim(c, base_dir) for c in spec.children)
    if isinstance(spec, StandardizedSpec):
        return spec_dim(spec.inner, base_dir)
    raise TypeError(spec)


def tier_spec(names: str | Sequence[str], suffix: str = ".ftrx") -> FeatureSpec:
    """``"clap_like+tags_like"`` -> standardized concatenation of tier files."""
    if isinstance(names, str):
        names = [n for n in names.split("+") if n]
    if not names:
        raise FeatureError("empty feature list")
    files = tuple(FileSpec(f"{n}{suffix}") for n in names)
    inner = files[0] if len(files) == 1 else ConcatSpec(files)
    return StandardizedSpec(inner)


# ---------------------------------------------------------------------------
# file formats


def write_ftrx(x: np.ndarray, path) -> None:
    x = np.asarray(x)
    if x.ndim != 2:
        raise FeatureError("FTRX stores 2-D matrices")
    with open(path, "wb") as fh:
        fh.write(_FTRX_MAGIC)
        fh.write(struct.pack("<II", *x.shape))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_ftrx_header(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(12)
    if head[:4] != _FTRX_MAGIC:
        raise FeatureError(f"{path}: bad magic, not an FTRX file")
    if len(head) < 12:
        raise FeatureError(f"{path}: truncated header")
    return struct.unpack("<II", head[4:12])


def read_ftrx(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != _FTRX_MAGIC:
        raise FeatureError(f"{path}: bad magic, not an FTRX file")
    if len(data) < 12:
        raise FeatureError(f"{path}: truncated header")
    rows, cols = struct.unpack_from("<II", data, 4)
    if len(data) - 12 != 4 * rows * cols:
        raise FeatureError(f"{path}: truncated payload ({len(data) - 12} bytes for {rows}x{cols})")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float32)


def write_feature_csv(x: np.ndarray, path, ids: Sequence[str] | None = None) -> None:
    x = np.asarray(x, dtype=np.float32)
    ids = ids if ids is not None else [str(i) for i in range(x.shape[0])]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"f{j}" for j in range(x.shape[1])])
        for node, row in zip(ids, x.tolist()):
            w.writerow([node] + [repr(v) for v in row])


def read_feature_csv(path, ids: Sequence[str] | None = None) -> np.ndarray:
    """Rows are reordered to ``ids`` (default: integer ids ``0..n-1``)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
            raise FeatureError(f"{path}: header must be 'id,f0,...,f{{d-1}}'")
        rows = {}
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise FeatureError(f"{path}:{lineno}: expected {len(header)} fields")
            if rec[0] in rows:
                raise FeatureError(f"{path}:{lineno}: duplicate id {rec[0]!r}")
            rows[rec[0]] = [float(v) for v in rec[1:]]
    if ids is None:
        ids = [str(i) for i in range(len(rows))]
    missing = [i for i in ids if i not in rows]
    if missing:
        raise FeatureError(f"{path}: missing row for node {missing[0]!r}")
    if len(rows) != len(ids):
        raise FeatureError(f"{path}: {len(rows)} rows, expected {len(ids)}")
    return np.array([rows[i] for i in ids], dtype=np.float32).reshape(len(ids), len(header) - 1)


def load_feature_file(path, ids: Sequence[str] | None = None) -> np.ndarray:
    """Load an FTRX binary or ``id,f0,...`` CSV feature file and check finiteness."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _FTRX_MAGIC or path.suffix.lower() == ".ftrx":
        x = read_ftrx(path)
    else:
        x = read_feature_csv(path, ids)
    if ids is not None and x.shape[0] != len(ids):
        raise FeatureError(f"{path}: {x.shape[0]} rows, expected {len(ids)}")
    if not np.all(np.isfinite(x)):
        raise FeatureError(f"{path}: non-finite feature value")
    return x
