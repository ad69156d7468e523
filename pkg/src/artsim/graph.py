"""Undirected artist graph in CSR form, split assignments and phase views."""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised for malformed edge lists, split files or CSR caches."""


class Split(enum.IntEnum):
    TRAIN = 0
    VAL = 1
    TEST = 2


class Phase(enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


_SPLIT_NAMES = {"train": Split.TRAIN, "val": Split.VAL, "test": Split.TEST}


@dataclass(frozen=True, eq=False)
class Graph:
    """Symmetric CSR adjacency. ``col_idx`` is sorted ascending within each row."""

    num_nodes: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_edges(cls, num_nodes: int, src: Iterable[int], dst: Iterable[int]) -> "Graph":
        """Build from (possibly one-directional, duplicated) edge arrays.

        Edges are symmetrized, duplicates merged and self-loops dropped.
        """
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ValueError("src and dst must have the same length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
            raise ValueError("edge endpoint out of range")
        keep = src != dst
        src, dst = src[keep], dst[keep]
        u = np.concatenate([src, dst])
        v = np.concatenate([dst, src])
        keys = np.unique(u * num_nodes + v)
        rows, cols = np.divmod(keys, num_nodes)
        counts = np.bincount(rows, minlength=num_nodes)
        row_ptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=row_ptr[1:])
        return cls(num_nodes, row_ptr, cols.astype(np.int64))

    @property
    def num_arcs(self) -> int:
        """Number of stored directed entries (twice the undirected edge count)."""
        return int(self.col_idx.size)

    @property
    def num_edges(self) -> int:
        return self.num_arcs // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[v] : self.row_ptr[v + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def arcs(self) -> tuple[np.ndarray, np.ndarray]:
        """All directed entries as (row, col) arrays in CSR order."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        return rows, self.col_idx

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Undirected edges with u < v, sorted lexicographically."""
        rows, cols = self.arcs()
        upper = rows < cols
        return rows[upper], cols[upper]

    def edge_set(self) -> set[tuple[int, int]]:
        u, v = self.edges()
        return set(zip(u.tolist(), v.tolist()))

    def has_edge(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Vectorized adjacency test for paired node arrays."""
        keys = self._arc_keys
        q = np.asarray(u, dtype=np.int64) * self.num_nodes + np.asarray(v, dtype=np.int64)
        if keys.size == 0:
            return np.zeros(q.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(keys, q), keys.size - 1)
        return keys[pos] == q

    @cached_property
    def _arc_keys(self) -> np.ndarray:
        rows, cols = self.arcs()
        return rows * self.num_nodes + cols

    def aggregation_matrix(self, mode: str, dtype=np.float64) -> sp.csr_matrix:
        """Sparse operator A with (A @ X)[v] = sum or mean of X over N(v)."""
        key = (mode, np.dtype(dtype).str)
        if key not in self._cache:
            if mode == "sum":
                vals = np.ones(self.num_arcs, dtype=dtype)
            elif mode == "mean":
                deg = self.degrees()
                inv = np.zeros(self.num_nodes, dtype=np.float64)
                inv[deg > 0] = 1.0 / deg[deg > 0]
                vals = np.repeat(inv, deg).astype(dtype)
            else:
                raise ValueError(f"unknown aggregation {mode!r}")
            mat = sp.csr_matrix(
                (vals, self.col_idx, self.row_ptr), shape=(self.num_nodes, self.num_nodes)
            )
            self._cache[key] = (mat, mat.T.tocsr())
        return self._cache[key]

    def check(self) -> None:
        """Raise AssertionError unless all CSR invariants hold."""
        rp, ci, n = self.row_ptr, self.col_idx, self.num_nodes
        assert rp.shape == (n + 1,)
        assert rp[0] == 0 and rp[-1] == ci.size
        assert np.all(np.diff(rp) >= 0)
        rows, cols = self.arcs()
        assert np.all(rows != cols), "self-loop"
        if ci.size:
            keys = rows * n + cols
            assert np.all(np.diff(keys) > 0), "row not strictly sorted"
            assert np.array_equal(np.sort(cols * n + rows), keys), "asymmetric"

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        u, v = self.edges()
        return Graph.from_edges(self.num_nodes, perm[u], perm[v])


# ---------------------------------------------------------------------------
# edge lists


def _lines(source) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        yield from source
    else:
        yield from source


def load_edge_list(source, ids: Sequence[str] | None = None) -> tuple[Graph, list[str]]:
    """Parse a whitespace/TAB separated edge list.

    ``source`` is a path, an open text file or an iterable of lines.  External
    ids are mapped to dense indices in first-seen order unless ``ids`` fixes
    the mapping up front (then unknown ids are an error).
    """
    index: dict[str, int] = {}
    fixed = ids is not None
    if fixed:
        index = {s: i for i, s in enumerate(ids)}
        if len(index) != len(ids):
            raise GraphFormatError("duplicate id in node list")
    src: list[int] = []
    dst: list[int] = []
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected 'src<TAB>dst', got {line!r}")
        ends = []
        for tok in parts:
            if tok not in index:
                if fixed:
                    raise GraphFormatError(f"line {lineno}: unknown node id {tok!r}")
                index[tok] = len(index)
            ends.append(index[tok])
        src.append(ends[0])
        dst.append(ends[1])
    if not index:
        raise GraphFormatError("empty graph")
    names = list(ids) if fixed else list(index)
    return Graph.from_edges(len(names), src, dst), names


def save_edge_list(g: Graph, path, ids: Sequence[str] | None = None) -> None:
    u, v = g.edges()
    names = ids if ids is not None else [str(i) for i in range(g.num_nodes)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in zip(u.tolist(), v.tolist()):
            fh.write(f"{names[a]}\t{names[b]}\n")


def load_node_ids(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def save_node_ids(ids: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{s}\n" for s in ids)


# ---------------------------------------------------------------------------
# binary CSR cache

_GCSR_MAGIC = b"GCSR"


def save_gcsr(g: Graph, path) -> None:
    """Write ``magic, u64 num_nodes, u64 num_arcs, u64 row_ptr[], u32 col_idx[]``."""
    with open(path, "wb") as fh:
        fh.write(_GCSR_MAGIC)
        fh.write(struct.pack("<QQ", g.num_nodes, g.num_arcs))
        fh.write(g.row_ptr.astype("<u8").tobytes())
        fh.write(g.col_idx.astype("<u4").tobytes())


def load_gcsr(path) -> Graph:
    data = Path(path).read_bytes()
    if data[:4] != _GCSR_MAGIC:
        raise GraphFormatError("not a GCSR file (bad magic)")
    if len(data) < 20:
        raise GraphFormatError("truncated GCSR header")
    n, m = struct.unpack_from("<QQ", data, 4)
    off = 20
    need = off + 8 * (n + 1) + 4 * m
    if len(data) != need:
        raise GraphFormatError(f"GCSR payload size {len(data)} != expected {need}")
    row_ptr = np.frombuffer(data, dtype="<u8", count=n + 1, offset=off).astype(np.int64)
    col_idx = np.frombuffer(data, dtype="<u4", count=m, offset=off + 8 * (n + 1)).astype(np.int64)
    g = Graph(int(n), row_ptr, col_idx)
    try:
        g.check()
    except AssertionError as exc:
        raise GraphFormatError(f"GCSR invariants violated: {exc}") from None
    return g


# ---------------------------------------------------------------------------
# splits


def check_split(split: np.ndarray, num_nodes: int | None = None) -> np.ndarray:
    split = np.asarray(split, dtype=np.int8)
    if num_nodes is not None and split.shape != (num_nodes,):
        raise ValueError(f"split covers {split.size} nodes, graph has {num_nodes}")
    if split.size and (split.min() < 0 or split.max() > 2):
        raise ValueError("split labels must be 0 (train), 1 (val) or 2 (test)")
    return split


def split_counts(split: np.ndarray) -> dict[str, int]:
    c = np.bincount(np.asarray(split, dtype=np.int64), minlength=3)
    return {"train": int(c[0]), "val": int(c[1]), "test": int(c[2])}


def load_split(source, ids: Sequence[str]) -> np.ndarray:
    """Read ``node_id<TAB>{train|val|test}`` lines into a label array aligned to ``ids``."""
    index = {s: i for i, s in enumerate(ids)}
    labels = np.full(len(ids), -1, dtype=np.int8)
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"line {lineno}: expected 'node_id<TAB>label'")
        node, name = parts
        if name not in _SPLIT_NAMES:
            raise GraphFormatError(f"line {lineno}: unknown split label {name!r}")
        if node not in index:
            raise GraphFormatError(f"line {lineno}: unknown node {node!r}")
        i = index[node]
        if labels[i] >= 0:
            raise GraphFormatError(f"line {lineno}: duplicate node {node!r}")
        labels[i] = _SPLIT_NAMES[name]
    missing = np.flatnonzero(labels < 0)
    if missing.size:
        raise GraphFormatError(f"node {ids[missing[0]]!r} missing from split ({missing.size} unlisted)")
    if np.any(np.bincount(labels, minlength=3) == 0):
        raise GraphFormatError(f"every split must be non-empty, got {split_counts(labels)}")
    return labels


def save_split(split: np.ndarray, path, ids: Sequence[str] | None = None) -> None:
    names = ids if ids is not None else [str(i) for i in range(len(split))]
    inv = {v: k for k, v in _SPLIT_NAMES.items()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for node, lab in zip(names, np.asarray(split).tolist()):
            fh.write(f"{node}\t{inv[Split(lab)]}\n")


# ---------------------------------------------------------------------------
# phase views


def _visible_mask(lu: np.ndarray, lv: np.ndarray, phase: Phase) -> np.ndarray:
    if phase is Phase.TRAIN:
        return (lu == Split.TRAIN) & (lv == Split.TRAIN)
    if phase is Phase.VAL:
        return (lu <= Split.VAL) & (lv <= Split.VAL) & ~((lu == Split.VAL) & (lv == Split.VAL))
    if phase is Phase.TEST:
        return ~((lu == Split.TEST) & (lv == Split.TEST))
    raise ValueError(phase)


def visible_graph(g: Graph, split: np.ndarray, phase: Phase) -> Graph:
    """Edges a model may pass messages over during ``phase``.

    Train sees Train-Train edges; Val adds Train-Val; Test sees everything
    except Test-Test.  Edges inside the evaluated split stay hidden.
    """
    split = check_split(split, g.num_nodes)
    u, v = g.edges()
    keep = _visible_mask(split[u], split[v], phase)
    return Graph.from_edges(g.num_nodes, u[keep], v[keep])


def hidden_relevance(g: Graph, split: np.ndarray, phase: Phase) -> dict[int, set[int]]:
    """Map each eval node with hidden same-split edges to those neighbours."""
    if phase is Phase.TRAIN:
        raise ValueError("hidden_relevance is only defined for the val and test phases")
    split = check_split(split, g.num_nodes)
    target = Split.VAL if phase is Phase.VAL else Split.TEST
    rows, cols = g.arcs()
    mask = (split[rows] == target) & (split[cols] == target)
    out: dict[int, set[int]] = {}
    for a, b in zip(rows[mask].tolist(), cols[mask].tolist()):
        out.setdefault(a, set()).add(b)
    return out
