"""Dense 2-D tensors with a reverse-mode tape.

Every primitive is a method on :class:`Tape`; results that depend on a
tracked tensor are recorded, and :meth:`Tape.backward` replays the records
in exact reverse order, accumulating into ``.grad`` buffers.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..graph import Graph


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a 1x1 tensor")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad[...] = 0

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


class Tape:
    """Ordered record of primitive applications on tracked tensors."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], None]]] = []

    def __len__(self) -> int:
        return len(self.records)

    def _emit(self, value: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
        tracked = any(t.requires_grad for t in inputs)
        out = Tensor(value, requires_grad=tracked)
        if tracked:
            self.records.append((out, inputs, backward))
        return out

    # -- primitives -------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        _check(a.shape[1] == b.shape[0], f"matmul shape mismatch {a.shape} @ {b.shape}")

        def back(g):
            if a.requires_grad:
                a.grad += g @ b.data.T
            if b.requires_grad:
                b.grad += a.data.T @ g

        return self._emit(a.data @ b.data, (a, b), back)

    def add_rowvec_bias(self, x: Tensor, b: Tensor) -> Tensor:
        _check(b.shape == (1, x.shape[1]), f"bias shape {b.shape} does not fit {x.shape}")

        def back(g):
            if x.requires_grad:
                x.grad += g
            if b.requires_grad:
                b.grad += g.sum(axis=0, keepdims=True)

        return self._emit(x.data + b.data, (x, b), back)

    def relu(self, x: Tensor) -> Tensor:
        mask = x.data > 0

        def back(g):
            # subgradient at exactly 0 is 0
            x.grad += g * mask

        return self._emit(np.maximum(x.data, x.data.dtype.type(0)), (x,), back)

    def concat_cols(self, x: Tensor, y: Tensor) -> Tensor:
        _check(x.shape[0] == y.shape[0], f"concat_cols row mismatch {x.shape} vs {y.shape}")
        k = x.shape[1]

        def back(g):
            if x.requires_grad:
                x.grad += g[:, :k]
            if y.requires_grad:
                y.grad += g[:, k:]

        return self._emit(np.concatenate([x.data, y.data], axis=1), (x, y), back)

    def _csr_aggregate(self, x: Tensor, g: Graph, mode: str) -> Tensor:
        _check(x.shape[0] == g.num_nodes, f"{x.shape[0]} rows for a {g.num_nodes}-node graph")
        fwd, bwd = g.aggregation_matrix(mode, x.data.dtype)

        def back(grad):
            x.grad += bwd @ grad

        return self._emit(np.asarray(fwd @ x.data), (x,), back)

    def csr_mean_neighbors(self, x: Tensor, g: Graph) -> Tensor:
        """Row v becomes the mean of x over N(v); isolated nodes get a zero row."""
        return self._csr_aggregate(x, g, "mean")

    def csr_sum_neighbors(self, x: Tensor, g: Graph) -> Tensor:
        return self._csr_aggregate(x, g, "sum")

    def row_l2_distance(self, x: Tensor, y: Tensor) -> Tensor:
        """Per-row Euclidean distance as an ``n x 1`` column."""
        _check(x.shape == y.shape, f"row_l2_distance shape mismatch {x.shape} vs {y.shape}")
        diff = x.data - y.data
        dist = np.sqrt(np.sum(diff * diff, axis=1, keepdims=True))

        def back(g):
            safe = np.where(dist > 0, dist, 1)
            # gradient at distance 0 is defined as 0
            coef = np.where(dist > 0, g / safe, 0)
            if x.requires_grad:
                x.grad += coef * diff
            if y.requires_grad:
                y.grad -= coef * diff

        return self._emit(dist, (x, y), back)

    def gather_rows(self, x: Tensor, idx) -> Tensor:
        idx = np.asarray(idx, dtype=np.int64).ravel()

        def back(g):
            np.add.at(x.grad, idx, g)

        return self._emit(x.data[idx], (x,), back)

    def add(self, x: Tensor, y: Tensor) -> Tensor:
        _check(x.shape == y.shape, f"add shape mismatch {x.shape} vs {y.shape}")

        def back(g):
            if x.requires_grad:
                x.grad += g
            if y.requires_grad:
                y.grad += g

        return self._emit(x.data + y.data, (x, y), back)

    def sub(self, x: Tensor, y: Tensor) -> Tensor:
        _check(x.shape == y.shape, f"sub shape mismatch {x.shape} vs {y.shape}")

        def back(g):
            if x.requires_grad:
                x.grad += g
            if y.requires_grad:
                y.grad -= g

        return self._emit(x.data - y.data, (x, y), back)

    def scale(self, x: Tensor, c: float) -> Tensor:
        def back(g):
            x.grad += c * g

        return self._emit(x.data * x.data.dtype.type(c), (x,), back)

    def add_scalar(self, x: Tensor, c: float) -> Tensor:
        def back(g):
            x.grad += g

        return self._emit(x.data + x.data.dtype.type(c), (x,), back)

    def sum(self, x: Tensor) -> Tensor:
        def back(g):
            x.grad += g[0, 0]

        return self._emit(x.data.sum(dtype=x.data.dtype).reshape(1, 1), (x,), back)

    def mean(self, x: Tensor) -> Tensor:
        n = x.data.size

        def back(g):
            x.grad += g[0, 0] / n

        return self._emit((x.data.sum(dtype=x.data.dtype) / n).reshape(1, 1), (x,), back)

    # -- reverse pass -----------------------------------------------------

    def backward(self, out: Tensor) -> None:
        """Accumulate d(out)/d(t) into ``t.grad`` for every tracked tensor."""
        _check(out.shape == (1, 1), f"backward needs a 1x1 output, got {out.shape}")
        if not out.requires_grad:
            return
        _check(any(rec[0] is out for rec in self.records), "output was not recorded on this tape")
        out.grad += 1
        for res, _, back in reversed(self.records):
            back(res.grad)
