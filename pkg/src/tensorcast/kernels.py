"""Embedding-layer training primitives.

Forward gather-reduce, backward expand / coalesce, the casting permutation
that turns expand-coalesce into a single gather-reduce over the gradient
table, and gradient scatter.

Tables and gradients are stored as float32; every reduction accumulates in
float64 in ascending lookup order and is rounded once on write-out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

STORAGE_DTYPE = np.float32
ACCUM_DTYPE = np.float64
INDEX_DTYPE = np.int64
INDEX_BYTES = 8


class ShapeError(ValueError):
    pass


class IndexOutOfBounds(IndexError):
    """An index entry points outside its target array."""

    def __init__(self, array: str, position: int, value: int, bound: int):
        self.array = array
        self.position = position
        self.value = value
        self.bound = bound
        super().__init__(
            f"{array}[{position}] = {value} out of range [0, {bound})")


@dataclass
class TrafficCounter:
    """Byte tallies filled in by kernels when passed ``counter=``."""

    bytes_read: int = 0
    bytes_written: int = 0
    index_bytes: int = 0

    def read(self, n: int) -> None:
        self.bytes_read += int(n)

    def write(self, n: int) -> None:
        self.bytes_written += int(n)

    def index(self, n: int) -> None:
        self.index_bytes += int(n)


@dataclass
class EmbeddingTable:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=STORAGE_DTYPE)
        if self.data.ndim != 2:
            raise ShapeError(f"table must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ShapeError(f"table needs rows >= 1 and dim >= 1, got {self.data.shape}")

    @classmethod
    def zeros(cls, rows: int, dim: int = 64) -> "EmbeddingTable":
        return cls(np.zeros((rows, dim), dtype=STORAGE_DTYPE))

    @classmethod
    def random(cls, rows: int, dim: int = 64, rng=None) -> "EmbeddingTable":
        rng = np.random.default_rng(rng)
        return cls(rng.standard_normal((rows, dim)).astype(STORAGE_DTYPE))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.data[i]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.data.copy())


def _as_index(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise ShapeError(f"{name} must hold integers, got {arr.dtype}")
    return arr.astype(INDEX_DTYPE, copy=False)


def _check_bounds(arr: np.ndarray, bound: int, name: str) -> None:
    bad = np.flatnonzero((arr < 0) | (arr >= bound))
    if bad.size:
        pos = int(bad[0])
        raise IndexOutOfBounds(name, pos, int(arr[pos]), bound)


@dataclass
class LookupIndex:
    """Parallel ``(src, dst)`` arrays: lookup ``i`` adds table row ``src[i]``
    into output slot ``dst[i]``."""

    src: np.ndarray
    dst: np.ndarray
    num_outputs: int

    def __post_init__(self):
        self.src = _as_index(self.src, "src")
        self.dst = _as_index(self.dst, "dst")
        if self.src.shape != self.dst.shape:
            raise ShapeError(
                f"src and dst lengths differ: {self.src.size} vs {self.dst.size}")
        if self.src.size == 0:
            raise ShapeError("lookup index is empty")
        self.num_outputs = int(self.num_outputs)
        if self.num_outputs < 1:
            raise ShapeError("num_outputs must be >= 1")
        _check_bounds(self.dst, self.num_outputs, "dst")
        neg = np.flatnonzero(self.src < 0)
        if neg.size:
            pos = int(neg[0])
            raise IndexOutOfBounds("src", pos, int(self.src[pos]), np.iinfo(INDEX_DTYPE).max)

    @classmethod
    def from_segments(cls, segments) -> "LookupIndex":
        """Build from a list of per-output row lists, e.g. ``[[1, 2, 4], [0, 2]]``."""
        src = [r for seg in segments for r in seg]
        dst = [b for b, seg in enumerate(segments) for _ in seg]
        return cls(np.array(src), np.array(dst), len(segments))

    def __len__(self) -> int:
        return self.src.size

    def validate(self, table_rows: int) -> None:
        _check_bounds(self.src, table_rows, "src")


@dataclass
class CastedIndex:
    casted_src: np.ndarray
    casted_dst: np.ndarray
    unique_rows: np.ndarray

    def __len__(self) -> int:
        return self.casted_src.size

    @property
    def num_unique(self) -> int:
        return self.unique_rows.size


@dataclass
class CoalescedGradients:
    rows: np.ndarray
    grads: np.ndarray

    def __len__(self) -> int:
        return self.rows.size


def _grad_array(grad) -> np.ndarray:
    g = np.asarray(grad)
    if g.ndim != 2:
        raise ShapeError(f"gradient batch must be 2-D, got shape {g.shape}")
    return g


def _fused_gather_reduce(values: np.ndarray, src: np.ndarray, dst: np.ndarray,
                         num_out: int) -> np.ndarray:
    # np.add.at is unbuffered and applies updates in index order, which fixes
    # the per-row accumulation order to ascending i.
    out = np.zeros((num_out, values.shape[1]), dtype=ACCUM_DTYPE)
    np.add.at(out, dst, values[src].astype(ACCUM_DTYPE))
    return out.astype(values.dtype if values.dtype.kind == "f" else STORAGE_DTYPE)


def gather_reduce(table: EmbeddingTable, idx: LookupIndex,
                  counter: Optional[TrafficCounter] = None) -> np.ndarray:
    """Sum table rows ``src[i]`` into output slot ``dst[i]``.

    Slots that receive no lookups come back as zero vectors.
    """
    idx.validate(table.rows)
    out = _fused_gather_reduce(table.data, idx.src, idx.dst, idx.num_outputs)
    if counter is not None:
        row = table.dim * table.data.itemsize
        counter.read(len(idx) * row)
        counter.write(idx.num_outputs * row)
        counter.index(2 * len(idx) * INDEX_BYTES)
    return out


def expand_gradients(grad, idx: LookupIndex,
                     counter: Optional[TrafficCounter] = None) -> np.ndarray:
    """Replicate each batch gradient once per lookup that fed its slot."""
    g = _grad_array(grad)
    if g.shape[0] != idx.num_outputs:
        raise ShapeError(
            f"gradient batch has {g.shape[0]} rows, index expects {idx.num_outputs}")
    exp = g[idx.dst]
    if counter is not None:
        row = g.shape[1] * g.itemsize
        counter.read(idx.num_outputs * row)
        counter.write(len(idx) * row)
        counter.index(len(idx) * INDEX_BYTES)
    return exp


def _run_heads(sorted_keys: np.ndarray) -> np.ndarray:
    heads = np.ones(sorted_keys.size, dtype=bool)
    heads[1:] = sorted_keys[1:] != sorted_keys[:-1]
    return heads


def coalesce_gradients(idx: LookupIndex, exp_grad,
                       counter: Optional[TrafficCounter] = None) -> CoalescedGradients:
    """Baseline gradient coalescing: sort ``src``, then accumulate each run of
    equal keys into one coalesced row."""
    exp = _grad_array(exp_grad)
    if exp.shape[0] != len(idx):
        raise ShapeError(
            f"expanded gradients have {exp.shape[0]} rows, index has {len(idx)} lookups")
    # Step A: sort
    sorted_pos = np.argsort(idx.src, kind="stable")
    sorted_src = idx.src[sorted_pos]
    # Step B: accumulate runs; run number j owns output row j
    heads = _run_heads(sorted_src)
    run_id = np.cumsum(heads) - 1
    rows = sorted_src[heads]
    acc = np.zeros((rows.size, exp.shape[1]), dtype=ACCUM_DTYPE)
    np.add.at(acc, run_id, exp[sorted_pos].astype(ACCUM_DTYPE))
    if counter is not None:
        row = exp.shape[1] * exp.itemsize
        counter.read((len(idx) + rows.size) * row)
        counter.write(rows.size * row)
        counter.index(2 * len(idx) * INDEX_BYTES)
    return CoalescedGradients(rows, acc.astype(exp.dtype))


def tensor_casting(idx: LookupIndex) -> CastedIndex:
    """Permute a forward ``(src, dst)`` index into the index of a gather-reduce
    over the gradient table that yields coalesced gradients directly."""
    order = np.argsort(idx.src, kind="stable")
    sorted_src = idx.src[order]
    sorted_dst = idx.dst[order]
    scan = _run_heads(sorted_src).astype(INDEX_DTYPE)
    casted_dst = np.cumsum(scan) - 1
    return CastedIndex(
        casted_src=sorted_dst,
        casted_dst=casted_dst,
        unique_rows=sorted_src[scan.astype(bool)],
    )


def casted_gather_reduce(cast: CastedIndex, grad,
                         counter: Optional[TrafficCounter] = None) -> CoalescedGradients:
    """Coalesced gradients as a single gather-reduce over the gradient table."""
    g = _grad_array(grad)
    _check_bounds(cast.casted_src, g.shape[0], "casted_src")
    num_out = cast.num_unique
    _check_bounds(cast.casted_dst, num_out, "casted_dst")
    coal = _fused_gather_reduce(g, cast.casted_src, cast.casted_dst, num_out)
    if counter is not None:
        row = g.shape[1] * g.itemsize
        counter.read(len(cast) * row)
        counter.write(num_out * row)
        counter.index(2 * len(cast) * INDEX_BYTES)
    return CoalescedGradients(cast.unique_rows.copy(), coal)


RowUpdate = Callable[[np.ndarray, np.ndarray], np.ndarray]


def sgd_update(lr: float) -> RowUpdate:
    def update(w, g):
        return w - lr * g
    return update


def gradient_scatter(table: EmbeddingTable, coal: CoalescedGradients,
                     update: RowUpdate,
                     counter: Optional[TrafficCounter] = None) -> EmbeddingTable:
    """Apply ``update(rows, grads)`` to every touched table row, in place.

    ``update`` receives the ``U x dim`` block of current rows and coalesced
    gradients and returns the new rows. Bounds are checked before any write.
    """
    rows = _as_index(coal.rows, "rows")
    _check_bounds(rows, table.rows, "rows")
    grads = _grad_array(coal.grads)
    if grads.shape != (rows.size, table.dim):
        raise ShapeError(
            f"coalesced grads shape {grads.shape} != ({rows.size}, {table.dim})")
    new = update(table.data[rows].astype(ACCUM_DTYPE), grads.astype(ACCUM_DTYPE))
    table.data[rows] = np.asarray(new).astype(STORAGE_DTYPE)
    if counter is not None:
        row = table.dim * table.data.itemsize
        counter.read(rows.size * row)
        counter.write(rows.size * row)
        counter.index(rows.size * INDEX_BYTES)
    return table
