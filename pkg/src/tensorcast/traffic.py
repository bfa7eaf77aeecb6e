"""Analytical memory-traffic model for the embedding primitives.

Every logical load or store of an embedding/gradient row counts as memory
traffic (no caches). Index-array bytes are reported separately from element
bytes so either accounting convention can be recovered. The sort step of
baseline coalescing is not charged here; its cost shows up only as time.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import kernels

PRIMITIVES = ("gather_reduce", "expand", "coalesce", "casted_gather_reduce", "scatter")
CSV_HEADER = ("primitive", "reads", "writes", "index", "total")


@dataclass(frozen=True)
class TrafficParams:
    L: int
    B: int
    U: int
    D: int = 64
    elem_bytes: int = 4
    idx_bytes: int = 8

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.U < 1:
            raise ValueError("U must be >= 1")
        if self.U > self.L:
            raise ValueError(f"U ({self.U}) cannot exceed L ({self.L})")
        if self.D < 1 or self.elem_bytes < 1 or self.idx_bytes < 0:
            raise ValueError("D and elem_bytes must be positive")

    @property
    def row_bytes(self) -> int:
        return self.D * self.elem_bytes


@dataclass(frozen=True)
class TrafficReport:
    primitive: str
    bytes_read: int
    bytes_written: int
    index_bytes: int

    @property
    def total(self) -> int:
        return self.bytes_read + self.bytes_written + self.index_bytes

    @property
    def element_bytes(self) -> int:
        return self.bytes_read + self.bytes_written

    def csv_row(self) -> tuple:
        return (self.primitive, self.bytes_read, self.bytes_written,
                self.index_bytes, self.total)


def traffic_gather_reduce(p: TrafficParams) -> TrafficReport:
    r = p.row_bytes
    return TrafficReport("gather_reduce", p.L * r, p.B * r, 2 * p.L * p.idx_bytes)


def traffic_expand(p: TrafficParams) -> TrafficReport:
    r = p.row_bytes
    return TrafficReport("expand", p.B * r, p.L * r, p.L * p.idx_bytes)


def traffic_coalesce(p: TrafficParams) -> TrafficReport:
    # accumulation step only: read every expanded row plus a read-modify of
    # each coalesced partial sum, write each coalesced row once
    r = p.row_bytes
    return TrafficReport("coalesce", (p.L + p.U) * r, p.U * r, 2 * p.L * p.idx_bytes)


def traffic_casted_gather_reduce(p: TrafficParams) -> TrafficReport:
    r = p.row_bytes
    return TrafficReport("casted_gather_reduce", p.L * r, p.U * r, 2 * p.L * p.idx_bytes)


def traffic_scatter(p: TrafficParams) -> TrafficReport:
    r = p.row_bytes
    return TrafficReport("scatter", p.U * r, p.U * r, p.U * p.idx_bytes)


_MODELS = {
    "gather_reduce": traffic_gather_reduce,
    "expand": traffic_expand,
    "coalesce": traffic_coalesce,
    "casted_gather_reduce": traffic_casted_gather_reduce,
    "scatter": traffic_scatter,
}


def traffic(primitive: str, p: TrafficParams) -> TrafficReport:
    try:
        return _MODELS[primitive](p)
    except KeyError:
        raise ValueError(f"unknown primitive {primitive!r}; expected one of {PRIMITIVES}") from None


def all_reports(p: TrafficParams) -> list[TrafficReport]:
    return [_MODELS[name](p) for name in PRIMITIVES]


def to_csv(reports, fh=None) -> str:
    buf = fh if fh is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rep in reports:
        w.writerow(rep.csv_row())
    return buf.getvalue() if fh is None else ""


def measure_traffic(primitive: str, *args, **kwargs) -> TrafficReport:
    """Run a kernel with an instrumented counter and report what it moved.

    ``primitive`` picks the kernel; the remaining arguments are passed to it.
    """
    runners = {
        "gather_reduce": kernels.gather_reduce,
        "expand": kernels.expand_gradients,
        "coalesce": kernels.coalesce_gradients,
        "casted_gather_reduce": kernels.casted_gather_reduce,
        "scatter": kernels.gradient_scatter,
    }
    if primitive not in runners:
        raise ValueError(f"unknown primitive {primitive!r}")
    counter = kernels.TrafficCounter()
    runners[primitive](*args, counter=counter, **kwargs)
    return TrafficReport(primitive, counter.bytes_read, counter.bytes_written,
                         counter.index_bytes)


def params_from_index(idx: kernels.LookupIndex, dim: int, elem_bytes: int = 4,
                      idx_bytes: int = kernels.INDEX_BYTES) -> TrafficParams:
    """Traffic knobs for a concrete lookup index (U counted exactly)."""
    return TrafficParams(L=len(idx), B=idx.num_outputs, U=int(np.unique(idx.src).size),
                         D=dim, elem_bytes=elem_bytes, idx_bytes=idx_bytes)
