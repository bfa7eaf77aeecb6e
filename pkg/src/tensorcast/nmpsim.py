"""Bandwidth-bound timing model of a rank-interleaved near-memory
gather-scatter unit.

Each rank owns a slice of every table (round-robin by row) and serves its
accesses at ``rank_bw``; ranks run fully in parallel and the vector ALU
reduces on the fly, so an instruction finishes when its busiest rank does.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .traffic import TrafficParams, traffic


@dataclass(frozen=True)
class NmpConfig:
    num_ranks: int = 32
    rank_bw: float = 25.6e9
    access_granularity: int = 64
    dispatch_latency: float = 0.0
    # charge scatter as read+write per chunk instead of write-only
    scatter_rmw: bool = False

    def __post_init__(self):
        if self.num_ranks < 1:
            raise ValueError("num_ranks must be >= 1")
        if self.rank_bw <= 0:
            raise ValueError("rank_bw must be positive")
        if self.access_granularity < 1:
            raise ValueError("access_granularity must be >= 1")
        if self.dispatch_latency < 0:
            raise ValueError("dispatch_latency must be >= 0")

    @property
    def peak_bw(self) -> float:
        return self.num_ranks * self.rank_bw


class NmpOp(str, enum.Enum):
    GATHER_REDUCE = "gather_reduce"
    SCATTER = "scatter"


@dataclass
class NmpInstruction:
    op: NmpOp
    table_id: int
    row_ids: np.ndarray
    vector_bytes: int
    dst_slots: Optional[np.ndarray] = None

    def __post_init__(self):
        self.op = NmpOp(self.op)
        self.row_ids = np.asarray(self.row_ids, dtype=np.int64)
        if self.vector_bytes < 1:
            raise ValueError("vector_bytes must be >= 1")
        if self.dst_slots is not None:
            if self.op is not NmpOp.GATHER_REDUCE:
                raise ValueError("dst_slots only apply to gather-reduce")
            self.dst_slots = np.asarray(self.dst_slots, dtype=np.int64)
            if self.dst_slots.shape != self.row_ids.shape:
                raise ValueError("dst_slots and row_ids lengths differ")


@dataclass
class NmpResult:
    elapsed: float
    per_rank_accesses: np.ndarray
    effective_bw: float
    bottleneck_rank: int
    total_bytes: int


def rank_of(table_id, row_id, cfg: NmpConfig):
    """Round-robin interleave; table ``t`` starts at rank ``t mod num_ranks``.

    Works elementwise on arrays.
    """
    return (np.asarray(table_id, dtype=np.int64) + np.asarray(row_id, dtype=np.int64)) \
        % cfg.num_ranks


def accesses_per_row(vector_bytes: int, cfg: NmpConfig) -> int:
    return math.ceil(vector_bytes / cfg.access_granularity)


def rank_histogram(instr: NmpInstruction, cfg: NmpConfig) -> np.ndarray:
    """Per-rank 64-byte (granularity-sized) access counts for one instruction."""
    per_row = accesses_per_row(instr.vector_bytes, cfg)
    if instr.op is NmpOp.SCATTER and cfg.scatter_rmw:
        per_row *= 2
    ranks = rank_of(instr.table_id, instr.row_ids, cfg)
    return np.bincount(ranks, minlength=cfg.num_ranks).astype(np.int64) * per_row


def _result(hist: np.ndarray, cfg: NmpConfig) -> NmpResult:
    busiest = int(np.argmax(hist))
    total = int(hist.sum()) * cfg.access_granularity
    busy = int(hist[busiest]) * cfg.access_granularity / cfg.rank_bw
    elapsed = cfg.dispatch_latency + busy
    if elapsed <= 0:
        bw = 0.0
    elif cfg.dispatch_latency == 0:
        # same as total / elapsed, without the rounding of the round trip
        bw = cfg.rank_bw * (int(hist.sum()) / int(hist[busiest]))
    else:
        bw = total / elapsed
    return NmpResult(
        elapsed=elapsed,
        per_rank_accesses=hist,
        effective_bw=bw,
        bottleneck_rank=busiest,
        total_bytes=total,
    )


def execute(instr: NmpInstruction, cfg: NmpConfig) -> NmpResult:
    if instr.row_ids.size == 0:
        raise ValueError("NMP instruction has no rows")
    return _result(rank_histogram(instr, cfg), cfg)


def execute_many(instrs: Sequence[NmpInstruction], cfg: NmpConfig) -> NmpResult:
    """Instructions issued together (e.g. one per table) share the ranks;
    their access histograms add and the busiest rank sets the time."""
    if not instrs:
        raise ValueError("no instructions to execute")
    hist = np.zeros(cfg.num_ranks, dtype=np.int64)
    for instr in instrs:
        if instr.row_ids.size == 0:
            raise ValueError("NMP instruction has no rows")
        hist += rank_histogram(instr, cfg)
    return _result(hist, cfg)


NMP_PRIMITIVES = ("gather_reduce", "casted_gather_reduce", "scatter")


def implied_instructions(primitive: str, p: TrafficParams,
                         table_id: int = 0) -> list[NmpInstruction]:
    """Instruction stream for a primitive given only its sizes.

    Rows are taken as consecutive IDs, i.e. perfectly interleaved.
    """
    vb = p.row_bytes
    if primitive == "gather_reduce":
        return [NmpInstruction(NmpOp.GATHER_REDUCE, table_id, np.arange(p.L), vb)]
    if primitive == "casted_gather_reduce":
        # gather L gradient rows, drain U coalesced rows back to memory
        return [NmpInstruction(NmpOp.GATHER_REDUCE, table_id, np.arange(p.L), vb),
                NmpInstruction(NmpOp.SCATTER, table_id, np.arange(p.U), vb)]
    if primitive == "scatter":
        return [NmpInstruction(NmpOp.SCATTER, table_id, np.arange(p.U), vb)]
    raise ValueError(f"{primitive!r} has no NMP instruction; expected one of {NMP_PRIMITIVES}")


def time_primitive(primitive: str, p: TrafficParams, cfg: NmpConfig,
                   host_bw: Optional[float] = None) -> float:
    """Seconds to run ``primitive``.

    With ``host_bw`` the primitive runs on the host: total modelled traffic
    over one flat bandwidth. Otherwise it runs on the NMP ranks.
    """
    if host_bw is not None:
        if host_bw <= 0:
            raise ValueError("host_bw must be positive")
        return traffic(primitive, p).total / host_bw
    return execute_many(implied_instructions(primitive, p), cfg).elapsed
