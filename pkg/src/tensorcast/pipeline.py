"""Training-iteration timelines for the four system designs.

Stages are list-scheduled in a fixed dependency order onto exclusive
resources (CPU, GPU, NMP, and the host/memory-node LINK). The casting
designs copy the forward index to the GPU and cast it while the forward
gather-reduce runs elsewhere, so only the part of copy+cast that outlasts
the forward gather-reduce shows up in the iteration time.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import nmpsim, traffic
from .kernels import CastedIndex, LookupIndex, tensor_casting
from .nmpsim import NmpConfig, NmpInstruction, NmpOp
from .traffic import TrafficParams
from .workload import ModelConfig


class Stage(str, enum.Enum):
    FWD_EMB = "FwdEmbGatherReduce"
    FWD_MLP = "FwdMLP"
    BWD_MLP = "BwdMLP"
    CAST = "Cast"
    EXPAND_COALESCE = "ExpandCoalesce"
    CASTED_GR = "CastedGatherReduce"
    SCATTER = "Scatter"
    INDEX_COPY = "IndexCopy"


class Resource(str, enum.Enum):
    CPU = "CPU"
    GPU = "GPU"
    NMP = "NMP"
    LINK = "LINK"


class Design(str, enum.Enum):
    BASELINE_CPU = "BaselineCPU"
    BASELINE_NMP = "BaselineNMP"
    OURS_CPU = "OursCPU"
    OURS_NMP = "OursNMP"

    @property
    def casting(self) -> bool:
        return self in (Design.OURS_CPU, Design.OURS_NMP)

    @property
    def nmp(self) -> bool:
        return self in (Design.BASELINE_NMP, Design.OURS_NMP)


ALL_DESIGNS = tuple(Design)


@dataclass(frozen=True)
class StageSpan:
    name: Stage
    resource: Resource
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class Timeline:
    design: Design
    spans: list = field(default_factory=list)

    @property
    def iteration_time(self) -> float:
        return max((s.end for s in self.spans), default=0.0)

    def span(self, name: Stage) -> StageSpan:
        for s in self.spans:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def exposed_cast(self) -> float:
        if not self.design.casting:
            return 0.0
        cast_end = self.span(Stage.CAST).end
        return max(0.0, cast_end - self.span(Stage.FWD_EMB).end)

    def busy(self, resource: Resource) -> float:
        return sum(s.duration for s in self.spans if s.resource == resource)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("span", "name", "resource", "start", "duration"))
        for i, s in enumerate(self.spans):
            w.writerow((i, s.name.value, s.resource.value, repr(s.start), repr(s.duration)))
        return buf.getvalue()


# (stage, dependencies) in scheduling order
_BASELINE_PLAN = (
    (Stage.FWD_EMB, ()),
    (Stage.FWD_MLP, (Stage.FWD_EMB,)),
    (Stage.BWD_MLP, (Stage.FWD_MLP,)),
    (Stage.EXPAND_COALESCE, (Stage.BWD_MLP,)),
    (Stage.SCATTER, (Stage.EXPAND_COALESCE,)),
)
_CASTING_PLAN = (
    (Stage.FWD_EMB, ()),
    (Stage.INDEX_COPY, ()),
    (Stage.CAST, (Stage.INDEX_COPY,)),
    (Stage.FWD_MLP, (Stage.FWD_EMB,)),
    (Stage.BWD_MLP, (Stage.FWD_MLP,)),
    (Stage.CASTED_GR, (Stage.BWD_MLP, Stage.CAST)),
    (Stage.SCATTER, (Stage.CASTED_GR,)),
)


def plan(design: Design) -> tuple:
    return _CASTING_PLAN if Design(design).casting else _BASELINE_PLAN


def required_stages(design: Design) -> list[Stage]:
    return [s for s, _ in plan(design)]


def placement(design: Design) -> dict:
    design = Design(design)
    emb = Resource.NMP if design.nmp else Resource.CPU
    return {
        Stage.FWD_EMB: emb,
        Stage.FWD_MLP: Resource.GPU,
        Stage.BWD_MLP: Resource.GPU,
        # the baseline NMP has no expand-coalesce instruction
        Stage.EXPAND_COALESCE: Resource.CPU,
        Stage.CASTED_GR: emb,
        Stage.SCATTER: emb,
        Stage.INDEX_COPY: Resource.LINK,
        Stage.CAST: Resource.GPU,
    }


def schedule(design: Design, durations: Mapping) -> Timeline:
    """Place every stage of ``design`` as early as its dependencies and its
    resource allow."""
    design = Design(design)
    dur = {Stage(k): float(v) for k, v in durations.items()}
    where = placement(design)
    for stage, _ in plan(design):
        if stage not in dur:
            raise KeyError(f"missing duration for stage {stage.value}")
        if not dur[stage] >= 0:
            raise ValueError(f"stage {stage.value} has negative duration {dur[stage]}")
    free = {r: 0.0 for r in Resource}
    end = {}
    spans = []
    for stage, deps in plan(design):
        res = where[stage]
        start = max([free[res]] + [end[d] for d in deps])
        span = StageSpan(stage, res, start, dur[stage])
        spans.append(span)
        end[stage] = span.end
        free[res] = span.end
    return Timeline(design, spans)


def speedup(a: Timeline, b: Timeline) -> float:
    """How much faster ``b`` is than ``a``."""
    return a.iteration_time / b.iteration_time


def nmp_utilization(t: Timeline) -> float:
    it = t.iteration_time
    return t.busy(Resource.NMP) / it if it > 0 else 0.0


@dataclass(frozen=True)
class SystemConfig:
    """Bandwidths and throughputs the stage durations are derived from."""

    host_bw: float = 76.8e9
    link_bw: float = 25e9
    gpu_bw: float = 900e9
    gpu_flops: float = 15.7e12
    coalesce_sort_multiplier: float = 1.0
    radix_bits: int = 8
    elem_bytes: int = 4
    idx_bytes: int = 8
    nmp: NmpConfig = field(default_factory=NmpConfig)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "SystemConfig":
        d = dict(d or {})
        nmp = d.pop("nmp", None) or {}
        for k in ("ranks", "rank_bw", "granularity"):
            if k in d:
                nmp[{"ranks": "num_ranks", "granularity": "access_granularity"}.get(k, k)] = d.pop(k)
        return cls(nmp=NmpConfig(**nmp), **d)


def mlp_flops(model: ModelConfig) -> float:
    """Forward FLOPs per batch of the bottom and top MLPs.

    The top MLP input is the bottom output plus the pairwise dot products of
    all ``num_tables + 1`` feature vectors.
    """
    def layers_flops(widths):
        return sum(a * b for a, b in zip(widths[:-1], widths[1:]))

    bottom = layers_flops(model.bottom_mlp)
    feats = model.num_tables + 1
    top_in = (model.bottom_mlp[-1] if model.bottom_mlp else model.dim) + feats * (feats - 1) // 2
    top = layers_flops((top_in,) + tuple(model.top_mlp)) if model.top_mlp else 0
    return 2.0 * model.batch * (bottom + top)


def cast_bytes(L: int, table_rows: int, sys: SystemConfig) -> float:
    """GPU memory traffic of sort-by-key plus scan/prefix-sum over ``L`` pairs."""
    key_bits = max(1, math.ceil(math.log2(max(table_rows, 2))))
    passes = math.ceil(key_bits / sys.radix_bits)
    pair = 2 * sys.idx_bytes
    sort = passes * 2 * L * pair
    scan = 3 * L * sys.idx_bytes
    return float(sort + scan)


@dataclass
class Workload:
    """Per-table forward indices with their casted counterparts."""

    model: ModelConfig
    indices: list
    casts: list

    @classmethod
    def build(cls, model: ModelConfig, indices: Sequence[LookupIndex]) -> "Workload":
        return cls(model, list(indices), [tensor_casting(ix) for ix in indices])

    def params(self, sys: SystemConfig) -> list[TrafficParams]:
        return [TrafficParams(L=len(ix), B=ix.num_outputs, U=c.num_unique,
                              D=self.model.dim, elem_bytes=sys.elem_bytes,
                              idx_bytes=sys.idx_bytes)
                for ix, c in zip(self.indices, self.casts)]


def _host_time(primitive: str, ps, sys: SystemConfig) -> float:
    return sum(traffic.traffic(primitive, p).total for p in ps) / sys.host_bw


def stage_durations(design: Design, wl: Workload, sys: SystemConfig) -> dict:
    """Seconds per stage for ``design`` on a concrete workload.

    Host stages take modelled traffic over ``host_bw``; NMP stages are timed
    from the real per-rank access histograms of the workload's rows.
    """
    design = Design(design)
    ps = wl.params(sys)
    model = wl.model
    vb = model.dim * sys.elem_bytes
    act = model.batch * model.num_tables * vb / sys.link_bw
    flops = mlp_flops(model)
    d = {
        Stage.FWD_MLP: flops / sys.gpu_flops + act,
        Stage.BWD_MLP: 2 * flops / sys.gpu_flops + act,
    }
    if design.nmp:
        d[Stage.FWD_EMB] = nmpsim.execute_many(
            [NmpInstruction(NmpOp.GATHER_REDUCE, t, ix.src, vb, ix.dst)
             for t, ix in enumerate(wl.indices)], sys.nmp).elapsed
        d[Stage.SCATTER] = nmpsim.execute_many(
            [NmpInstruction(NmpOp.SCATTER, t, c.unique_rows, vb)
             for t, c in enumerate(wl.casts)], sys.nmp).elapsed
    else:
        d[Stage.FWD_EMB] = _host_time("gather_reduce", ps, sys)
        d[Stage.SCATTER] = _host_time("scatter", ps, sys)

    if not design.casting:
        expand = _host_time("expand", ps, sys)
        accu = _host_time("coalesce", ps, sys)
        d[Stage.EXPAND_COALESCE] = expand + accu * (1.0 + sys.coalesce_sort_multiplier)
        return d

    d[Stage.INDEX_COPY] = sum(2 * p.L * sys.idx_bytes for p in ps) / sys.link_bw
    d[Stage.CAST] = sum(cast_bytes(p.L, model.table_rows, sys) for p in ps) / sys.gpu_bw
    if design.nmp:
        instrs = []
        for t, c in enumerate(wl.casts):
            instrs.append(NmpInstruction(NmpOp.GATHER_REDUCE, t, c.casted_src, vb, c.casted_dst))
            instrs.append(NmpInstruction(NmpOp.SCATTER, t, np.arange(c.num_unique), vb))
        d[Stage.CASTED_GR] = nmpsim.execute_many(instrs, sys.nmp).elapsed
    else:
        d[Stage.CASTED_GR] = _host_time("casted_gather_reduce", ps, sys)
    return d


def evaluate(wl: Workload, sys: SystemConfig,
             designs: Sequence[Design] = ALL_DESIGNS) -> dict:
    return {Design(d): schedule(d, stage_durations(d, wl, sys)) for d in designs}


BREAKDOWN_HEADER = ("design", "stage", "resource", "start", "duration")


def breakdown_rows(timelines: Mapping) -> list[tuple]:
    """Per-stage durations per design, the stacked-bar view of an iteration."""
    rows = []
    for design, tl in timelines.items():
        for s in tl.spans:
            rows.append((Design(design).value, s.name.value, s.resource.value, s.start, s.duration))
    return rows
