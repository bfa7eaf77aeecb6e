"""Experiment runner behind the ``tensorcast`` command.

Each ``cmd_*`` takes an :class:`ExperimentConfig`, writes CSV/JSON under the
configured output directory and returns a report dict whose ``passed`` field
decides the exit status.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import kernels, nmpsim, optim, pipeline, traffic, workload
from .kernels import (
    CastedIndex,
    EmbeddingTable,
    LookupIndex,
    casted_gather_reduce,
    coalesce_gradients,
    expand_gradients,
    tensor_casting,
)
from .pipeline import Design, SystemConfig
from .workload import LookupDistribution, ModelConfig

log = logging.getLogger(__name__)

EQUIV_TOL = 1e-6

# forward index of the two-sample example: batch 0 gathers E1, E2, E4 and
# batch 1 gathers E0, E2
GOLDEN_SRC = (1, 2, 4, 0, 2)
GOLDEN_DST = (0, 0, 0, 1, 1)
GOLDEN_CASTED_SRC = (1, 0, 0, 1, 0)
GOLDEN_CASTED_DST = (0, 1, 2, 2, 3)
GOLDEN_UNIQUE = (0, 1, 2, 4)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    model: ModelConfig
    distribution: dict = field(default_factory=lambda: {"kind": "zipf", "s": workload.DEFAULT_ZIPF_S})
    seed: int = 0
    batches: list = field(default_factory=lambda: [workload.DEFAULT_BATCH])
    dims: list = field(default_factory=lambda: [workload.DEFAULT_DIM])
    designs: list = field(default_factory=lambda: list(pipeline.ALL_DESIGNS))
    system: SystemConfig = field(default_factory=SystemConfig)
    optimizer: dict = field(default_factory=lambda: {"kind": "adagrad"})
    out: Path = Path("out")
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.designs:
            raise ValueError("config needs at least one design")
        self.designs = [Design(d) for d in self.designs]
        self.out = Path(self.out)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        raw = dict(raw)
        m = raw.get("model", "RM1")
        if isinstance(m, str):
            model = workload.get_model(m)
        else:
            m = dict(m)
            base = workload.get_model(m.pop("base")) if "base" in m else None
            model = base.with_(**m) if base else ModelConfig.from_dict(m)
        if "table_rows" in raw:
            model = model.with_(table_rows=int(raw["table_rows"]))
        dist = dict(raw.get("distribution", {"kind": "zipf", "s": workload.DEFAULT_ZIPF_S}))
        if base_dir is not None and "path" in dist:
            p = Path(dist["path"])
            dist["path"] = str(p if p.is_absolute() else base_dir / p)
        kw = {}
        if "batches" in raw:
            kw["batches"] = [int(b) for b in raw["batches"]]
        elif "batch" in raw:
            kw["batches"] = [int(raw["batch"])]
        else:
            kw["batches"] = [model.batch]
        kw["dims"] = [int(d) for d in raw.get("dims", [model.dim])]
        if "designs" in raw:
            kw["designs"] = raw["designs"]
        return cls(
            model=model,
            distribution=dist,
            seed=int(raw.get("seed", 0)),
            system=SystemConfig.from_dict(raw.get("bandwidth")),
            optimizer=dict(raw.get("optimizer", {"kind": "adagrad"})),
            out=Path(raw.get("out", "out")),
            raw=raw,
            **kw,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    @property
    def hash(self) -> str:
        return config_hash({**self.raw, "seed": self.seed})

    def make_distribution(self, model: Optional[ModelConfig] = None) -> LookupDistribution:
        model = model or self.model
        spec = self.distribution
        kind = spec.get("kind", "zipf")
        rows = int(spec.get("rows", model.table_rows))
        if kind == "zipf":
            return LookupDistribution.zipf(rows, float(spec.get("s", workload.DEFAULT_ZIPF_S)))
        if kind == "uniform":
            return LookupDistribution.uniform(rows)
        if kind == "histogram":
            return workload.load_histogram(spec["path"])
        raise ValueError(f"unknown distribution kind {kind!r}")


def _stamp(cfg: ExperimentConfig, report: dict) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.hash, **report}


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=str)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TENSORCAST_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- equivalence

def random_instance(seed: int, max_rows: int = 64, max_dim: int = 8, max_lookups: int = 256):
    """A small duplicate-heavy (table, index, gradient) triple."""
    rng = np.random.default_rng(seed)
    rows = int(rng.integers(1, max_rows + 1))
    dim = int(rng.integers(1, max_dim + 1))
    L = int(rng.integers(1, max_lookups + 1))
    B = int(rng.integers(1, L + 1))
    # draw from a small hot set most of the time so rows repeat
    hot = int(rng.integers(1, rows + 1))
    pool = rng.choice(rows, size=hot, replace=False)
    src = np.where(rng.random(L) < 0.8, rng.choice(pool, size=L), rng.integers(0, rows, L))
    dst = np.sort(rng.integers(0, B, L)) if rng.random() < 0.5 else rng.integers(0, B, L)
    table = EmbeddingTable.random(rows, dim, rng)
    grad = rng.standard_normal((B, dim)).astype(kernels.STORAGE_DTYPE)
    return table, LookupIndex(src, dst, B), grad


def max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return float("inf")
    if a.size == 0:
        return 0.0
    scale = max(float(np.abs(b).max()), np.finfo(np.float32).tiny)
    return float(np.abs(a - b).max()) / scale


def compare_paths(idx: LookupIndex, grad, cast: CastedIndex) -> float:
    """Relative error between casted gather-reduce and expand+coalesce."""
    base = coalesce_gradients(idx, expand_gradients(grad, idx))
    try:
        fused = casted_gather_reduce(cast, grad)
    except (IndexError, ValueError):
        return float("inf")
    if not np.array_equal(base.rows, fused.rows):
        return float("inf")
    return max_rel_error(fused.grads, base.grads)


def _optimizer_agrees(table, idx, grad, cast, opt: dict) -> float:
    params = {k: v for k, v in opt.items() if k != "kind"}
    kind = opt.get("kind", "sgd")
    results = []
    for coal in (coalesce_gradients(idx, expand_gradients(grad, idx)),
                 casted_gather_reduce(cast, grad)):
        t = table.copy()
        state = optim.OptimizerState.for_table(kind, t, **params)
        optim.step(state, t, coal)
        results.append(t.data)
    return max_rel_error(results[1], results[0])


def golden_check(cast_fn: Callable = tensor_casting) -> bool:
    idx = LookupIndex(np.array(GOLDEN_SRC), np.array(GOLDEN_DST), 2)
    c = cast_fn(idx)
    return (c.casted_src.tolist() == list(GOLDEN_CASTED_SRC)
            and c.casted_dst.tolist() == list(GOLDEN_CASTED_DST)
            and c.unique_rows.tolist() == list(GOLDEN_UNIQUE))


def cmd_equivalence(cfg: ExperimentConfig, instances: Optional[int] = None,
                    cast_fn: Callable = tensor_casting, write: bool = True) -> dict:
    n = int(instances if instances is not None else cfg.raw.get("instances", 1000))
    golden = golden_check(cast_fn)
    worst, failing = 0.0, None
    for k in range(n):
        seed = cfg.seed + k
        table, idx, grad = random_instance(seed)
        cast = cast_fn(idx)
        err = compare_paths(idx, grad, cast)
        if np.isfinite(err):
            err = max(err, _optimizer_agrees(table, idx, grad, cast, cfg.optimizer))
        worst = max(worst, err)
        if not err <= EQUIV_TOL and failing is None:
            failing = seed
    files = cfg.raw.get("cast_files")
    files_err = None
    if files:
        files_err = _check_cast_files(files, cfg.seed)
        worst = max(worst, files_err)
    passed = golden and failing is None and (files_err is None or files_err <= EQUIV_TOL)
    report = _stamp(cfg, {
        "command": "equivalence",
        "instances": n,
        "golden_ok": golden,
        "max_rel_error": worst,
        "tolerance": EQUIV_TOL,
        "failing_seed": failing,
        "cast_files_error": files_err,
        "passed": passed,
    })
    if write:
        _write_json(cfg.out / "equivalence.json", report)
    return report


def _check_cast_files(files: dict, seed: int) -> float:
    idx = read_index_csv(files["index"])
    cs, cd = _read_int_columns(files["casted"], 2)
    (uniq,) = _read_int_columns(files["unique_rows"], 1)
    cast = CastedIndex(cs, cd, uniq)
    rng = np.random.default_rng(seed)
    grad = rng.standard_normal((idx.num_outputs, 4)).astype(kernels.STORAGE_DTYPE)
    return compare_paths(idx, grad, cast)


# ----------------------------------------------------------------- cast files

def _read_int_columns(path, ncols: int) -> list[np.ndarray]:
    cols = [[] for _ in range(ncols)]
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != ncols:
                raise ValueError(f"{path}:{lineno}: expected {ncols} columns, got {len(rec)}")
            try:
                vals = [int(c) for c in rec]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: malformed line {rec!r}") from None
            for col, v in zip(cols, vals):
                col.append(v)
    if not cols[0]:
        raise ValueError(f"{path}: no rows")
    return [np.array(c, dtype=kernels.INDEX_DTYPE) for c in cols]


def read_index_csv(path) -> LookupIndex:
    src, dst = _read_int_columns(path, 2)
    return LookupIndex(src, dst, int(dst.max()) + 1)


def write_index_csv(path, idx: LookupIndex) -> None:
    _write_csv(Path(path), ("src", "dst"), zip(idx.src.tolist(), idx.dst.tolist()))


def cmd_cast(input_path, out_dir) -> dict:
    idx = read_index_csv(input_path)
    c = tensor_casting(idx)
    out_dir = Path(out_dir)
    casted = out_dir / "casted.csv"
    uniq = out_dir / "unique_rows.csv"
    _write_csv(casted, ("casted_src", "casted_dst"),
               zip(c.casted_src.tolist(), c.casted_dst.tolist()))
    _write_csv(uniq, ("unique_rows",), ((r,) for r in c.unique_rows.tolist()))
    return {"command": "cast", "lookups": len(idx), "unique": c.num_unique,
            "casted": str(casted), "unique_rows": str(uniq), "passed": True}


# ------------------------------------------------------------------- traffic

def traffic_params(cfg: ExperimentConfig) -> traffic.TrafficParams:
    spec = cfg.raw.get("traffic")
    sysc = cfg.system
    if spec:
        return traffic.TrafficParams(
            L=int(spec["L"]), B=int(spec["B"]), U=int(spec["U"]),
            D=int(spec.get("D", cfg.dims[0])), elem_bytes=sysc.elem_bytes,
            idx_bytes=sysc.idx_bytes)
    model = cfg.model.with_(batch=cfg.batches[0], dim=cfg.dims[0], num_tables=1)
    (idx,) = workload.gen_lookups(model, cfg.make_distribution(model), cfg.seed)
    return traffic.params_from_index(idx, model.dim, sysc.elem_bytes, sysc.idx_bytes)


def cmd_traffic(cfg: ExperimentConfig, write: bool = True) -> dict:
    p = traffic_params(cfg)
    reports = traffic.all_reports(p)
    by = {r.primitive: r for r in reports}
    ec = by["expand"].element_bytes + by["coalesce"].element_bytes
    ec_total = by["expand"].total + by["coalesce"].total
    report = _stamp(cfg, {
        "command": "traffic",
        "params": {"L": p.L, "B": p.B, "U": p.U, "D": p.D},
        "expand_coalesce_over_gather_reduce": ec / by["gather_reduce"].element_bytes,
        "casted_over_expand_coalesce": by["casted_gather_reduce"].element_bytes / ec,
        "passed": by["casted_gather_reduce"].total < ec_total,
    })
    if write:
        cfg.out.mkdir(parents=True, exist_ok=True)
        with open(cfg.out / "traffic.csv", "w", newline="") as fh:
            traffic.to_csv(reports, fh)
        _write_json(cfg.out / "traffic.json", report)
    report["csv"] = traffic.to_csv(reports)
    return report


# ----------------------------------------------------------------------- run

SUMMARY_HEADER = ("batch", "dim", "design", "iteration_time", "exposed_cast",
                  "nmp_utilization", "speedup_vs_baseline_cpu")


def run_cell(cfg: ExperimentConfig, batch: int, dim: int) -> dict:
    model = cfg.model.with_(batch=batch, dim=dim)
    idxs = workload.gen_lookups(model, cfg.make_distribution(model), cfg.seed)
    wl = pipeline.Workload.build(model, idxs)
    designs = list(dict.fromkeys([Design.BASELINE_CPU] + cfg.designs))
    return pipeline.evaluate(wl, cfg.system, designs)


def cmd_run(cfg: ExperimentConfig, write: bool = True) -> dict:
    cells = [(b, d) for b in cfg.batches for d in cfg.dims]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda bd: run_cell(cfg, *bd), cells))
    summary, breakdown = [], []
    timelines = {}
    for (b, d), tls in zip(cells, results):
        ref = tls[Design.BASELINE_CPU]
        for design in cfg.designs:
            tl = tls[design]
            timelines[(design, b, d)] = tl
            summary.append((b, d, design.value, tl.iteration_time, tl.exposed_cast,
                            pipeline.nmp_utilization(tl), pipeline.speedup(ref, tl)))
            for row in pipeline.breakdown_rows({design: tl}):
                breakdown.append((b, d) + row)
    report = _stamp(cfg, {
        "command": "run",
        "model": cfg.model.name,
        "cells": len(cells),
        "summary": [dict(zip(SUMMARY_HEADER, r)) for r in summary],
        "passed": True,
    })
    if write:
        _write_csv(cfg.out / "summary.csv", SUMMARY_HEADER, summary)
        _write_csv(cfg.out / "breakdown.csv", ("batch", "dim") + pipeline.BREAKDOWN_HEADER,
                   breakdown)
        for (design, b, d), tl in timelines.items():
            path = cfg.out / "timelines" / f"{design.value}_b{b}_d{d}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(tl.to_csv())
        _write_json(cfg.out / "run.json", report)
    report["timelines"] = timelines
    return report


# ------------------------------------------------------------------ simulate

def cmd_simulate(cfg: ExperimentConfig, write: bool = True) -> dict:
    spec = dict(cfg.raw.get("simulate", {}))
    n = int(spec.get("rows", 100_000))
    op = spec.get("op", "gather_reduce")
    dim = int(spec.get("dim", cfg.dims[0]))
    rng = np.random.default_rng(cfg.seed)
    rows = cfg.make_distribution().sample(n, rng)
    if spec.get("unique"):
        rows = np.unique(rows)
    instr = nmpsim.NmpInstruction(op, int(spec.get("table_id", 0)), rows,
                                  dim * cfg.system.elem_bytes)
    res = nmpsim.execute(instr, cfg.system.nmp)
    report = _stamp(cfg, {
        "command": "simulate",
        "op": op,
        "rows": int(rows.size),
        "elapsed": res.elapsed,
        "effective_bw": res.effective_bw,
        "peak_bw": cfg.system.nmp.peak_bw,
        "bottleneck_rank": res.bottleneck_rank,
        "per_rank_accesses": res.per_rank_accesses.tolist(),
        "passed": True,
    })
    if write:
        _write_json(cfg.out / "simulate.json", report)
    return report


# -------------------------------------------------------------- gen-workload

def cmd_gen_workload(cfg: ExperimentConfig, write: bool = True) -> dict:
    model = cfg.model.with_(batch=cfg.batches[0], dim=cfg.dims[0])
    dist = cfg.make_distribution(model)
    idxs = workload.gen_lookups(model, dist, cfg.seed)
    shrink_batches = cfg.raw.get("shrink_batches", cfg.batches)
    shrink = workload.coalesce_shrink(model, dist, shrink_batches, cfg.seed)
    report = _stamp(cfg, {
        "command": "gen-workload",
        "model": model.name,
        "tables": len(idxs),
        "lookups_per_table": model.lookups_per_table,
        "shrink": [{"batch": r.batch, "expanded_size": r.expanded_size,
                    "coalesced_size": r.coalesced_size} for r in shrink],
        "passed": True,
    })
    if write:
        for t, ix in enumerate(idxs):
            write_index_csv(cfg.out / "indices" / f"table{t}.csv", ix)
        rows, counts = workload.histogram_from_lookups(idxs[0].src)
        workload.save_histogram(cfg.out / "histogram.csv", rows, counts)
        _write_csv(cfg.out / "shrink.csv", ("batch", "expanded_size", "coalesced_size"),
                   ((r.batch, r.expanded_size, r.coalesced_size) for r in shrink))
        _write_json(cfg.out / "gen_workload.json", report)
    return report
