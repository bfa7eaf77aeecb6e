"""DLRM-style workload generation: model configs, lookup distributions,
seeded index streams and coalescing-shrink statistics."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .kernels import LookupIndex, tensor_casting

DEFAULT_TABLE_ROWS = 1_000_000
DEFAULT_DIM = 64
DEFAULT_BATCH = 2048
DEFAULT_ZIPF_S = 1.05


@dataclass(frozen=True)
class ModelConfig:
    name: str
    num_tables: int
    gathers_per_table: int
    bottom_mlp: tuple = ()
    top_mlp: tuple = ()
    table_rows: int = DEFAULT_TABLE_ROWS
    dim: int = DEFAULT_DIM
    batch: int = DEFAULT_BATCH

    def __post_init__(self):
        for name in ("num_tables", "gathers_per_table", "table_rows", "dim", "batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        object.__setattr__(self, "bottom_mlp", tuple(int(x) for x in self.bottom_mlp))
        object.__setattr__(self, "top_mlp", tuple(int(x) for x in self.top_mlp))

    @property
    def lookups_per_table(self) -> int:
        return self.batch * self.gathers_per_table

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("bottom_mlp", "top_mlp"):
            if isinstance(d.get(key), str):
                d[key] = tuple(int(x) for x in d[key].split("-"))
        return cls(**d)


def _mlp(s: str) -> tuple:
    return tuple(int(x) for x in s.split("-"))


def builtin_models() -> list[ModelConfig]:
    return [
        ModelConfig("RM1", 10, 80, _mlp("256-128-64"), _mlp("256-64-1")),
        ModelConfig("RM2", 40, 80, _mlp("256-128-64"), _mlp("512-128-1")),
        ModelConfig("RM3", 10, 20, _mlp("2560-512-64"), _mlp("512-128-1")),
        ModelConfig("RM4", 10, 20, _mlp("2560-1024-64"), _mlp("2048-2048-1024-1")),
    ]


def get_model(name: str) -> ModelConfig:
    for m in builtin_models():
        if m.name.lower() == name.lower():
            return m
    raise KeyError(f"unknown model {name!r}")


class DistKind(str, enum.Enum):
    UNIFORM = "uniform"
    ZIPF = "zipf"
    HISTOGRAM = "histogram"


@dataclass
class LookupDistribution:
    """Probability of each row being looked up.

    ``row_ids`` is ``None`` when the support is ``0..len(probs)-1``.
    """

    kind: DistKind
    probs: np.ndarray
    row_ids: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = DistKind(self.kind)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise ValueError("distribution is empty")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be non-negative")
        total = self.probs.sum()
        if not np.isclose(total, 1.0, rtol=0, atol=1e-9):
            raise ValueError(f"probabilities sum to {total}, not 1")
        if self.row_ids is not None:
            self.row_ids = np.asarray(self.row_ids, dtype=np.int64)
            if self.row_ids.shape != self.probs.shape:
                raise ValueError("row_ids and probs lengths differ")
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0

    @classmethod
    def uniform(cls, num_rows: int) -> "LookupDistribution":
        if num_rows < 1:
            raise ValueError("distribution is empty")
        return cls(DistKind.UNIFORM, np.full(num_rows, 1.0 / num_rows),
                   params={"rows": num_rows})

    @classmethod
    def zipf(cls, num_rows: int, s: float = DEFAULT_ZIPF_S) -> "LookupDistribution":
        """Bounded Zipf: row ``k`` (0-based) has weight ``(k+1)**-s``."""
        if num_rows < 1:
            raise ValueError("distribution is empty")
        w = np.arange(1, num_rows + 1, dtype=np.float64) ** -s
        return cls(DistKind.ZIPF, w / w.sum(), params={"rows": num_rows, "s": s})

    @classmethod
    def from_counts(cls, row_ids, counts) -> "LookupDistribution":
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0 or counts.sum() <= 0:
            raise ValueError("distribution is empty")
        return cls(DistKind.HISTOGRAM, counts / counts.sum(), row_ids=np.asarray(row_ids),
                   params={"counts": counts.astype(np.int64)})

    @property
    def cdf(self) -> np.ndarray:
        return self._cdf

    @property
    def max_row(self) -> int:
        if self.row_ids is None:
            return self.probs.size - 1
        return int(self.row_ids.max())

    def sample(self, n: int, rng) -> np.ndarray:
        u = rng.random(n)
        pos = np.searchsorted(self._cdf, u, side="right")
        np.minimum(pos, self.probs.size - 1, out=pos)
        return pos if self.row_ids is None else self.row_ids[pos]


def gen_lookups(cfg: ModelConfig, dist: LookupDistribution, seed: int) -> list[LookupIndex]:
    """One index per table; each table draws from its own child seed."""
    if dist.max_row >= cfg.table_rows:
        raise ValueError(
            f"distribution reaches row {dist.max_row} but tables have {cfg.table_rows} rows")
    L = cfg.lookups_per_table
    dst = np.repeat(np.arange(cfg.batch, dtype=np.int64), cfg.gathers_per_table)
    children = np.random.SeedSequence(seed).spawn(cfg.num_tables)
    out = []
    for child in children:
        src = dist.sample(L, np.random.default_rng(child))
        out.append(LookupIndex(src, dst, cfg.batch))
    return out


def load_histogram(path) -> LookupDistribution:
    """Read a ``row_id,count`` CSV (header line optional)."""
    rows, counts = [], []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'row_id,count', got {rec!r}")
            a, b = (c.strip() for c in rec)
            try:
                r, c = int(a), int(b)
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: malformed line {rec!r}") from None
            if r < 0:
                raise ValueError(f"{path}:{lineno}: negative row id {r}")
            if c < 0:
                raise ValueError(f"{path}:{lineno}: negative count {c}")
            rows.append(r)
            counts.append(c)
    if not rows:
        raise ValueError(f"{path}: histogram is empty")
    return LookupDistribution.from_counts(rows, counts)


def save_histogram(path, row_ids: Iterable[int], counts: Iterable[int]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("row_id", "count"))
        for r, c in zip(row_ids, counts):
            w.writerow((int(r), int(c)))
    return path


def histogram_from_lookups(src: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted-by-count-descending histogram of a lookup stream."""
    rows, counts = np.unique(src, return_counts=True)
    order = np.argsort(-counts, kind="stable")
    return rows[order], counts[order]


@dataclass(frozen=True)
class ShrinkRow:
    batch: int
    expanded_size: float
    coalesced_size: float

    @property
    def shrink(self) -> float:
        return self.coalesced_size / self.expanded_size


def coalesce_shrink(cfg: ModelConfig, dist: LookupDistribution,
                    batches: Iterable[int], seed: int) -> list[ShrinkRow]:
    """Expanded and coalesced gradient sizes, normalised to the batch size.

    Sizes are averaged over the model's tables.
    """
    out = []
    for b in batches:
        idxs = gen_lookups(cfg.with_(batch=int(b)), dist, seed)
        uniq = np.mean([tensor_casting(ix).num_unique for ix in idxs])
        L = cfg.gathers_per_table * b
        out.append(ShrinkRow(int(b), L / b, float(uniq) / b))
    return out
