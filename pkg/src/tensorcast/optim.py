"""Sparse optimizers that consume coalesced gradients.

Adaptive rules keep one accumulator per table element; only the rows named
in a :class:`~tensorcast.kernels.CoalescedGradients` are read or written.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import (
    ACCUM_DTYPE,
    STORAGE_DTYPE,
    CoalescedGradients,
    EmbeddingTable,
    gradient_scatter,
)


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    ADAGRAD = "adagrad"
    RMSPROP = "rmsprop"


@dataclass
class OptimizerState:
    kind: OptimizerKind
    lr: float = 0.01
    gamma: float = 0.9
    eps: float = 1e-8
    accum: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    @classmethod
    def for_table(cls, kind, table: EmbeddingTable, **hparams) -> "OptimizerState":
        state = cls(OptimizerKind(kind), **hparams)
        if state.kind is not OptimizerKind.SGD:
            state.accum = np.zeros_like(table.data, dtype=STORAGE_DTYPE)
        return state


def sgd_step(state: OptimizerState, table: EmbeddingTable,
             coal: CoalescedGradients) -> EmbeddingTable:
    lr = state.lr
    return gradient_scatter(table, coal, lambda w, g: w - lr * g)


def _adaptive_step(state, table, coal, decay):
    if state.accum is None or state.accum.shape != table.data.shape:
        raise ValueError("optimizer accumulator missing or shaped unlike the table")
    rows = np.asarray(coal.rows)
    # scatter validates rows before the closure runs, so accum is never
    # touched for an out-of-range row
    def update(w, g):
        a = state.accum[rows].astype(ACCUM_DTYPE)
        a = decay(a, g)
        state.accum[rows] = a.astype(STORAGE_DTYPE)
        return w - state.lr * g / np.sqrt(state.eps + a)
    return gradient_scatter(table, coal, update)


def adagrad_step(state: OptimizerState, table: EmbeddingTable,
                 coal: CoalescedGradients) -> EmbeddingTable:
    """``A += G**2``; ``W -= lr * G / sqrt(eps + A)`` with the updated ``A``."""
    if state.kind is not OptimizerKind.ADAGRAD:
        raise ValueError(f"adagrad_step called with {state.kind.value} state")
    return _adaptive_step(state, table, coal, lambda a, g: a + g * g)


def rmsprop_step(state: OptimizerState, table: EmbeddingTable,
                 coal: CoalescedGradients) -> EmbeddingTable:
    """``A = gamma*A + (1-gamma)*G**2``; ``W -= lr * G / sqrt(eps + A)``."""
    if state.kind is not OptimizerKind.RMSPROP:
        raise ValueError(f"rmsprop_step called with {state.kind.value} state")
    gamma = state.gamma
    return _adaptive_step(state, table, coal,
                          lambda a, g: gamma * a + (1.0 - gamma) * g * g)


_STEPS = {
    OptimizerKind.SGD: sgd_step,
    OptimizerKind.ADAGRAD: adagrad_step,
    OptimizerKind.RMSPROP: rmsprop_step,
}


def step(state: OptimizerState, table: EmbeddingTable,
         coal: CoalescedGradients) -> EmbeddingTable:
    return _STEPS[state.kind](state, table, coal)
