import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tensorcast.kernels import CoalescedGradients, EmbeddingTable, IndexOutOfBounds
from tensorcast.optim import (
    OptimizerKind,
    OptimizerState,
    adagrad_step,
    rmsprop_step,
    sgd_step,
)


def one_row(w, g, row=0, rows=1):
    data = np.zeros((rows, len(w)), dtype=np.float32)
    data[row] = w
    return EmbeddingTable(data), CoalescedGradients(np.array([row]),
                                                   np.array([g], dtype=np.float32))


def test_sgd_step_value():
    t, c = one_row([1.0, 1.0], [2.0, 2.0])
    sgd_step(OptimizerState(OptimizerKind.SGD, lr=0.1), t, c)
    np.testing.assert_allclose(t.row(0), [0.8, 0.8], rtol=1e-7)


def test_sgd_zero_grad_is_noop():
    t, c = one_row([1.5, -2.0], [0.0, 0.0])
    sgd_step(OptimizerState(OptimizerKind.SGD, lr=0.1), t, c)
    np.testing.assert_array_equal(t.row(0), [1.5, -2.0])


def test_sgd_two_steps_equal_summed_step():
    t1, c1 = one_row([1.0], [0.25])
    _, c2 = one_row([1.0], [0.5])
    t2, csum = one_row([1.0], [0.75])
    s = OptimizerState(OptimizerKind.SGD, lr=0.1)
    sgd_step(s, t1, c1)
    sgd_step(s, t1, c2)
    sgd_step(s, t2, csum)
    np.testing.assert_allclose(t1.data, t2.data, rtol=1e-6)


def test_adagrad_step_value():
    t, c = one_row([0.0], [2.0])
    s = OptimizerState.for_table("adagrad", t, lr=0.1, eps=1e-8)
    adagrad_step(s, t, c)
    assert s.accum[0, 0] == 4.0
    assert t.row(0)[0] == pytest.approx(-0.1 * 2 / math.sqrt(4 + 1e-8), rel=1e-6)
    assert t.row(0)[0] == pytest.approx(-0.1, rel=1e-6)


def test_adagrad_zero_grad_changes_nothing():
    t, c = one_row([0.3], [0.0])
    s = OptimizerState.for_table("adagrad", t, lr=0.1)
    s.accum[:] = 2.5
    adagrad_step(s, t, c)
    assert s.accum[0, 0] == 2.5 and t.row(0)[0] == np.float32(0.3)


def test_adagrad_coalesced_differs_from_sequential():
    lr, eps = 0.1, 1e-8
    t_c, c_sum = one_row([0.0], [2.0])
    s_c = OptimizerState.for_table("adagrad", t_c, lr=lr, eps=eps)
    adagrad_step(s_c, t_c, c_sum)

    t_s, c1 = one_row([0.0], [1.0])
    s_s = OptimizerState.for_table("adagrad", t_s, lr=lr, eps=eps)
    adagrad_step(s_s, t_s, c1)
    adagrad_step(s_s, t_s, c1)

    coalesced = -lr * 2 / math.sqrt(eps + 4)
    sequential = -lr * (1 / math.sqrt(eps + 1) + 1 / math.sqrt(eps + 2))
    assert t_c.row(0)[0] == pytest.approx(coalesced, rel=1e-6)
    assert t_s.row(0)[0] == pytest.approx(sequential, rel=1e-6)
    assert abs(coalesced - sequential) / abs(coalesced) > 1e-3


def test_rmsprop_step_accum():
    t, c = one_row([0.0], [1.0])
    s = OptimizerState.for_table("rmsprop", t, lr=0.01, gamma=0.9)
    rmsprop_step(s, t, c)
    assert s.accum[0, 0] == pytest.approx(0.1, rel=1e-6)
    assert t.row(0)[0] == pytest.approx(-0.01 / math.sqrt(1e-8 + 0.1), rel=1e-6)


def test_rmsprop_zero_grad_decays_accum():
    t, c = one_row([0.7], [0.0])
    s = OptimizerState.for_table("rmsprop", t, gamma=0.9)
    s.accum[:] = 1.0
    rmsprop_step(s, t, c)
    assert s.accum[0, 0] == pytest.approx(0.9, rel=1e-6)
    assert t.row(0)[0] == np.float32(0.7)


def test_rmsprop_gamma_near_one_freezes_accum():
    t, c = one_row([0.0], [3.0])
    s = OptimizerState.for_table("rmsprop", t, gamma=1 - 1e-9)
    s.accum[:] = 0.5
    rmsprop_step(s, t, c)
    assert s.accum[0, 0] == pytest.approx(0.5, abs=1e-7)


def test_kind_mismatch_rejected():
    t, c = one_row([0.0], [1.0])
    with pytest.raises(ValueError):
        rmsprop_step(OptimizerState.for_table("adagrad", t), t, c)


@pytest.mark.parametrize("kw", [{"lr": 0}, {"eps": 0}, {"gamma": 1.0}, {"gamma": 0.0}])
def test_bad_hyperparameters(kw):
    with pytest.raises(ValueError):
        OptimizerState(OptimizerKind.RMSPROP, **kw)


@pytest.mark.parametrize("kind", ["sgd", "adagrad", "rmsprop"])
def test_out_of_range_row_touches_nothing(kind):
    t = EmbeddingTable.random(4, 3, 0)
    s = OptimizerState.for_table(kind, t)
    before_w = t.data.copy()
    before_a = None if s.accum is None else s.accum.copy()
    c = CoalescedGradients(np.array([1, 4]), np.ones((2, 3), np.float32))
    step = {"sgd": sgd_step, "adagrad": adagrad_step, "rmsprop": rmsprop_step}[kind]
    with pytest.raises(IndexOutOfBounds):
        step(s, t, c)
    assert t.data.tobytes() == before_w.tobytes()
    if before_a is not None:
        assert s.accum.tobytes() == before_a.tobytes()


@pytest.mark.parametrize("kind", ["adagrad", "rmsprop"])
@given(seed=st.integers(0, 2**31))
def test_untouched_rows_and_accums_bit_identical(kind, seed):
    rng = np.random.default_rng(seed)
    t = EmbeddingTable.random(16, 4, rng)
    s = OptimizerState.for_table(kind, t)
    s.accum[:] = rng.random(s.accum.shape).astype(np.float32)
    rows = np.sort(rng.choice(16, size=5, replace=False))
    w0, a0 = t.data.copy(), s.accum.copy()
    step = adagrad_step if kind == "adagrad" else rmsprop_step
    step(s, t, CoalescedGradients(rows, rng.standard_normal((5, 4)).astype(np.float32)))
    other = np.setdiff1d(np.arange(16), rows)
    assert t.data[other].tobytes() == w0[other].tobytes()
    assert s.accum[other].tobytes() == a0[other].tobytes()


@given(seed=st.integers(0, 2**31), n=st.integers(1, 8))
def test_adagrad_accum_monotone(seed, n):
    rng = np.random.default_rng(seed)
    t = EmbeddingTable.random(6, 3, rng)
    s = OptimizerState.for_table("adagrad", t)
    prev = s.accum.copy()
    for _ in range(n):
        rows = np.unique(rng.integers(0, 6, 4))
        g = rng.standard_normal((rows.size, 3)).astype(np.float32)
        adagrad_step(s, t, CoalescedGradients(rows, g))
        assert np.all(s.accum >= prev)
        prev = s.accum.copy()
