import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from tensorcast.kernels import EmbeddingTable, LookupIndex

settings.register_profile("ci", deadline=None, max_examples=150, derandomize=True)
settings.load_profile("ci")


@pytest.fixture
def two_sample_index():
    # batch 0 gathers E1, E2, E4; batch 1 gathers E0, E2
    return LookupIndex(np.array([1, 2, 4, 0, 2]), np.array([0, 0, 0, 1, 1]), 2)


@pytest.fixture
def ramp_table():
    # row i == [i, i]
    return EmbeddingTable(np.repeat(np.arange(5, dtype=np.float32)[:, None], 2, axis=1))


@st.composite
def instances(draw, max_rows=64, max_dim=8, max_lookups=256):
    """(table, index, grad) with plenty of repeated rows."""
    rows = draw(st.integers(1, max_rows))
    dim = draw(st.integers(1, max_dim))
    L = draw(st.integers(1, max_lookups))
    B = draw(st.integers(1, L))
    hot = draw(st.integers(1, rows))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    src = rng.integers(0, hot, L)
    dst = rng.integers(0, B, L)
    table = EmbeddingTable.random(rows, dim, rng)
    grad = rng.standard_normal((B, dim)).astype(np.float32)
    return table, LookupIndex(src, dst, B), grad


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
