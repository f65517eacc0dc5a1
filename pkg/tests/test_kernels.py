import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from intentguard import kernels

BACKENDS = [kernels.python_backend]
if kernels.compiled_backend is not None:
    BACKENDS.append(kernels.compiled_backend)
backend_ids = [b.__name__.rsplit(".", 1)[-1] for b in BACKENDS]
needs_compiled = pytest.mark.skipif(kernels.compiled_backend is None, reason="extension not built")


def exact_tail(h, q, p):
    """P[X >= h] with exact rational arithmetic."""
    p = Fraction(p)
    return float(sum(math.comb(q, k) * p**k * (1 - p) ** (q - k) for k in range(max(h, 0), q + 1)))


@pytest.mark.parametrize("be", BACKENDS, ids=backend_ids)
def test_binom_sf_edges(be):
    assert be.binom_sf(0, 10, 0.3) == 1.0
    assert be.binom_sf(11, 10, 0.3) == 0.0
    assert be.binom_sf(1, 10, 0.0) == 0.0
    assert be.binom_sf(10, 10, 1.0) == 1.0
    assert be.binom_sf(3, 4, 0.5) == pytest.approx(0.3125, abs=1e-15)


@pytest.mark.parametrize("be", BACKENDS, ids=backend_ids)
@settings(max_examples=100, deadline=None)
@given(q=st.integers(1, 150), p=st.floats(1e-4, 1 - 1e-4), frac=st.floats(0, 1))
def test_binom_sf_matches_exact_and_scipy(be, q, p, frac):
    h = int(round(frac * q))
    got = be.binom_sf(h, q, p)
    assert got == pytest.approx(exact_tail(h, q, p), rel=1e-9, abs=1e-15)
    assert got == pytest.approx(stats.binom.sf(h - 1, q, p), rel=1e-7, abs=1e-14)


@pytest.mark.parametrize("be", BACKENDS, ids=backend_ids)
def test_mc_exceed_counts_by_hand(be):
    cdf = np.array([0.5, 0.75, 1.0])
    u = np.array([[0.1, 0.2, 0.9], [0.6, 0.7, 0.8], [0.0, 0.99, 0.5]])
    # rows land in cells [0,0,2], [1,1,2], [0,2,1]
    got = be.mc_exceed_counts(u, cdf, np.array([2, 1, 1], dtype=np.int64))
    assert list(got) == [1, 2, 3]


def _random_problem(rng, m=12, q=15, Z=40):
    dim_sizes = np.array([3, 2, 2], dtype=np.int64)
    coords = np.array([[a, b, c] for a in range(3) for b in range(2) for c in range(2)], dtype=np.int64)[:m]
    freq = rng.integers(1, 40, m).astype(np.float64)
    ti = np.array([0, 1], dtype=np.int64)
    sets = rng.integers(0, m, (Z, q)).astype(np.int64)
    return sets, coords, dim_sizes, freq, ti


def _evaluate_oracle(sets, coords, freq, ti, threshold):
    out = []
    for row in sets:
        counts = np.bincount(row, minlength=len(freq))
        held = coords[counts > 0]
        union = [set(held[:, d]) for d in range(coords.shape[1])]
        inside = [all(c[d] in union[d] for d in range(len(c))) for c in coords]
        mass = freq[inside].sum()
        feas = True
        for t in ti:
            if counts[t] > 0 and stats.binom.sf(counts[t] - 1, len(row), freq[t] / mass) < threshold - 1e-12:
                feas = False
        out.append((int(counts[ti].sum()), feas))
    return out


@pytest.mark.parametrize("be", BACKENDS, ids=backend_ids)
def test_evaluate_sets_against_oracle(be):
    rng = np.random.default_rng(3)
    sets, coords, dims, freq, ti = _random_problem(rng)
    tc, feas, _ = be.evaluate_sets(sets, coords, dims, freq, ti, 0.7)
    oracle = _evaluate_oracle(sets, coords, freq, ti, 0.7)
    assert [int(x) for x in tc] == [o[0] for o in oracle]
    assert [bool(x) for x in feas] == [o[1] for o in oracle]


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), q=st.integers(2, 40), lam=st.floats(0.05, 0.9))
def test_backends_agree_on_evaluation(seed, q, lam):
    rng = np.random.default_rng(seed)
    sets, coords, dims, freq, ti = _random_problem(rng, q=q)
    a = kernels.python_backend.evaluate_sets(sets, coords, dims, freq, ti, 1 - lam)
    b = kernels.compiled_backend.evaluate_sets(sets, coords, dims, freq, ti, 1 - lam)
    for x, y in zip(a, b):
        assert np.array_equal(np.asarray(x), np.asarray(y))


@needs_compiled
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), q=st.integers(1, 60))
def test_backends_agree_on_tail_bitwise(seed, q):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        h, p = int(rng.integers(0, q + 2)), float(rng.random())
        assert kernels.python_backend.binom_sf(h, q, p) == kernels.compiled_backend.binom_sf(h, q, p)


@needs_compiled
@pytest.mark.parametrize("greedy", [False, True])
def test_backends_agree_on_chain(greedy):
    rng = np.random.default_rng(11)
    m = 12
    _, coords, dims, freq, _ = _random_problem(rng, m=m)
    is_ti = np.zeros(m, dtype=np.uint8)
    is_ti[:2] = 1
    ti_list = np.array([0, 1], dtype=np.int64)
    dg_list = np.arange(2, m, dtype=np.int64)
    init = np.arange(2, 14) % m
    init = init.astype(np.int64)
    uniforms = rng.random((500, 4))
    a = kernels.python_backend.run_chain(init, uniforms, coords, dims, freq, is_ti, ti_list, dg_list,
                                         greedy, 0.3, 1e-6)
    b = kernels.compiled_backend.run_chain(init, uniforms, coords, dims, freq, is_ti, ti_list, dg_list,
                                           greedy, 0.3, 1e-6)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[2:] == tuple(b[2:])


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")
