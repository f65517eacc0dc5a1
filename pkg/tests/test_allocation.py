import numpy as np
import pytest
from scipy import stats

from intentguard.allocation import (
    METHODS,
    AllocationConfig,
    _crossover,
    _initial_feasible,
    _Problem,
    allocate,
    confidence_upper_bound,
    feasibility_report,
    is_feasible,
    utility,
)
from intentguard.attacks import EM_F, PurchaseSet, PValueConfig
from intentguard.domain import DataSpace, Dataset, Dimension, Intent, case_study_intent
from intentguard.errors import ConfigError, InvalidIntentError, NoFeasibleAllocationError
from intentguard.expansion import ExpansionConfig, expand


def oracle_feasible(bought, ti, ds, lam):
    """Exact check, written independently of the library's p-value code."""
    counts = bought.counts
    q = int(counts.sum())
    held = counts > 0
    union = [set(np.flatnonzero(held.any(axis=tuple(a for a in range(held.ndim) if a != d))))
             for d in range(held.ndim)]
    mass = sum(ds.freq[c] for c in np.ndindex(ds.freq.shape) if all(c[d] in union[d] for d in range(len(c))))
    for c in zip(*np.nonzero(counts)):
        if ti.contains(c):
            p = stats.binom.sf(counts[c] - 1, q, ds.freq[c] / mass)
            if 1 - p > lam + 1e-9:
                return False
    return True


@pytest.fixture
def tiny():
    sp = DataSpace((Dimension("x", ("t", "o")),))
    return Dataset(sp, [1, 1], [1.0, 1.0])


def test_utility(space):
    ti = Intent(((0,), (0,), (0,)))
    assert utility(PurchaseSet.from_cells(space, [(0, 0, 0)] * 3), ti) == 1.0
    assert utility(PurchaseSet.from_cells(space, [(1, 0, 0)] * 3), ti) == 0.0
    ps = PurchaseSet.from_counts(space, {(0, 0, 0): 5, (1, 0, 0): 56})
    assert round(100 * utility(ps, ti), 1) == 8.2
    with pytest.raises(ConfigError):
        utility(PurchaseSet(space, np.zeros(space.shape)), ti)


def test_feasibility_example(tiny):
    ti = Intent(((0,),))
    ps = PurchaseSet.from_counts(tiny.space, {(0,): 3, (1,): 1})
    assert is_feasible(ps, ti, tiny, 0.7)
    assert not is_feasible(ps, ti, tiny, 0.6)
    assert is_feasible(ps, ti, tiny, 1.0)
    rows = feasibility_report(ps, ti, tiny, 0.7)
    assert rows[0]["p_value"] == pytest.approx(0.3125)
    assert rows[0]["feasible"] is True


def test_concentrated_purchase_is_infeasible():
    sp = DataSpace((Dimension("x", ("t", "o")),))
    ds = Dataset(sp, [1, 99], [1.0, 1.0])
    ps = PurchaseSet.from_counts(sp, {(0,): 9, (1,): 1})
    assert not is_feasible(ps, Intent(((0,),)), ds, 0.3)


def test_config_validation():
    with pytest.raises(ConfigError):
        AllocationConfig(q=0)
    with pytest.raises(ConfigError):
        AllocationConfig(q=5, R=60, T=50)
    with pytest.raises(ConfigError):
        AllocationConfig(q=5, epsilon=0)
    with pytest.raises(ConfigError):
        AllocationConfig(q=5, method="sa")
    assert AllocationConfig(q=7).chain_cap == 700


def test_true_intent_must_lie_inside(dataset):
    with pytest.raises(InvalidIntentError):
        allocate(Intent(((0,), (0,), (0,))), Intent(((1,), (0,), (0,))), dataset, AllocationConfig(q=3))


def test_mc_single_infeasible_draw():
    sp = DataSpace((Dimension("x", ("t", "o")),))
    ds = Dataset(sp, [50, 50], [1.0, 1.0])
    ti, pi = Intent(((0,),)), Intent(((0, 1),))
    cfg = AllocationConfig(q=10, lam=0.01, Z=1, seed=0)
    drawn = _Problem(pi, ti, ds, "density").sample(np.random.default_rng(0), 1, 10)[0]
    # a 50/50 draw holding several TI records cannot pass a 99% p-value bar
    assert 2 <= int((drawn == 0).sum()) <= 9
    with pytest.raises(NoFeasibleAllocationError):
        allocate(pi, ti, ds, cfg)


def test_mc_lambda_one_picks_most_true_intent(dataset):
    ti = Intent(((0,), (0, 1), (0,)))
    pi = Intent(((0, 1), (0, 1), (0,)))
    cfg = AllocationConfig(q=6, lam=1.0, Z=500, seed=2)
    prob = _Problem(pi, ti, dataset, "density")
    sets = prob.sample(np.random.default_rng(2), 500, 6)
    best = max(int(prob.is_ti[row].sum()) for row in sets)
    assert utility(allocate(pi, ti, dataset, cfg), ti) == best / 6


def test_crossover_fixed_point_and_length():
    a = np.array([1, 2, 3, 4])
    b = np.array([5, 6, 7, 8])
    c1, c2 = _crossover(a, a, 2)
    assert np.array_equal(c1, a) and np.array_equal(c2, a)
    c1, c2 = _crossover(a, b, 1)
    assert list(c1) == [1, 6, 7, 8] and list(c2) == [5, 2, 3, 4]
    assert len(c1) == len(c2) == 4


@pytest.fixture(scope="module")
def adult_setting():
    from intentguard.domain import load_adult
    ds = load_adult()
    ti = case_study_intent(ds.space, 1)
    pi = expand(ds, ti, ExpansionConfig(0.3, 0.5, EM_F)).published_intent
    return ds, ti, pi


@pytest.mark.parametrize("method", METHODS)
def test_methods_return_valid_sets(adult_setting, method):
    ds, ti, pi = adult_setting
    cfg = AllocationConfig(q=61, method=method, Z=5000, epsilon=0.07 if method == "gmcmc" else 0.001, seed=5)
    bought = allocate(pi, ti, ds, cfg)
    assert bought.q == 61
    assert bought.within(pi)
    assert oracle_feasible(bought, ti, ds, 0.3)
    assert confidence_upper_bound(bought, ti, ds) <= 0.3
    assert allocate(pi, ti, ds, cfg) == bought


def test_gmcmc_never_loses_utility(adult_setting):
    ds, ti, pi = adult_setting
    cfg = AllocationConfig(q=61, method="gmcmc", epsilon=1e-9, seed=1)
    prob = _Problem(pi, ti, ds, "density")
    start = _initial_feasible(prob, np.random.default_rng(1), cfg)
    bought = allocate(pi, ti, ds, cfg)
    assert utility(bought, ti) >= prob.is_ti[start].sum() / 61


def test_gmcmc_adult_utility(adult_setting):
    ds, ti, pi = adult_setting
    cfg = AllocationConfig(q=61, method="gmcmc", epsilon=0.07, seed=0)
    assert round(100 * utility(allocate(pi, ti, ds, cfg), ti), 1) == 8.2


def test_uniform_sampling_mode(adult_setting):
    ds, ti, pi = adult_setting
    cfg = AllocationConfig(q=61, method="genetic", sampling="uniform", seed=0)
    assert oracle_feasible(allocate(pi, ti, ds, cfg), ti, ds, 0.3)


def test_monte_carlo_feasibility_mode(tiny):
    ti = Intent(((0,),))
    ps = PurchaseSet.from_counts(tiny.space, {(0,): 3, (1,): 1})
    assert is_feasible(ps, ti, tiny, 0.7, PValueConfig(L=20000, seed=0)) == (0.3125 >= 0.3)
