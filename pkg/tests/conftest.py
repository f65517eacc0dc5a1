import numpy as np
import pytest

from intentguard.domain import DataSpace, Dataset, Dimension, Intent, load_adult

CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, title, detail = results[num]
        line = f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


class _Criterion:
    def __init__(self, log):
        self.log = log
        self.num = None

    def start(self, num, title):
        # logged as failing until the test reaches passed()
        self.num, self.title = num, title
        self.log[num] = (False, title, "")

    def passed(self, detail=""):
        self.log[self.num] = (True, self.title, detail)


@pytest.fixture
def criterion(request):
    return _Criterion(request.config.stash[CRITERIA])


@pytest.fixture(scope="session")
def adult():
    return load_adult()


def small_space():
    return DataSpace((
        Dimension("a", ("a0", "a1", "a2", "a3"), ordinal=True),
        Dimension("b", ("b0", "b1", "b2")),
        Dimension("c", ("c0", "c1")),
    ))


@pytest.fixture
def space():
    return small_space()


@pytest.fixture
def dataset(space):
    rng = np.random.default_rng(7)
    freq = rng.integers(0, 30, space.shape)
    cost = rng.uniform(1, 5, space.shape)
    return Dataset(space, freq, cost)


def random_instance(rng, max_dims=5, max_values=6):
    """A random space, dataset and true intent for property checks."""
    n = int(rng.integers(1, max_dims + 1))
    dims = []
    for d in range(n):
        k = int(rng.integers(1, max_values + 1))
        dims.append(Dimension(f"d{d}", tuple(f"v{j}" for j in range(k)), ordinal=bool(rng.integers(0, 2))))
    sp = DataSpace(tuple(dims))
    freq = rng.integers(0, 20, sp.shape)
    # sprinkle empty cells
    freq = np.where(rng.random(sp.shape) < 0.2, 0, freq)
    if freq.sum() == 0:
        freq.flat[0] = 1
    cost = rng.uniform(0.5, 10.0, sp.shape)
    ds = Dataset(sp, freq, cost)
    sel = []
    for k in sp.shape:
        size = int(rng.integers(1, min(k, 2) + 1))
        sel.append(tuple(int(v) for v in rng.choice(k, size=size, replace=False)))
    return ds, Intent(tuple(sel))
