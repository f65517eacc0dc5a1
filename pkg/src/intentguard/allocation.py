"""Purchase-set allocation against purchased-record inference.

Given a published intent, pick q records to buy so that no true-intent record
looks over-represented (p-value >= 1 - lambda against the records' own
distribution) while buying as many true-intent records as possible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .attacks import PurchaseSet, PValueConfig, infer_pseudo_pi, pvalues
from .domain import Dataset, Intent
from .errors import ConfigError, InvalidIntentError, NoFeasibleAllocationError

log = logging.getLogger(__name__)

METHODS = ("mc", "mcmc", "gmcmc", "genetic")

_SAMPLE_CHUNK = 2_000_000


@dataclass(frozen=True)
class AllocationConfig:
    q: int
    lam: float = 0.3
    method: str = "mc"
    Z: int = 100_000
    epsilon: float = 0.001
    T: int = 50
    R: int = 10
    W: int = 30
    pvalue: PValueConfig = field(default_factory=lambda: PValueConfig(mode="exact"))
    seed: int = 0
    sampling: str = "density"
    max_init_draws: int = 1000
    max_iterations: int | None = None

    def __post_init__(self):
        if self.q < 1:
            raise ConfigError("q must be at least 1")
        if not 0 < self.lam <= 1:
            raise ConfigError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown allocation method {self.method!r}")
        if self.Z < 1 or self.W < 1 or self.T < 1:
            raise ConfigError("Z, T and W must be at least 1")
        if not 1 <= self.R <= self.T:
            raise ConfigError("R must lie in [1, T]")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.sampling not in ("density", "uniform"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")

    @property
    def chain_cap(self) -> int:
        return self.max_iterations if self.max_iterations is not None else 100 * self.q


def utility(purchased: PurchaseSet, true_intent: Intent) -> float:
    """Share of purchased records that fall in the true intent."""
    q = purchased.q
    if q == 0:
        raise ConfigError("utility of an empty purchase is undefined")
    return float(purchased.counts[true_intent.index()].sum()) / q


def is_feasible(purchased: PurchaseSet, true_intent: Intent, dataset: Dataset, lam: float,
                pvalue_config: PValueConfig = PValueConfig(mode="exact")) -> bool:
    threshold = 1.0 - lam
    ps = pvalues(purchased, dataset, pvalue_config)
    return all(p >= threshold for c, p in ps.items() if true_intent.contains(c))


def feasibility_report(purchased: PurchaseSet, true_intent: Intent, dataset: Dataset, lam: float,
                       pvalue_config: PValueConfig = PValueConfig(mode="exact")) -> list[dict]:
    """One row per purchased true-intent cell: multiplicity, p-value, confidence, verdict."""
    space = dataset.space
    pseudo = infer_pseudo_pi(purchased, space)
    ps = pvalues(purchased, dataset, pvalue_config, pseudo)
    total = dataset.freq[pseudo.index()].sum()
    rows = []
    for c, h in purchased.items():
        if not true_intent.contains(c):
            continue
        rows.append({
            "cell": dict(zip(space.names, space.labels(c))),
            "h": h,
            "f_P": h / purchased.q,
            "f_D_PI": float(dataset.freq[c] / total),
            "p_value": ps[c],
            "confidence": 1.0 - ps[c],
            "feasible": ps[c] >= 1.0 - lam,
        })
    return rows


def confidence_upper_bound(purchased: PurchaseSet, true_intent: Intent, dataset: Dataset) -> float:
    """Largest exact PRI confidence over purchased true-intent cells (0 when none bought)."""
    ps = pvalues(purchased, dataset, PValueConfig(mode="exact"))
    confs = [1.0 - p for c, p in ps.items() if true_intent.contains(c)]
    return max(confs, default=0.0)


class _Problem:
    """The published intent flattened to local cell ids 0..m-1 for the kernels."""

    def __init__(self, published_intent: Intent, true_intent: Intent, dataset: Dataset, sampling: str):
        space = dataset.space
        published_intent.validate(space)
        true_intent.validate(space)
        if not true_intent.issubset(published_intent):
            raise InvalidIntentError("true intent is not contained in the published intent")
        self.space = space
        self.cells = list(published_intent.cells())
        self.coords = np.array(self.cells, dtype=np.int64).reshape(len(self.cells), space.n)
        self.dim_sizes = np.array(space.shape, dtype=np.int64)
        self.freq = np.array([dataset.freq[c] for c in self.cells], dtype=np.float64)
        self.is_ti = np.array([true_intent.contains(c) for c in self.cells], dtype=np.uint8)
        positive = self.freq > 0
        self.ti_cells = np.flatnonzero(self.is_ti.astype(bool) & positive).astype(np.int64)
        self.disguise_cells = np.flatnonzero(~self.is_ti.astype(bool) & positive).astype(np.int64)
        if not positive.any():
            raise NoFeasibleAllocationError("the published intent holds no records")
        weights = self.freq if sampling == "density" else positive.astype(np.float64)
        cdf = np.cumsum(weights)
        self.cdf = cdf / cdf[-1]

    def sample(self, rng: np.random.Generator, count: int, q: int) -> np.ndarray:
        idx = np.searchsorted(self.cdf, rng.random((count, q)), side="right")
        return np.minimum(idx, len(self.cells) - 1).astype(np.int64)

    def evaluate(self, sets: np.ndarray, lam: float):
        return kernels.evaluate_sets(sets, self.coords, self.dim_sizes, self.freq, self.ti_cells, 1.0 - lam)

    def purchase(self, local_ids) -> PurchaseSet:
        counts = np.zeros(self.space.shape, dtype=np.int64)
        for i in np.asarray(local_ids):
            counts[self.cells[int(i)]] += 1
        return PurchaseSet(self.space, counts)


def allocate_mc(published_intent: Intent, true_intent: Intent, dataset: Dataset,
                config: AllocationConfig) -> PurchaseSet:
    """Best feasible set among Z i.i.d. draws of size q."""
    prob = _Problem(published_intent, true_intent, dataset, config.sampling)
    rng = np.random.default_rng(config.seed)
    q = config.q
    rows = max(1, _SAMPLE_CHUNK // q)
    best, best_tc = None, -1
    done = 0
    while done < config.Z:
        r = min(rows, config.Z - done)
        sets = prob.sample(rng, r, q)
        tc, feas, _ = prob.evaluate(sets, config.lam)
        ok = np.flatnonzero(feas)
        if ok.size:
            i = ok[np.argmax(tc[ok])]
            if tc[i] > best_tc:
                best, best_tc = sets[i].copy(), int(tc[i])
        done += r
    if best is None:
        raise NoFeasibleAllocationError(f"none of the {config.Z} sampled sets is feasible")
    return prob.purchase(best)


def _initial_feasible(prob: _Problem, rng: np.random.Generator, config: AllocationConfig) -> np.ndarray:
    drawn = 0
    batch = 64
    while drawn < config.max_init_draws:
        r = min(batch, config.max_init_draws - drawn)
        sets = prob.sample(rng, r, config.q)
        _, feas, _ = prob.evaluate(sets, config.lam)
        ok = np.flatnonzero(feas)
        if ok.size:
            return sets[ok[0]]
        drawn += r
    raise NoFeasibleAllocationError(
        f"no feasible starting set in {config.max_init_draws} draws")


def allocate_mcmc(published_intent: Intent, true_intent: Intent, dataset: Dataset,
                  config: AllocationConfig) -> PurchaseSet:
    """Metropolis walk over swap moves; ``method="gmcmc"`` keeps only the
    disguise-to-true-intent swaps.

    Stops once some purchased true-intent record's confidence comes within
    ``epsilon`` of lambda, returning that state; at the proposal cap the best
    set visited is returned instead.
    """
    prob = _Problem(published_intent, true_intent, dataset, config.sampling)
    rng = np.random.default_rng(config.seed)
    init = _initial_feasible(prob, rng, config)
    uniforms = rng.random((config.chain_cap, 4))
    current, best, steps, stopped = kernels.run_chain(
        init, uniforms, prob.coords, prob.dim_sizes, prob.freq, prob.is_ti,
        prob.ti_cells, prob.disguise_cells, config.method == "gmcmc", config.lam, config.epsilon)
    log.debug("%s: %d proposals, stopped=%d", config.method, steps, stopped)
    chosen = current if stopped or steps < config.chain_cap else best
    return prob.purchase(chosen)


def _crossover(a: np.ndarray, b: np.ndarray, cut: int) -> tuple[np.ndarray, np.ndarray]:
    return np.concatenate([a[:cut], b[cut:]]), np.concatenate([b[:cut], a[cut:]])


def allocate_genetic(published_intent: Intent, true_intent: Intent, dataset: Dataset,
                     config: AllocationConfig) -> PurchaseSet:
    """Evolve a population of purchase sets by one-point crossover of the R fittest."""
    prob = _Problem(published_intent, true_intent, dataset, config.sampling)
    rng = np.random.default_rng(config.seed)
    q = config.q
    pool = np.sort(prob.sample(rng, config.T, q), axis=1)
    best, best_tc = None, -1

    for gen in range(config.W + 1):
        tc, feas, _ = prob.evaluate(pool, config.lam)
        ok = np.flatnonzero(feas)
        if ok.size:
            order = ok[np.argsort(-tc[ok], kind="stable")]
            if tc[order[0]] > best_tc:
                best, best_tc = pool[order[0]].copy(), int(tc[order[0]])
        else:
            order = ok
        if gen == config.W:
            break
        parents = pool[order[:config.R]]
        if len(parents) < 2:
            # too few survivors to breed: refill with fresh draws
            fresh = np.sort(prob.sample(rng, config.T - len(parents), q), axis=1)
            pool = np.concatenate([parents, fresh])
            continue
        children = []
        for i in range(len(parents)):
            for j in range(len(parents)):
                if i == j:
                    continue
                cut = int(rng.integers(1, q)) if q > 1 else 0
                children.extend(_crossover(parents[i], parents[j], cut))
        pool = np.sort(np.array(children), axis=1)

    if best is None:
        raise NoFeasibleAllocationError("no feasible set appeared in any generation")
    return prob.purchase(best)


def allocate(published_intent: Intent, true_intent: Intent, dataset: Dataset,
             config: AllocationConfig) -> PurchaseSet:
    if config.method == "mc":
        return allocate_mc(published_intent, true_intent, dataset, config)
    if config.method in ("mcmc", "gmcmc"):
        return allocate_mcmc(published_intent, true_intent, dataset, config)
    return allocate_genetic(published_intent, true_intent, dataset, config)
