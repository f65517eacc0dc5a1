"""Attacker models: what an observer can infer about the buyer's true intent.

Three observers are modelled.  The PI-uniform attacker sees only the
published intent.  The efficiency-maximization (EM) attacker also knows the
record distribution and/or per-record costs.  The purchased-record-inference
(PRI) attacker sees the purchased multiset itself and tests each record for
over-representation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .domain import COUNT_COLUMN, MISSING_TOKENS, Cell, DataSpace, Dataset, Intent
from .errors import ConfigError, DegenerateIntentError, InvalidIntentError, SchemaError


@dataclass(frozen=True)
class AttackerKnowledge:
    knows_distribution: bool
    knows_cost: bool

    @property
    def name(self) -> str:
        if self.knows_distribution and self.knows_cost:
            return "em-fc"
        if self.knows_distribution:
            return "em-f"
        if self.knows_cost:
            return "em-c"
        return "pi-uniform"

    @property
    def is_em(self) -> bool:
        return self.knows_distribution or self.knows_cost

    @classmethod
    def parse(cls, name: str) -> "AttackerKnowledge":
        try:
            return ATTACKS[name.lower()]
        except KeyError:
            raise ConfigError(f"unknown attack {name!r}; expected one of {sorted(ATTACKS)}") from None

    def __str__(self) -> str:
        return self.name


PI_UNIFORM = AttackerKnowledge(False, False)
EM_F = AttackerKnowledge(True, False)
EM_C = AttackerKnowledge(False, True)
EM_FC = AttackerKnowledge(True, True)
ATTACKS = {a.name: a for a in (PI_UNIFORM, EM_FC, EM_F, EM_C)}


@dataclass(frozen=True)
class ConfidenceBounds:
    lower: float | None
    upper: float

    def __post_init__(self):
        if self.lower is not None and self.lower > self.upper:
            raise ValueError("lower confidence bound exceeds the upper bound")


# --- published-intent attacks ------------------------------------------------

def conf_pi_uniform(true_intent: Intent, published_intent: Intent) -> ConfidenceBounds:
    if not true_intent.issubset(published_intent):
        raise InvalidIntentError("true intent is not contained in the published intent")
    return ConfidenceBounds(1.0 / published_intent.size, true_intent.size / published_intent.size)


def em_weights(dataset: Dataset, knowledge: AttackerKnowledge) -> np.ndarray:
    """Per-cell weight the EM attacker believes the buyer maximizes."""
    if knowledge.knows_distribution and knowledge.knows_cost:
        return dataset.density * dataset.cost
    if knowledge.knows_distribution:
        return dataset.density
    if knowledge.knows_cost:
        return np.array(dataset.cost, dtype=np.float64)
    raise ConfigError("the PI-uniform attacker has no weights")


def conf_em_upper(dataset: Dataset, knowledge: AttackerKnowledge, published_intent: Intent,
                  cell: Sequence[int]) -> float:
    if not published_intent.contains(cell):
        raise InvalidIntentError(f"cell {tuple(cell)} lies outside the published intent")
    w = em_weights(dataset, knowledge)
    total = w[published_intent.index()].sum()
    if total <= 0:
        raise DegenerateIntentError("no weight mass inside the published intent")
    return float(w[tuple(cell)] / total)


def conf_em_bound(dataset: Dataset, knowledge: AttackerKnowledge, true_intent: Intent,
                  published_intent: Intent, weights: np.ndarray | None = None) -> float:
    """Largest EM confidence over the true intent's cells: max_V w / sum_U w.

    A true intent carrying no weight at all cannot be singled out, so its
    bound is 0.
    """
    w = em_weights(dataset, knowledge) if weights is None else weights
    top = float(w[true_intent.index()].max())
    if top <= 0:
        return 0.0
    total = float(w[published_intent.index()].sum())
    return top / total


def conf_em_worst_case(dataset: Dataset, knowledge: AttackerKnowledge, true_intent: Intent) -> float:
    """The floor reachable by publishing the whole space."""
    return conf_em_bound(dataset, knowledge, true_intent, Intent.full(dataset.space))


def attacker_bounds(dataset: Dataset, knowledge: AttackerKnowledge, true_intent: Intent,
                    published_intent: Intent) -> ConfidenceBounds:
    if not knowledge.is_em:
        return conf_pi_uniform(true_intent, published_intent)
    if not true_intent.issubset(published_intent):
        raise InvalidIntentError("true intent is not contained in the published intent")
    return ConfidenceBounds(None, conf_em_bound(dataset, knowledge, true_intent, published_intent))


# --- purchased-record inference -------------------------------------------

class PurchaseSet:
    """A multiset of cells; ``counts`` is a space-shaped array of multiplicities."""

    def __init__(self, space: DataSpace, counts: np.ndarray):
        counts = np.array(counts, dtype=np.int64).reshape(space.shape)
        if (counts < 0).any():
            raise ConfigError("multiplicities must be non-negative")
        counts.setflags(write=False)
        self.space = space
        self.counts = counts

    @classmethod
    def from_cells(cls, space: DataSpace, cells: Iterable[Sequence[int]]) -> "PurchaseSet":
        counts = np.zeros(space.shape, dtype=np.int64)
        for c in cells:
            counts[tuple(c)] += 1
        return cls(space, counts)

    @classmethod
    def from_counts(cls, space: DataSpace, mapping: Mapping[Cell, int]) -> "PurchaseSet":
        counts = np.zeros(space.shape, dtype=np.int64)
        for c, h in mapping.items():
            counts[tuple(c)] += int(h)
        return cls(space, counts)

    @property
    def q(self) -> int:
        return int(self.counts.sum())

    def h(self, cell: Sequence[int]) -> int:
        return int(self.counts[tuple(cell)])

    def items(self) -> list[tuple[Cell, int]]:
        """Observed cells with their multiplicities, in canonical (space) order."""
        idx = np.argwhere(self.counts > 0)
        return [(tuple(int(v) for v in c), int(self.counts[tuple(c)])) for c in idx]

    def as_list(self) -> list[Cell]:
        out = []
        for c, h in self.items():
            out.extend([c] * h)
        return out

    def within(self, intent: Intent) -> bool:
        return all(intent.contains(c) for c, _ in self.items())

    def __eq__(self, other):
        if not isinstance(other, PurchaseSet):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.counts, other.counts)

    __hash__ = None

    def __repr__(self):
        return f"PurchaseSet(q={self.q}, cells={len(self.items())})"


def load_purchase_set(path: str | Path, space: DataSpace) -> PurchaseSet:
    counts = np.zeros(space.shape, dtype=np.int64)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [n for n in space.names if n not in header]
        if missing:
            raise SchemaError(f"{path}: purchase CSV lacks dimension column(s) {missing}")
        for lineno, row in enumerate(reader, start=2):
            raw = [(row[n] or "").strip() for n in space.names]
            if any(v in MISSING_TOKENS for v in raw):
                continue
            try:
                cell = space.cell_from_labels(raw)
            except SchemaError as exc:
                raise SchemaError(f"{path}: row {lineno}: {exc}") from None
            token = (row.get(COUNT_COLUMN) or "1").strip()
            counts[cell] += int(token)
    return PurchaseSet(space, counts)


def write_purchase_set(purchased: PurchaseSet, path: str | Path) -> None:
    space = purchased.space
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(space.names + [COUNT_COLUMN])
        for cell, h in purchased.items():
            w.writerow(list(space.labels(cell)) + [h])


def infer_pseudo_pi(purchased: PurchaseSet, space: DataSpace | None = None) -> Intent:
    """Smallest intent covering every purchased record: per-dimension value union."""
    space = space or purchased.space
    if purchased.q == 0:
        raise ConfigError("cannot infer an intent from an empty purchase")
    held = purchased.counts > 0
    sel = []
    for d in range(space.n):
        other = tuple(a for a in range(space.n) if a != d)
        seen = held.any(axis=other) if other else held
        sel.append(tuple(int(v) for v in np.flatnonzero(seen)))
    return Intent(tuple(sel))


def empirical_dist(purchased: PurchaseSet, cell: Sequence[int]) -> float:
    q = purchased.q
    if q == 0:
        return 0.0
    return purchased.h(cell) / q


def conditional_density(dataset: Dataset, pseudo_pi: Intent, cell: Sequence[int]) -> float:
    if not pseudo_pi.contains(cell):
        raise InvalidIntentError(f"cell {tuple(cell)} lies outside the intent")
    total = dataset.freq[pseudo_pi.index()].sum()
    if total <= 0:
        raise DegenerateIntentError("the intent holds no records")
    return float(dataset.freq[tuple(cell)] / total)


@dataclass(frozen=True)
class PValueConfig:
    """``mode`` is "monte-carlo" (simulate L purchase sets) or "exact" (binomial tail)."""

    L: int = 100_000
    seed: int = 0
    mode: str = "monte-carlo"

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError("the replicate count L must be at least 1")
        if self.mode not in ("monte-carlo", "exact"):
            raise ConfigError(f"unknown p-value mode {self.mode!r}")


_MC_CHUNK = 4_000_000


def _simulate_exceedance(probs: np.ndarray, thresholds: np.ndarray, q: int, config: PValueConfig) -> np.ndarray:
    """Fraction of L simulated purchases, drawn i.i.d. from ``probs``, at or above each threshold."""
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    rng = np.random.default_rng(config.seed)
    rows = max(1, _MC_CHUNK // max(q, 1))
    exceed = np.zeros(len(probs), dtype=np.int64)
    done = 0
    while done < config.L:
        r = min(rows, config.L - done)
        u = rng.random((r, q))
        exceed += kernels.mc_exceed_counts(u, cdf, thresholds)
        done += r
    return exceed / config.L


def pvalues(purchased: PurchaseSet, dataset: Dataset, config: PValueConfig,
            pseudo_pi: Intent | None = None) -> dict[Cell, float]:
    """One-sided p-value of every observed cell's purchase share.

    In Monte-Carlo mode a single simulation is shared by all cells.
    """
    pseudo_pi = pseudo_pi or infer_pseudo_pi(purchased, dataset.space)
    q = purchased.q
    observed = purchased.items()
    total = dataset.freq[pseudo_pi.index()].sum()
    if total <= 0:
        raise DegenerateIntentError("the pseudo published intent holds no records")
    if config.mode == "exact":
        return {c: kernels.binom_sf(h, q, float(dataset.freq[c] / total)) for c, h in observed}
    cells = list(pseudo_pi.cells())
    pos = {c: i for i, c in enumerate(cells)}
    probs = np.array([dataset.freq[c] for c in cells], dtype=np.float64) / total
    thresholds = np.full(len(cells), q + 1, dtype=np.int64)
    for c, h in observed:
        if c not in pos:
            raise InvalidIntentError(f"purchased cell {c} lies outside the pseudo published intent")
        thresholds[pos[c]] = h
    frac = _simulate_exceedance(probs, thresholds, q, config)
    return {c: float(frac[pos[c]]) for c, _ in observed}


def pvalue(cell: Sequence[int], purchased: PurchaseSet, pseudo_pi: Intent, dataset: Dataset,
           config: PValueConfig) -> float:
    """Probability that a random purchase of the same size, drawn from the records
    inside ``pseudo_pi``, holds this cell at least as often as ``purchased`` does."""
    cell = tuple(cell)
    q = purchased.q
    h = purchased.h(cell)
    if q == 0:
        raise ConfigError("empty purchase")
    if h == 0:
        return 1.0
    p0 = conditional_density(dataset, pseudo_pi, cell)
    if config.mode == "exact":
        return kernels.binom_sf(h, q, p0)
    cells = list(pseudo_pi.cells())
    target = cells.index(cell)
    probs = np.array([dataset.freq[c] for c in cells], dtype=np.float64)
    probs /= probs.sum()
    thresholds = np.full(len(cells), q + 1, dtype=np.int64)
    thresholds[target] = h
    return float(_simulate_exceedance(probs, thresholds, q, config)[target])


def conf_pri(cell: Sequence[int], purchased: PurchaseSet, dataset: Dataset | None,
             config: PValueConfig = PValueConfig()) -> float:
    """Upper bound on the PRI attacker's confidence that ``cell`` is in the true intent."""
    if dataset is None:
        return empirical_dist(purchased, cell)
    pseudo = infer_pseudo_pi(purchased, purchased.space)
    return 1.0 - pvalue(cell, purchased, pseudo, dataset, config)


def evaluate_attack(purchased: PurchaseSet, dataset: Dataset | None,
                    config: PValueConfig = PValueConfig()) -> list[dict]:
    """Per observed cell: f_P, f_D_PI, p_value and the confidence bound.

    Without distribution knowledge f_D_PI and p_value are None and the
    confidence is the purchase share.
    """
    space = purchased.space
    q = purchased.q
    rows = []
    if dataset is None:
        for c, h in purchased.items():
            rows.append({"cell": dict(zip(space.names, space.labels(c))), "f_P": h / q,
                         "f_D_PI": None, "p_value": None, "confidence": h / q})
        return rows
    pseudo = infer_pseudo_pi(purchased, space)
    ps = pvalues(purchased, dataset, config, pseudo)
    total = dataset.freq[pseudo.index()].sum()
    for c, h in purchased.items():
        rows.append({
            "cell": dict(zip(space.names, space.labels(c))),
            "f_P": h / q,
            "f_D_PI": float(dataset.freq[c] / total),
            "p_value": ps[c],
            "confidence": 1.0 - ps[c],
        })
    return rows
