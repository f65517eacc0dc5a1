"""Greedy construction of a published intent that keeps attacker confidence under lambda.

Start from the true intent and repeatedly widen one dimension by one value.
Each step scores the nearest unused value of every dimension on two factors,
the records it would add (fewer is better) and how much it moves the attack
constraint toward satisfaction (more is better), and takes the best.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .attacks import (
    PI_UNIFORM,
    AttackerKnowledge,
    ConfidenceBounds,
    attacker_bounds,
    conf_em_bound,
    em_weights,
)
from .domain import DataSpace, Dataset, Intent
from .errors import ConfigError, InfeasibleError, InvalidIntentError, IterationLimitError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExpansionConfig:
    lam: float = 0.3
    alpha: float = 0.5
    attack: AttackerKnowledge = PI_UNIFORM
    max_iterations: int | None = None

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ConfigError(f"lambda must lie in (0, 1], got {self.lam}")
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class Candidate:
    dim: int
    value: int
    accu_dist: float = 0.0
    addition: int = 0
    increase: float = 0.0


@dataclass(frozen=True)
class TraceStep:
    candidate: Candidate
    score: float


@dataclass
class ExpansionResult:
    published_intent: Intent
    trace: list[TraceStep] = field(default_factory=list)
    bounds: ConfidenceBounds | None = None


def nearest_candidates(space: DataSpace, current_pi: Intent) -> list[Candidate]:
    """Values eligible for the next step, ordered by (dimension, value).

    An ordinal dimension offers the single unused value with the smallest
    summed index distance to the values already chosen (lowest index on
    ties).  A nominal dimension offers every unused value.  An empty list
    means every dimension is saturated.
    """
    out = []
    for d, (dim, chosen) in enumerate(zip(space.dimensions, current_pi.selections)):
        unused = [v for v in range(len(dim)) if v not in chosen]
        if not unused:
            continue
        if dim.ordinal:
            dists = [sum(abs(v - c) for c in chosen) for v in unused]
            best = int(np.argmin(dists))
            out.append(Candidate(d, unused[best], float(dists[best])))
        else:
            out.extend(Candidate(d, v) for v in unused)
    return out


def _slab(current_pi: Intent, candidate: Candidate):
    return current_pi.replace(candidate.dim, (candidate.value,)).index()


def candidate_addition(dataset: Dataset, current_pi: Intent, candidate: Candidate) -> int:
    return int(dataset.freq[_slab(current_pi, candidate)].sum())


def candidate_increase(dataset: Dataset, current_pi: Intent, candidate: Candidate,
                       attack: AttackerKnowledge, weights: np.ndarray | None = None) -> float:
    if not attack.is_em:
        return float(current_pi.size // len(current_pi.selections[candidate.dim]))
    w = em_weights(dataset, attack) if weights is None else weights
    return float(w[_slab(current_pi, candidate)].sum())


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def score_candidates(candidates: list[Candidate], alpha: float) -> list[tuple[Candidate, float]]:
    add = _minmax(np.array([c.addition for c in candidates], dtype=np.float64))
    inc = _minmax(np.array([c.increase for c in candidates], dtype=np.float64))
    scores = alpha * (add.max() - add) + (1 - alpha) * inc
    return [(c, float(s)) for c, s in zip(candidates, scores)]


def _upper_bound(dataset, attack, true_intent, pi, weights) -> float:
    if attack.is_em:
        return conf_em_bound(dataset, attack, true_intent, pi, weights)
    return true_intent.size / pi.size


def expand(dataset: Dataset, true_intent: Intent, config: ExpansionConfig) -> ExpansionResult:
    space = dataset.space
    true_intent.validate(space)
    attack = config.attack
    weights = em_weights(dataset, attack) if attack.is_em else None

    floor = _upper_bound(dataset, attack, true_intent, Intent.full(space), weights)
    if floor > config.lam:
        raise InfeasibleError(
            f"{attack.name}: even publishing the whole space leaves confidence "
            f"{floor:.4f} above lambda={config.lam}", floor)

    limit = config.max_iterations
    if limit is None:
        limit = sum(space.shape) - space.n
    pi = true_intent
    trace: list[TraceStep] = []
    while _upper_bound(dataset, attack, true_intent, pi, weights) > config.lam:
        if len(trace) >= limit:
            raise IterationLimitError(f"expansion exceeded {limit} iterations")
        pool = nearest_candidates(space, pi)
        if not pool:
            # unreachable after the feasibility check above
            raise InfeasibleError("all dimensions saturated before meeting lambda", floor)
        pool = [
            Candidate(c.dim, c.value, c.accu_dist,
                      candidate_addition(dataset, pi, c),
                      candidate_increase(dataset, pi, c, attack, weights))
            for c in pool
        ]
        scored = score_candidates(pool, config.alpha)
        best, score = scored[0]
        for c, s in scored[1:]:
            if s > score:
                best, score = c, s
        pi = pi.add(best.dim, best.value)
        trace.append(TraceStep(best, score))
        log.debug("expand: dim=%d value=%d score=%.4f", best.dim, best.value, score)

    bounds = attacker_bounds(dataset, attack, true_intent, pi)
    if not true_intent.issubset(pi):  # pragma: no cover - guaranteed by construction
        raise InvalidIntentError("published intent lost part of the true intent")
    return ExpansionResult(pi, trace, bounds)
