"""Pure-Python / numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation, including the
floating-point evaluation order of the binomial tail, so both backends give
identical answers for identical inputs.  Cell ids here are *local*: positions
0..m-1 in the published intent's cell list.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

_TAIL_EPS = 1e-18


def binom_sf(h: int, q: int, p: float) -> float:
    """P[X >= h] for X ~ Binomial(q, p).

    Sums unnormalized pmf ratios outward from the mode, so no factorials,
    no underflow at the start and no dependence on libm's lgamma.
    """
    if h <= 0:
        return 1.0
    if h > q:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    mode = int((q + 1) * p)
    if mode > q:
        mode = q
    r = p / (1.0 - p)
    total = 1.0
    tail = 1.0 if mode >= h else 0.0
    w = 1.0
    k = mode
    while k < q:
        w = w * (q - k) / (k + 1) * r
        total += w
        if k + 1 >= h:
            tail += w
        if w < total * _TAIL_EPS:
            break
        k += 1
    w = 1.0
    k = mode
    while k > 0:
        w = w * k / (q - k + 1) / r
        total += w
        if k - 1 >= h:
            tail += w
        if w < total * _TAIL_EPS:
            break
        k -= 1
    return tail / total


_cached_sf = lru_cache(maxsize=1 << 16)(binom_sf)


def mc_exceed_counts(uniforms: np.ndarray, cdf: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """For each cell, how many replicate rows hold at least ``thresholds[i]`` draws of it.

    Row r of ``uniforms`` is one replicate of q draws; a draw u lands in the
    first cell whose cumulative probability exceeds u.
    """
    R = uniforms.shape[0]
    m = cdf.shape[0]
    idx = np.searchsorted(cdf, uniforms, side="right")
    np.minimum(idx, m - 1, out=idx)
    idx += (np.arange(R, dtype=idx.dtype) * m)[:, None]
    counts = np.bincount(idx.ravel(), minlength=R * m).reshape(R, m)
    return (counts >= thresholds[None, :]).sum(axis=0).astype(np.int64)


def _presence(counts: np.ndarray, coords: np.ndarray, dim_sizes: np.ndarray) -> np.ndarray:
    """Boolean (Z, m): cell lies in the per-dimension value union of each row's purchases."""
    Z, m = counts.shape
    incl = np.ones((Z, m), dtype=bool)
    held = counts > 0
    for d, size in enumerate(dim_sizes):
        onehot = coords[:, d][:, None] == np.arange(size)[None, :]
        seen = (held.astype(np.int64) @ onehot.astype(np.int64)) > 0
        incl &= seen[:, coords[:, d]]
    return incl


def evaluate_sets(sets, coords, dim_sizes, freq, ti_cells, threshold):
    """Utility numerator, feasibility and max attacker confidence for each row of ``sets``.

    A row is feasible when every purchased true-intent cell has binomial tail
    p-value >= ``threshold`` under the row's own pseudo published intent.
    """
    sets = np.asarray(sets, dtype=np.int64)
    Z, q = sets.shape
    m = coords.shape[0]
    flat = sets + (np.arange(Z, dtype=np.int64) * m)[:, None]
    counts = np.bincount(flat.ravel(), minlength=Z * m).reshape(Z, m)
    mass = _presence(counts, coords, dim_sizes).astype(np.float64) @ freq
    h = counts[:, ti_cells]
    ti_count = h.sum(axis=1).astype(np.int64)
    feasible = np.ones(Z, dtype=np.uint8)
    max_conf = np.zeros(Z, dtype=np.float64)
    for z in range(Z):
        mz = mass[z]
        for t, c in enumerate(ti_cells):
            hz = int(h[z, t])
            if hz <= 0:
                continue
            if mz <= 0.0:
                feasible[z] = 0
                conf = 1.0
            else:
                sf = _cached_sf(hz, q, freq[c] / mz)
                conf = 1.0 - sf
                if sf < threshold:
                    feasible[z] = 0
            if conf > max_conf[z]:
                max_conf[z] = conf
    return ti_count, feasible, max_conf


class _ChainState:
    # plain lists: per-element numpy indexing would dominate the chain's cost
    def __init__(self, cells, coords, dim_sizes, freq, is_ti):
        self.coords = [tuple(int(v) for v in row) for row in coords]
        self.freq = [float(f) for f in freq]
        self.m = len(self.coords)
        self.n = int(coords.shape[1])
        self.counts = [int(c) for c in np.bincount(cells, minlength=self.m)]
        self.vcount = [[0] * int(s) for s in dim_sizes]
        for c in range(self.m):
            if self.counts[c]:
                for d in range(self.n):
                    self.vcount[d][self.coords[c][d]] += self.counts[c]
        self.mass = self._mass()

    def _mass(self):
        total = 0.0
        vcount = self.vcount
        for c in range(self.m):
            row = self.coords[c]
            for d in range(self.n):
                if vcount[d][row[d]] == 0:
                    break
            else:
                total += self.freq[c]
        return total

    def move(self, rem, add):
        """Apply rem -> add; return True when the value union changed."""
        self.counts[rem] -= 1
        self.counts[add] += 1
        changed = False
        ra, rb = self.coords[rem], self.coords[add]
        for d in range(self.n):
            a, b = ra[d], rb[d]
            if a == b:
                continue
            vc = self.vcount[d]
            vc[a] -= 1
            vc[b] += 1
            if vc[a] == 0 or vc[b] == 1:
                changed = True
        return changed

    def check(self, ti_list, q, lam):
        """(feasible, min over purchased TI cells of lam - confidence)."""
        threshold = 1.0 - lam
        feasible = True
        margin = math.inf
        for c in ti_list:
            h = self.counts[c]
            if h <= 0:
                continue
            if self.mass <= 0.0:
                return False, -math.inf
            sf = _cached_sf(h, q, self.freq[c] / self.mass)
            if sf < threshold:
                feasible = False
            conf = 1.0 - sf
            if lam - conf < margin:
                margin = lam - conf
        return feasible, margin


def run_chain(init, uniforms, coords, dim_sizes, freq, is_ti, ti_list, disguise_list,
              greedy, lam, eps):
    """Metropolis walk over purchase multisets of fixed size.

    ``uniforms`` supplies four numbers per proposal: group choice, removed
    record, added record, acceptance.  Returns (current, best, steps, stopped)
    where ``stopped`` is 1 when the margin fell under ``eps``.
    """
    init = np.asarray(init, dtype=np.int64)
    q = init.shape[0]
    is_ti = [bool(x) for x in is_ti]
    ti_list = [int(c) for c in ti_list]
    disguise_list = [int(c) for c in disguise_list]
    # partition: s[:u] are true-intent records, s[u:] disguising ones
    s = [int(c) for c in init if is_ti[c]]
    u = len(s)
    s += [int(c) for c in init if not is_ti[c]]
    k = len(ti_list)
    nd = len(disguise_list)
    ti_pos = {c: i for i, c in enumerate(ti_list)}
    dg_pos = {c: i for i, c in enumerate(disguise_list)}

    def out(cur, best, steps, stopped):
        return np.array(cur, dtype=np.int64), np.array(best, dtype=np.int64), steps, stopped

    state = _ChainState(np.array(s, dtype=np.int64), coords, dim_sizes, freq, is_ti)
    best = list(s)
    best_u = u
    feasible, margin = state.check(ti_list, q, lam)
    if feasible and margin < eps:
        return out(s, best, 0, 1)

    steps = 0
    verdicts = {}
    for r0, r1, r2, r3 in np.asarray(uniforms, dtype=np.float64).tolist():
        groups = []
        if q - u > 0 and k > 0:
            groups.append(1)
        if not greedy:
            if q - u > 0 and nd >= 2:
                groups.append(2)
            if u > 0 and nd > 0:
                groups.append(3)
            if u > 0 and k >= 2:
                groups.append(4)
        if not groups:
            break
        steps += 1
        g = groups[int(r0 * len(groups))]
        if g in (1, 2):
            j = u + int(r1 * (q - u))
        else:
            j = int(r1 * u)
        rem = s[j]
        if g == 1:
            add = ti_list[int(r2 * k)]
        elif g == 2:
            i = int(r2 * (nd - 1))
            if i >= dg_pos[rem]:
                i += 1
            add = disguise_list[i]
        elif g == 3:
            add = disguise_list[int(r2 * nd)]
        else:
            i = int(r2 * (k - 1))
            if i >= ti_pos[rem]:
                i += 1
            add = ti_list[i]

        new_u = u + is_ti[add] - is_ti[rem]
        # the verdict depends only on the state, which rejections leave alone,
        # so it is remembered until the next accepted move
        seen = verdicts.get((rem, add))
        if seen is None:
            old_mass = state.mass
            if state.move(rem, add):
                state.mass = state._mass()
            feasible, margin = state.check(ti_list, q, lam)
            applied = True
        else:
            feasible, margin, new_mass = seen
            applied = False
        if feasible:
            if u > 0:
                prob = min(1.0, new_u / u)
            else:
                prob = 1.0 if new_u > 0 else 0.5
            accepted = r3 < prob
        else:
            accepted = False
        if not accepted:
            if applied:
                verdicts[rem, add] = (feasible, margin, state.mass)
                state.move(add, rem)
                state.mass = old_mass
            continue
        if not applied:
            state.move(rem, add)
            state.mass = new_mass
        verdicts.clear()

        if g == 1:
            s[j] = s[u]
            s[u] = add
        elif g == 2:
            s[j] = add
        elif g == 3:
            s[j] = s[u - 1]
            s[u - 1] = add
        else:
            s[j] = add
        u = new_u
        if u > best_u:
            best_u = u
            best = list(s)
        if margin < eps:
            return out(s, best, steps, 1)
    return out(s, best, steps, 0)
