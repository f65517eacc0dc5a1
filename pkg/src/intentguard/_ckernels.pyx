# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; see _pykernels for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, calloc
from libc.string cimport memset

cnp.import_array()

cdef double _TAIL_EPS = 1e-18
cdef double _INF = float("inf")


cdef double _binom_sf(long h, long q, double p) noexcept nogil:
    cdef long mode, k
    cdef double r, total, tail, w
    if h <= 0:
        return 1.0
    if h > q:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    mode = <long>((q + 1) * p)
    if mode > q:
        mode = q
    r = p / (1.0 - p)
    total = 1.0
    tail = 1.0 if mode >= h else 0.0
    w = 1.0
    k = mode
    while k < q:
        w = w * <double>(q - k) / <double>(k + 1) * r
        total += w
        if k + 1 >= h:
            tail += w
        if w < total * _TAIL_EPS:
            break
        k += 1
    w = 1.0
    k = mode
    while k > 0:
        w = w * <double>k / <double>(q - k + 1) / r
        total += w
        if k - 1 >= h:
            tail += w
        if w < total * _TAIL_EPS:
            break
        k -= 1
    return tail / total


def binom_sf(long h, long q, double p):
    return _binom_sf(h, q, p)


def mc_exceed_counts(const double[:, ::1] uniforms, const double[::1] cdf,
                     const cnp.int64_t[::1] thresholds):
    cdef Py_ssize_t R = uniforms.shape[0], q = uniforms.shape[1], m = cdf.shape[0]
    cdef Py_ssize_t r, j, i, lo, hi, mid
    cdef double u
    out_arr = np.zeros(m, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef long long* counts = <long long*> calloc(m, sizeof(long long))
    if counts == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(R):
                memset(counts, 0, m * sizeof(long long))
                for j in range(q):
                    u = uniforms[r, j]
                    # number of cdf entries <= u
                    lo = 0
                    hi = m
                    while lo < hi:
                        mid = (lo + hi) >> 1
                        if cdf[mid] <= u:
                            lo = mid + 1
                        else:
                            hi = mid
                    if lo > m - 1:
                        lo = m - 1
                    counts[lo] += 1
                for i in range(m):
                    if counts[i] >= thresholds[i]:
                        out[i] += 1
    finally:
        free(counts)
    return out_arr


cdef double _mass(const cnp.int64_t[:, ::1] coords, const double[::1] freq,
                  long long* vcount, long long* dim_off, Py_ssize_t m, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t c, d
    cdef double total = 0.0
    cdef bint ok
    for c in range(m):
        ok = True
        for d in range(n):
            if vcount[dim_off[d] + coords[c, d]] == 0:
                ok = False
                break
        if ok:
            total += freq[c]
    return total


def evaluate_sets(sets, const cnp.int64_t[:, ::1] coords, const cnp.int64_t[::1] dim_sizes,
                  const double[::1] freq, const cnp.int64_t[::1] ti_cells, double threshold):
    cdef const cnp.int64_t[:, ::1] S = np.ascontiguousarray(sets, dtype=np.int64)
    cdef Py_ssize_t Z = S.shape[0], q = S.shape[1], m = coords.shape[0], n = coords.shape[1]
    cdef Py_ssize_t k = ti_cells.shape[0]
    cdef Py_ssize_t z, j, c, d, t, nvals = 0
    cdef long long h, tc
    cdef double mass, sf, conf, mc
    cdef bint feas

    ti_count_arr = np.zeros(Z, dtype=np.int64)
    feasible_arr = np.zeros(Z, dtype=np.uint8)
    max_conf_arr = np.zeros(Z, dtype=np.float64)
    cdef cnp.int64_t[::1] ti_count = ti_count_arr
    cdef unsigned char[::1] feasible = feasible_arr
    cdef double[::1] max_conf = max_conf_arr

    for d in range(n):
        nvals += dim_sizes[d]
    cdef long long* counts = <long long*> malloc(m * sizeof(long long))
    cdef long long* vcount = <long long*> malloc(nvals * sizeof(long long))
    cdef long long* dim_off = <long long*> malloc(n * sizeof(long long))
    if counts == NULL or vcount == NULL or dim_off == NULL:
        free(counts); free(vcount); free(dim_off)
        raise MemoryError()
    dim_off[0] = 0
    for d in range(1, n):
        dim_off[d] = dim_off[d - 1] + dim_sizes[d - 1]
    try:
        with nogil:
            for z in range(Z):
                memset(counts, 0, m * sizeof(long long))
                memset(vcount, 0, nvals * sizeof(long long))
                for j in range(q):
                    counts[S[z, j]] += 1
                for c in range(m):
                    if counts[c] > 0:
                        for d in range(n):
                            vcount[dim_off[d] + coords[c, d]] += counts[c]
                mass = _mass(coords, freq, vcount, dim_off, m, n)
                tc = 0
                feas = True
                mc = 0.0
                for t in range(k):
                    c = ti_cells[t]
                    h = counts[c]
                    tc += h
                    if h <= 0:
                        continue
                    if mass <= 0.0:
                        feas = False
                        conf = 1.0
                    else:
                        sf = _binom_sf(h, q, freq[c] / mass)
                        conf = 1.0 - sf
                        if sf < threshold:
                            feas = False
                    if conf > mc:
                        mc = conf
                ti_count[z] = tc
                feasible[z] = 1 if feas else 0
                max_conf[z] = mc
    finally:
        free(counts); free(vcount); free(dim_off)
    return ti_count_arr, feasible_arr, max_conf_arr


cdef inline bint _move(long long rem, long long add, long long* counts, long long* vcount,
                       long long* dim_off, const cnp.int64_t[:, ::1] coords, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t d
    cdef long long a, b
    cdef bint changed = False
    counts[rem] -= 1
    counts[add] += 1
    for d in range(n):
        a = coords[rem, d]
        b = coords[add, d]
        if a == b:
            continue
        vcount[dim_off[d] + a] -= 1
        vcount[dim_off[d] + b] += 1
        if vcount[dim_off[d] + a] == 0 or vcount[dim_off[d] + b] == 1:
            changed = True
    return changed


cdef inline void _check(long long* counts, const cnp.int64_t[::1] ti_list, Py_ssize_t k,
                        long q, double lam, double mass, const double[::1] freq,
                        bint* feasible, double* margin) noexcept nogil:
    cdef Py_ssize_t t
    cdef long long c, h
    cdef double sf, conf, threshold = 1.0 - lam
    feasible[0] = True
    margin[0] = _INF
    for t in range(k):
        c = ti_list[t]
        h = counts[c]
        if h <= 0:
            continue
        if mass <= 0.0:
            feasible[0] = False
            margin[0] = -_INF
            return
        sf = _binom_sf(h, q, freq[c] / mass)
        if sf < threshold:
            feasible[0] = False
        conf = 1.0 - sf
        if lam - conf < margin[0]:
            margin[0] = lam - conf


def run_chain(init, const double[:, ::1] uniforms, const cnp.int64_t[:, ::1] coords,
              const cnp.int64_t[::1] dim_sizes, const double[::1] freq,
              const unsigned char[::1] is_ti, const cnp.int64_t[::1] ti_list,
              const cnp.int64_t[::1] disguise_list, bint greedy, double lam, double eps):
    init_arr = np.asarray(init, dtype=np.int64)
    ti_mask = np.asarray(is_ti)[init_arr].astype(bool)
    s_arr = np.ascontiguousarray(np.concatenate([init_arr[ti_mask], init_arr[~ti_mask]]))
    cdef cnp.int64_t[::1] s = s_arr
    cdef Py_ssize_t q = s.shape[0], m = coords.shape[0], n = coords.shape[1]
    cdef Py_ssize_t k = ti_list.shape[0], nd = disguise_list.shape[0]
    cdef Py_ssize_t u = int(ti_mask.sum())
    cdef Py_ssize_t best_u = u
    cdef Py_ssize_t d, c, j, i, row, nvals = 0, ng, steps = 0, R = uniforms.shape[0]
    cdef long long rem, add, new_u
    cdef int g
    cdef int groups[4]
    cdef double r0, r1, r2, r3, prob, old_mass, mass, margin
    cdef bint feasible, accepted
    cdef int stopped = 0

    pos_arr = np.full(m, -1, dtype=np.int64)
    for i in range(k):
        pos_arr[ti_list[i]] = i
    for i in range(nd):
        pos_arr[disguise_list[i]] = i
    cdef cnp.int64_t[::1] pos = pos_arr

    best_arr = s_arr.copy()
    for d in range(n):
        nvals += dim_sizes[d]
    cdef long long* counts = <long long*> calloc(m, sizeof(long long))
    cdef long long* vcount = <long long*> calloc(nvals, sizeof(long long))
    cdef long long* dim_off = <long long*> malloc(n * sizeof(long long))
    if counts == NULL or vcount == NULL or dim_off == NULL:
        free(counts); free(vcount); free(dim_off)
        raise MemoryError()
    dim_off[0] = 0
    for d in range(1, n):
        dim_off[d] = dim_off[d - 1] + dim_sizes[d - 1]
    try:
        for j in range(q):
            counts[s[j]] += 1
        for c in range(m):
            if counts[c] > 0:
                for d in range(n):
                    vcount[dim_off[d] + coords[c, d]] += counts[c]
        mass = _mass(coords, freq, vcount, dim_off, m, n)
        _check(counts, ti_list, k, q, lam, mass, freq, &feasible, &margin)
        if feasible and margin < eps:
            return s_arr, best_arr, 0, 1

        for row in range(R):
            r0 = uniforms[row, 0]
            r1 = uniforms[row, 1]
            r2 = uniforms[row, 2]
            r3 = uniforms[row, 3]
            ng = 0
            if q - u > 0 and k > 0:
                groups[ng] = 1
                ng += 1
            if not greedy:
                if q - u > 0 and nd >= 2:
                    groups[ng] = 2
                    ng += 1
                if u > 0 and nd > 0:
                    groups[ng] = 3
                    ng += 1
                if u > 0 and k >= 2:
                    groups[ng] = 4
                    ng += 1
            if ng == 0:
                break
            steps += 1
            g = groups[<Py_ssize_t>(r0 * ng)]
            if g == 1 or g == 2:
                j = u + <Py_ssize_t>(r1 * (q - u))
            else:
                j = <Py_ssize_t>(r1 * u)
            rem = s[j]
            if g == 1:
                add = ti_list[<Py_ssize_t>(r2 * k)]
            elif g == 2:
                i = <Py_ssize_t>(r2 * (nd - 1))
                if i >= pos[rem]:
                    i += 1
                add = disguise_list[i]
            elif g == 3:
                add = disguise_list[<Py_ssize_t>(r2 * nd)]
            else:
                i = <Py_ssize_t>(r2 * (k - 1))
                if i >= pos[rem]:
                    i += 1
                add = ti_list[i]

            old_mass = mass
            if _move(rem, add, counts, vcount, dim_off, coords, n):
                mass = _mass(coords, freq, vcount, dim_off, m, n)
            _check(counts, ti_list, k, q, lam, mass, freq, &feasible, &margin)
            new_u = u + (1 if is_ti[add] else 0) - (1 if is_ti[rem] else 0)
            if feasible:
                if u > 0:
                    prob = <double>new_u / <double>u
                    if prob > 1.0:
                        prob = 1.0
                else:
                    prob = 1.0 if new_u > 0 else 0.5
                accepted = r3 < prob
            else:
                accepted = False
            if not accepted:
                _move(add, rem, counts, vcount, dim_off, coords, n)
                mass = old_mass
                continue

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
                best_arr = s_arr.copy()
            if margin < eps:
                stopped = 1
                break
    finally:
        free(counts); free(vcount); free(dim_off)
    return s_arr, best_arr, steps, stopped
