"""Time the compiled kernels against the numpy fallback on the Adult workloads.

    python benchmarks/bench_kernels.py [--repeats 3] [--Z 20000]

Both backends get the same inputs and must produce the same outputs; the
script checks that before reporting times.
"""

import argparse
import statistics
import sys
import time

import numpy as np

from intentguard import kernels
from intentguard.allocation import AllocationConfig, _Problem, allocate
from intentguard.attacks import EM_F, PValueConfig, pvalues
from intentguard.domain import case_study_intent, load_adult
from intentguard.expansion import ExpansionConfig, expand

KERNELS = ("binom_sf", "mc_exceed_counts", "evaluate_sets", "run_chain")


def use(backend):
    for name in KERNELS:
        setattr(kernels, name, getattr(backend, name))


def timed(fn, repeats):
    times, out = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def workloads(Z):
    ds = load_adult()
    jobs = []
    for size, q in ((1, 61), (2, 120)):
        ti = case_study_intent(ds.space, size)
        pi = expand(ds, ti, ExpansionConfig(0.3, 0.5 if size == 1 else 0.6, EM_F)).published_intent
        prob = _Problem(pi, ti, ds, "density")
        sets = prob.sample(np.random.default_rng(0), Z, q)
        jobs.append((f"evaluate_sets TI{size} Z={Z}",
                     lambda prob=prob, sets=sets: prob.evaluate(sets, 0.3)))
        for method in ("mcmc", "gmcmc", "genetic"):
            cfg = AllocationConfig(q=q, method=method, epsilon=0.001 if method == "mcmc" else 0.01, seed=0)
            jobs.append((f"{method} TI{size}",
                         lambda pi=pi, ti=ti, cfg=cfg: allocate(pi, ti, ds, cfg).counts))
        bought = allocate(pi, ti, ds, AllocationConfig(q=q, Z=2000, seed=0))
        jobs.append((f"MC p-values TI{size} L=100000",
                     lambda b=bought: pvalues(b, ds, PValueConfig(L=100_000, seed=0))))
    return jobs


def same(a, b):
    if isinstance(a, dict):
        return a == b
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--Z", type=int, default=20_000)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    jobs = workloads(args.Z)
    print(f"{'workload':34s} {'cython':>10s} {'python':>10s} {'speedup':>8s}")
    mismatches = 0
    for name, fn in jobs:
        use(kernels.compiled_backend)
        tc, oc = timed(fn, args.repeats)
        use(kernels.python_backend)
        tp, op = timed(fn, args.repeats)
        ok = same(oc, op)
        mismatches += not ok
        print(f"{name:34s} {tc:10.4f} {tp:10.4f} {tp / tc:7.1f}x{'' if ok else '  MISMATCH'}")
    use(kernels.backend)
    return 1 if mismatches else 0


if __name__ == "__main__":
    sys.exit(main())
