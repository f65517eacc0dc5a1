"""Command-line entry point: ``intentguard <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import harness
from .allocation import METHODS, AllocationConfig, allocate, confidence_upper_bound, feasibility_report, utility
from .attacks import (
    ATTACKS,
    AttackerKnowledge,
    PValueConfig,
    evaluate_attack,
    load_purchase_set,
    write_purchase_set,
)
from .domain import (
    SyntheticParams,
    adult_space,
    case_study_intent,
    generate_synthetic,
    load_intent,
    load_schema,
    records_in_intent,
    save_intent,
    save_schema,
    write_dataset,
)
from .errors import ConfigError, IntentGuardError
from .expansion import ExpansionConfig, expand

log = logging.getLogger("intentguard")


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dataset(args):
    return harness.resolve_dataset(args.dataset, args.schema, args.synth_seed)


def _true_intent(args, dataset):
    if args.intent:
        return load_intent(args.intent, dataset.space)
    return case_study_intent(dataset.space, args.ti_size)


def _attack(name: str) -> AttackerKnowledge:
    return AttackerKnowledge.parse(name)


def _published_intent(args, dataset, ti):
    """Read --published, or expand the true intent with --pi-attack."""
    if args.published:
        return load_intent(args.published, dataset.space)
    cfg = ExpansionConfig(args.lam, args.alpha, _attack(args.pi_attack))
    return expand(dataset, ti, cfg).published_intent


def _parse_grid(text: str) -> list[float]:
    """``0.1,0.2,0.5`` or ``start:stop:step`` (stop inclusive)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad grid {text!r}; expected start:stop:step")
        start, stop, step = map(float, parts)
        if step <= 0:
            raise ConfigError("grid step must be positive")
        n = int(round((stop - start) / step))
        return [round(start + i * step, 10) for i in range(n + 1)]
    vals = [float(x) for x in text.split(",") if x.strip()]
    if not vals:
        raise ConfigError("sweep grid is empty")
    return vals


# --- commands -----------------------------------------------------------------

def cmd_expand(args) -> int:
    ds = _dataset(args)
    ti = _true_intent(args, ds)
    attack = _attack(args.attack)
    cfg = ExpansionConfig(args.lam, args.alpha, attack, args.max_iterations)
    res = expand(ds, ti, cfg)
    out = _out_dir(args.out)
    space = ds.space
    save_intent(res.published_intent, space, out / "published_intent.json")
    with open(out / "trace.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "dimension", "value", "accu_dist", "addition", "increase", "score"])
        for i, step in enumerate(res.trace, 1):
            c = step.candidate
            dim = space.dimensions[c.dim]
            w.writerow([i, dim.name, dim.values[c.value], repr(c.accu_dist), c.addition,
                        repr(c.increase), repr(step.score)])
    rec_pi = records_in_intent(ds, res.published_intent)
    rec_ti = records_in_intent(ds, ti)
    summary = {
        "attack": attack.name,
        "lambda": args.lam,
        "alpha": args.alpha,
        "iterations": len(res.trace),
        "conf_lb": res.bounds.lower,
        "conf_ub": res.bounds.upper,
        "pi_size": res.published_intent.size,
        "records_pi": rec_pi.count,
        "records_ti": rec_ti.count,
        "total_cost": rec_pi.total_cost,
        "cost_ti": rec_ti.total_cost,
        "utility": rec_ti.count / rec_pi.count if rec_pi.count else None,
    }
    _dump_json(summary, out / "summary.json")
    print(json.dumps(summary, sort_keys=True))
    return 0


def _pvalue_config(args, default_mode):
    return PValueConfig(L=args.L, seed=args.seed, mode=args.pvalue_mode or default_mode)


def cmd_allocate(args) -> int:
    ds = _dataset(args)
    ti = _true_intent(args, ds)
    pi = _published_intent(args, ds, ti)
    pv = _pvalue_config(args, "exact")
    cfg = AllocationConfig(q=args.q, lam=args.lam, method=args.method, Z=args.Z, epsilon=args.epsilon,
                           T=args.T, R=args.R, W=args.W, pvalue=pv, seed=args.seed,
                           sampling=args.sampling, max_iterations=args.max_iterations)
    t0 = time.perf_counter()
    bought = allocate(pi, ti, ds, cfg)
    elapsed = time.perf_counter() - t0
    out = _out_dir(args.out)
    write_purchase_set(bought, out / "purchase_set.csv")
    report = feasibility_report(bought, ti, ds, args.lam, pv)
    with open(out / "feasibility.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = ds.space.names
        w.writerow(list(names) + ["h", "f_P", "f_D_PI", "p_value", "confidence", "feasible"])
        for r in report:
            w.writerow([r["cell"][n] for n in names] + [
                r["h"], repr(r["f_P"]), repr(r["f_D_PI"]), repr(r["p_value"]),
                repr(r["confidence"]), str(r["feasible"]).lower()])
    summary = {
        "method": args.method,
        "q": args.q,
        "utility": utility(bought, ti),
        "confidence_upper_bound": confidence_upper_bound(bought, ti, ds),
    }
    _dump_json(summary, out / "summary.json")
    # wall-clock kept apart so the primary files stay reproducible byte for byte
    _dump_json({"elapsed_seconds": elapsed}, out / "timing.json")
    print(json.dumps({**summary, "elapsed_seconds": elapsed}, sort_keys=True))
    return 0


def cmd_attack(args) -> int:
    if args.schema:
        space = load_schema(args.schema)
    elif args.dataset in ("adult", "synthetic", "synth"):
        space = adult_space()
    else:
        raise ConfigError("--schema is required for a dataset file")
    bought = load_purchase_set(args.purchased, space)
    ds = None
    if args.knowledge == "dist":
        ds = _dataset(args)
    rows = evaluate_attack(bought, ds, _pvalue_config(args, "monte-carlo"))
    fh = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(space.names) + ["f_P", "f_D_PI", "p_value", "confidence"])
        for r in rows:
            w.writerow([r["cell"][n] for n in space.names] + [
                "" if r[k] is None else repr(r[k]) for k in ("f_P", "f_D_PI", "p_value", "confidence")])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_synth(args) -> int:
    space = load_schema(args.schema) if args.schema else adult_space()
    params = SyntheticParams(args.freq_mean, args.freq_std, args.cost_mean, args.cost_std,
                             args.cost_floor, args.seed)
    ds = generate_synthetic(space, params)
    write_dataset(ds, args.out)
    if args.schema_out:
        save_schema(space, args.schema_out)
    print(json.dumps({"cells": ds.space.size, "records": ds.total_count, "out": str(args.out)}))
    return 0


def cmd_project(args) -> int:
    ds = _dataset(args)
    ti = _true_intent(args, ds)
    attack = _attack(args.attack)
    cfg = ExpansionConfig(args.lam, args.alpha, attack)
    pi = load_intent(args.published, ds.space) if args.published else expand(ds, ti, cfg).published_intent
    dims = args.drop or list(ds.space.names)
    rows = [harness.project_dimension(ds, ti, pi, d, cfg) for d in dims]
    harness.write_rows(rows, args.out)
    return 0


def cmd_sweep(args) -> int:
    ds = _dataset(args)
    ti = _true_intent(args, ds)
    base = ExpansionConfig(args.lam, args.alpha, _attack(args.attack))
    points = harness.sweep(args.param, _parse_grid(args.grid), ds, ti, base, args.dim)
    harness.write_rows(points, args.out, list(harness.SweepPoint.__dataclass_fields__))
    return 0


def cmd_reproduce(args) -> int:
    out = _out_dir(args.out)
    table = args.table
    if table in (1, 2):
        rows = harness.table_expansion("adult" if table == 1 else "synthetic", args.synth_seed, args.lam)
    elif table == 3:
        settings = [tuple((s.split(":")[0], int(s.split(":")[1]))) for s in args.settings.split(",")]
        for key in settings:
            if key not in harness.PAPER_Q:
                raise ConfigError(f"unknown setting {key[0]}:{key[1]}")
        q = None
        published = None
        if args.q is not None or args.published is not None:
            if len(settings) != 1:
                raise ConfigError("--q and --published overrides need exactly one --settings entry")
            if args.q is not None:
                q = {settings[0]: args.q}
            if args.published is not None:
                ds = harness.resolve_dataset(settings[0][0], None, args.synth_seed)
                published = {settings[0]: load_intent(args.published, ds.space)}
        rows = harness.table_allocation(settings, args.repeats, args.Z, args.seed, args.synth_seed, q, published)
    else:
        res = harness.table_projection(args.lam)
        harness.write_rows(res, out / "table4.csv")
        print((out / "table4.csv").read_text(encoding="utf-8"), end="")
        return 0
    path = out / f"table{table}.csv"
    harness.write_report(rows, path)
    print(harness.format_report(rows))
    return 0


# --- parser -------------------------------------------------------------------

def _add_data(p):
    p.add_argument("--dataset", default="adult", help="adult, synth, or a CSV of cells")
    p.add_argument("--schema", help="schema JSON (required for a CSV dataset)")
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("--intent", help="true-intent JSON; default is the case-study intent")
    p.add_argument("--ti-size", type=int, default=1, choices=(1, 2),
                   help="case-study true intent to use when --intent is absent")


def _add_expansion(p, attack="pi-uniform"):
    p.add_argument("--attack", default=attack, choices=sorted(ATTACKS))
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--alpha", type=float, default=0.5)


def _add_pvalue(p):
    p.add_argument("--L", type=int, default=100_000, help="Monte-Carlo replicates for p-values")
    p.add_argument("--pvalue-mode", choices=("monte-carlo", "exact"))
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="intentguard", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expand", help="build a published intent for a true intent")
    _add_data(p)
    _add_expansion(p)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("allocate", help="choose q records to buy inside a published intent")
    _add_data(p)
    p.add_argument("--published", help="published-intent JSON; default expands the true intent")
    p.add_argument("--pi-attack", default="em-f", choices=sorted(ATTACKS))
    p.add_argument("--alpha", type=float, default=0.5, help="alpha for the derived published intent")
    p.add_argument("--method", default="mc", choices=METHODS)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--Z", type=int, default=100_000)
    p.add_argument("--epsilon", type=float, default=0.001)
    p.add_argument("--T", type=int, default=50)
    p.add_argument("--R", type=int, default=10)
    p.add_argument("--W", type=int, default=30)
    p.add_argument("--sampling", default="density", choices=("density", "uniform"))
    p.add_argument("--max-iterations", type=int, help="MCMC proposal cap (default 100*q)")
    _add_pvalue(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("attack", help="attacker-side evaluation of a purchase set")
    p.add_argument("--purchased", required=True)
    p.add_argument("--knowledge", default="dist", choices=("none", "dist"))
    p.add_argument("--dataset", default="adult")
    p.add_argument("--schema")
    p.add_argument("--synth-seed", type=int, default=0)
    _add_pvalue(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schema", help="schema JSON; default is the Adult space")
    p.add_argument("--freq-mean", type=float, default=1000.0)
    p.add_argument("--freq-std", type=float, default=300.0)
    p.add_argument("--cost-mean", type=float, default=20.0)
    p.add_argument("--cost-std", type=float, default=5.0)
    p.add_argument("--cost-floor", type=float, default=1.0)
    p.add_argument("--schema-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("project", help="drop dimensions and re-check the published intent")
    _add_data(p)
    _add_expansion(p)
    p.add_argument("--published", help="published-intent JSON; default expands the true intent")
    p.add_argument("--drop", action="append", help="dimension to remove (repeatable; default all)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("sweep", help="expansion over a parameter grid")
    _add_data(p)
    _add_expansion(p)
    p.add_argument("--param", required=True, choices=("lambda", "alpha", "ti-size"))
    p.add_argument("--grid", required=True, help="comma list or start:stop:step")
    p.add_argument("--dim", help="dimension grown by a ti-size sweep")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reproduce", help="regenerate one of the result tables")
    p.add_argument("--table", type=int, required=True, choices=(1, 2, 3, 4))
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("--settings", default="adult:1,adult:2,synthetic:1,synthetic:2",
                   help="table 3 settings as dataset:ti-size")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--Z", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q", type=int, help="override q (single setting only)")
    p.add_argument("--published", help="override the published intent (single setting only)")
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IntentGuardError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
