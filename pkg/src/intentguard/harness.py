"""Experiment runners: expansion tables, allocation tables, projection and sweeps."""

from __future__ import annotations

import csv
import logging
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

from .allocation import AllocationConfig, allocate, confidence_upper_bound, utility
from .attacks import EM_FC, PI_UNIFORM, AttackerKnowledge, attacker_bounds
from .domain import (
    Dataset,
    Intent,
    SyntheticParams,
    adult_space,
    case_study_intent,
    generate_synthetic,
    load_adult,
    load_dataset,
    load_schema,
    records_in_intent,
)
from .errors import ConfigError, IntentGuardError, InvalidOperationError
from .expansion import ExpansionConfig, expand

log = logging.getLogger(__name__)

# alpha per (dataset, true-intent size, attack) used for the published tables
PAPER_ALPHA = {
    ("adult", 1): {"pi-uniform": 0.5, "em-fc": 0.5, "em-f": 0.5, "em-c": 0.5},
    ("adult", 2): {"pi-uniform": 1.0, "em-fc": 0.6, "em-f": 0.6, "em-c": 0.5},
    ("synthetic", 1): {"pi-uniform": 0.8, "em-fc": 0.4, "em-f": 0.4, "em-c": 0.8},
    ("synthetic", 2): {"pi-uniform": 0.6, "em-fc": 0.5, "em-f": 0.4, "em-c": 0.7},
}
# G-MCMC stopping margin per (dataset, true-intent size)
PAPER_GMCMC_EPSILON = {("adult", 1): 0.07, ("adult", 2): 0.01, ("synthetic", 1): 0.005, ("synthetic", 2): 0.01}
PAPER_Q = {("adult", 1): 61, ("adult", 2): 120, ("synthetic", 1): 1516, ("synthetic", 2): 2979}
MCMC_EPSILON = 0.001


def resolve_dataset(source: str, schema_path: str | None = None, synth_seed: int = 0) -> Dataset:
    """``adult``, ``synthetic``/``synth`` (Adult-shaped, seeded) or a CSV path plus schema."""
    if source == "adult":
        return load_adult()
    if source in ("synthetic", "synth"):
        return generate_synthetic(adult_space(), SyntheticParams(seed=synth_seed))
    if schema_path is None:
        raise ConfigError("a dataset file needs --schema")
    return load_dataset(source, load_schema(schema_path))


@dataclass
class ReportRow:
    setting: str
    attack: str
    method: str
    conf_lb: float | None = None
    conf_ub: float | None = None
    total_cost: float | None = None
    cost_ti: float | None = None
    cost_ratio: float | None = None
    records_pi: float | None = None
    records_ti: float | None = None
    utility: float | None = None
    conf_ub_std: float | None = None
    records_ti_std: float | None = None
    utility_std: float | None = None
    runs: int = 1
    failed_runs: int = 0
    error: str = ""
    elapsed: float | None = None
    elapsed_std: float | None = None


REPORT_COLUMNS = [f.name for f in fields(ReportRow) if not f.name.startswith("elapsed")]
TIMING_COLUMNS = ["setting", "attack", "method", "elapsed", "elapsed_std"]


def _ratio(a, b):
    return a / b if b else None


@dataclass
class ExperimentConfig:
    dataset: str = "adult"
    schema: str | None = None
    synth_seed: int = 0
    true_intent: Intent | None = None
    ti_size: int = 1
    attacks: Sequence[str] = ("pi-uniform", "em-fc", "em-f", "em-c")
    lam: float = 0.3
    alpha: dict[str, float] | float = 0.5
    methods: Sequence[str] = ("mc", "mcmc", "gmcmc", "genetic")
    q: int | None = None
    published_intent: Intent | None = None
    pi_attack: str = "em-f"
    Z: int = 100_000
    epsilon: dict[str, float] = field(default_factory=dict)
    T: int = 50
    R: int = 10
    W: int = 30
    repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")

    def alpha_for(self, attack: str) -> float:
        if isinstance(self.alpha, dict):
            return self.alpha[attack]
        return float(self.alpha)

    def load(self) -> Dataset:
        return resolve_dataset(self.dataset, self.schema, self.synth_seed)

    def intent(self, dataset: Dataset) -> Intent:
        if self.true_intent is not None:
            return self.true_intent
        return case_study_intent(dataset.space, self.ti_size)

    @property
    def setting(self) -> str:
        return f"{self.dataset}, TI size {self.ti_size}" if self.true_intent is None else self.dataset


def _intent_row(setting, attack, method, dataset, ti, pi) -> ReportRow:
    b = attacker_bounds(dataset, attack, ti, pi)
    in_pi = records_in_intent(dataset, pi)
    in_ti = records_in_intent(dataset, ti)
    return ReportRow(
        setting=setting, attack=attack.name, method=method,
        conf_lb=b.lower, conf_ub=b.upper,
        total_cost=in_pi.total_cost, cost_ti=in_ti.total_cost,
        cost_ratio=_ratio(in_ti.total_cost, in_pi.total_cost),
        records_pi=in_pi.count, records_ti=in_ti.count,
        utility=_ratio(in_ti.count, in_pi.count),
    )


def run_expansion_experiment(config: ExperimentConfig, dataset: Dataset | None = None) -> list[ReportRow]:
    """A "w/o protection" and an "expansion" row per attack variant."""
    dataset = dataset or config.load()
    ti = config.intent(dataset)
    rows = []
    for name in config.attacks:
        attack = AttackerKnowledge.parse(name)
        rows.append(_intent_row(config.setting, attack, "w/o protection", dataset, ti, ti))
        t0 = time.perf_counter()
        try:
            res = expand(dataset, ti, ExpansionConfig(config.lam, config.alpha_for(name), attack))
        except IntentGuardError as exc:
            rows.append(ReportRow(config.setting, attack.name, "expansion",
                                  error=f"{type(exc).__name__}: {exc}"))
            continue
        row = _intent_row(config.setting, attack, "expansion", dataset, ti, res.published_intent)
        row.elapsed = time.perf_counter() - t0
        rows.append(row)
    return rows


def _mean_std(xs):
    if not xs:
        return None, None
    return statistics.fmean(xs), (statistics.pstdev(xs) if len(xs) > 1 else 0.0)


def allocation_published_intent(config: ExperimentConfig, dataset: Dataset, ti: Intent) -> Intent:
    if config.published_intent is not None:
        return config.published_intent
    attack = AttackerKnowledge.parse(config.pi_attack)
    return expand(dataset, ti, ExpansionConfig(config.lam, config.alpha_for(attack.name), attack)).published_intent


def run_allocation_experiment(config: ExperimentConfig, dataset: Dataset | None = None) -> list[ReportRow]:
    """Each method ``repeats`` times with seeds seed+0 .. seed+repeats-1; mean and std per column."""
    dataset = dataset or config.load()
    ti = config.intent(dataset)
    if config.q is None:
        raise ConfigError("allocation experiments need q")
    pi = allocation_published_intent(config, dataset, ti)
    rows = []
    for method in config.methods:
        eps = config.epsilon.get(method, MCMC_EPSILON)
        confs, tis, utils, times, spend, spend_ti = [], [], [], [], [], []
        failures = []
        for r in range(config.repeats):
            cfg = AllocationConfig(q=config.q, lam=config.lam, method=method, Z=config.Z, epsilon=eps,
                                   T=config.T, R=config.R, W=config.W, seed=config.seed + r)
            t0 = time.perf_counter()
            try:
                bought = allocate(pi, ti, dataset, cfg)
            except IntentGuardError as exc:
                failures.append(f"{type(exc).__name__}: {exc}")
                continue
            times.append(time.perf_counter() - t0)
            u = utility(bought, ti)
            utils.append(u)
            tis.append(u * config.q)
            confs.append(confidence_upper_bound(bought, ti, dataset))
            spend.append(float((bought.counts * dataset.cost).sum()))
            spend_ti.append(float((bought.counts * dataset.cost)[ti.index()].sum()))
        conf, conf_sd = _mean_std(confs)
        nti, nti_sd = _mean_std(tis)
        ut, ut_sd = _mean_std(utils)
        el, el_sd = _mean_std(times)
        tc, _ = _mean_std(spend)
        tct, _ = _mean_std(spend_ti)
        rows.append(ReportRow(
            setting=config.setting, attack="pri", method=method,
            conf_ub=conf, total_cost=tc, cost_ti=tct,
            cost_ratio=_ratio(tct, tc) if tc is not None else None,
            records_pi=float(config.q) if utils else None, records_ti=nti, utility=ut,
            conf_ub_std=conf_sd, records_ti_std=nti_sd, utility_std=ut_sd,
            runs=config.repeats, failed_runs=len(failures), error="; ".join(sorted(set(failures))),
            elapsed=el, elapsed_std=el_sd,
        ))
    return rows


@dataclass
class ProjectionResult:
    attack: str
    dimension: str
    proj_lb: float | None
    change_lb: float | None
    proj_ub: float
    change_ub: float
    proj_records_pi: int
    proj_records_ti: int
    proj_utility: float | None
    proj_pi_size: int
    updated_records_pi: int
    updated_utility: float | None
    updated_pi_size: int
    updated_ub: float
    reexpanded: bool
    error: str = ""


def project_dimension(dataset: Dataset, true_intent: Intent, published_intent: Intent, dim: str,
                      config: ExpansionConfig) -> ProjectionResult:
    """Remove one dimension and see what the projected published intent still protects.

    When the projected intent breaks lambda, the projected true intent is
    expanded again in the reduced space and the updated figures are reported.
    """
    space = dataset.space
    i = space.dim_index(dim)
    if space.n < 2:
        raise InvalidOperationError("cannot project away the only dimension")
    attack = config.attack
    before = attacker_bounds(dataset, attack, true_intent, published_intent)
    pd_ = dataset.drop_dimension(i)
    pti = true_intent.drop(i)
    ppi = published_intent.drop(i)
    after = attacker_bounds(pd_, attack, pti, ppi)
    rec_pi = records_in_intent(pd_, ppi).count
    rec_ti = records_in_intent(pd_, pti).count
    upd_pi, upd_ub, error = ppi, after.upper, ""
    reexpanded = after.upper > config.lam
    if reexpanded:
        try:
            res = expand(pd_, pti, config)
            upd_pi, upd_ub = res.published_intent, res.bounds.upper
        except IntentGuardError as exc:
            error = f"{type(exc).__name__}: {exc}"
    upd_records = records_in_intent(pd_, upd_pi).count
    return ProjectionResult(
        attack=attack.name, dimension=dim,
        proj_lb=after.lower,
        change_lb=None if after.lower is None else after.lower - before.lower,
        proj_ub=after.upper, change_ub=after.upper - before.upper,
        proj_records_pi=rec_pi, proj_records_ti=rec_ti,
        proj_utility=_ratio(rec_ti, rec_pi), proj_pi_size=ppi.size,
        updated_records_pi=upd_records, updated_utility=_ratio(rec_ti, upd_records),
        updated_pi_size=upd_pi.size, updated_ub=upd_ub, reexpanded=reexpanded, error=error,
    )


@dataclass
class SweepPoint:
    param: str
    value: float
    records_pi: int | None = None
    records_ti: int | None = None
    conf_lb: float | None = None
    conf_ub: float | None = None
    pi_size: int | None = None
    trace_length: int | None = None
    error: str = ""


def ti_prefix(true_intent: Intent, dim: int, k: int) -> Intent:
    """True intent whose selection on ``dim`` is the first k values in schema order."""
    return true_intent.replace(dim, range(k))


def sweep(param: str, grid: Iterable[float], dataset: Dataset, true_intent: Intent,
          base: ExpansionConfig, dim: str | None = None) -> list[SweepPoint]:
    """One expansion per grid point; a failing point records its error and the sweep goes on."""
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    if param not in ("lambda", "alpha", "ti-size"):
        raise ConfigError(f"unknown sweep parameter {param!r}")
    if param == "ti-size" and dim is None:
        raise ConfigError("a ti-size sweep needs the dimension to grow")
    out = []
    for v in grid:
        ti = true_intent
        cfg = base
        try:
            if param == "lambda":
                cfg = ExpansionConfig(float(v), base.alpha, base.attack, base.max_iterations)
            elif param == "alpha":
                cfg = ExpansionConfig(base.lam, float(v), base.attack, base.max_iterations)
            else:
                d = dataset.space.dim_index(dim)
                k = int(v)
                if not 1 <= k <= dataset.space.shape[d]:
                    raise ConfigError(f"ti-size {k} out of range for dimension {dim!r}")
                ti = ti_prefix(true_intent, d, k)
            res = expand(dataset, ti, cfg)
        except IntentGuardError as exc:
            out.append(SweepPoint(param, v, error=f"{type(exc).__name__}: {exc}"))
            continue
        out.append(SweepPoint(
            param, v,
            records_pi=records_in_intent(dataset, res.published_intent).count,
            records_ti=records_in_intent(dataset, ti).count,
            conf_lb=res.bounds.lower, conf_ub=res.bounds.upper,
            pi_size=res.published_intent.size, trace_length=len(res.trace),
        ))
    return out


# --- tables -------------------------------------------------------------------

def table_expansion(dataset_name: str, synth_seed: int = 0, lam: float = 0.3) -> list[ReportRow]:
    rows = []
    for size in (1, 2):
        cfg = ExperimentConfig(dataset=dataset_name, synth_seed=synth_seed, ti_size=size, lam=lam,
                               alpha=PAPER_ALPHA[(dataset_name, size)])
        rows.extend(run_expansion_experiment(cfg))
    return rows


def table_allocation(settings: Sequence[tuple[str, int]] = (("adult", 1), ("adult", 2)),
                     repeats: int = 10, Z: int = 100_000, seed: int = 0, synth_seed: int = 0,
                     q: dict | None = None, published: dict | None = None) -> list[ReportRow]:
    rows = []
    for key in settings:
        name, size = key
        cfg = ExperimentConfig(
            dataset=name, synth_seed=synth_seed, ti_size=size,
            alpha=PAPER_ALPHA[key], pi_attack="em-f",
            q=(q or {}).get(key, PAPER_Q[key]),
            published_intent=(published or {}).get(key),
            epsilon={"gmcmc": PAPER_GMCMC_EPSILON[key]}, Z=Z, repeats=repeats, seed=seed,
        )
        rows.extend(run_allocation_experiment(cfg))
    return rows


def table_projection(lam: float = 0.3) -> list[ProjectionResult]:
    ds = load_adult()
    ti = case_study_intent(ds.space, 2)
    out = []
    for attack in (PI_UNIFORM, EM_FC):
        cfg = ExpansionConfig(lam, PAPER_ALPHA[("adult", 2)][attack.name], attack)
        pi = expand(ds, ti, cfg).published_intent
        for dim in ds.space.names:
            out.append(project_dimension(ds, ti, pi, dim, cfg))
    return out


# --- output -------------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows: Sequence, path: str | Path | None, columns: Sequence[str] | None = None) -> None:
    """CSV with a fixed column order and full-precision floats; ``None`` writes to stdout."""
    if columns is None:
        columns = [f.name for f in fields(rows[0])] if rows else []

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            d = asdict(r)
            w.writerow([_cell(d[c]) for c in columns])

    if path is None:
        emit(sys.stdout)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        emit(fh)


def write_report(rows: Sequence[ReportRow], path: str | Path) -> Path:
    """Write the report and a sibling ``*.timing.csv``; returns the timing path.

    Wall-clock times live in their own file so the report itself is
    byte-identical across repeated runs.
    """
    path = Path(path)
    write_rows(rows, path, REPORT_COLUMNS)
    timing = path.with_suffix(".timing.csv")
    write_rows(rows, timing, TIMING_COLUMNS)
    return timing


def _pct(v):
    return "-" if v is None else f"{100 * v:.1f}%"


def _num(v):
    return "-" if v is None else f"{v:.1f}"


def format_report(rows: Sequence[ReportRow]) -> str:
    header = ["Setting", "Attack", "Method", "Conf. LB", "Conf. UB", "Total Cost", "Cost (TI)",
              "Cost Ratio", "# Rec (PI)", "# Rec (TI)", "Utility"]
    lines = [header]
    for r in rows:
        if r.error and r.utility is None:
            lines.append([r.setting, r.attack, r.method, "error: " + r.error] + [""] * 7)
            continue
        ub = _pct(r.conf_ub) + (f"±{100 * r.conf_ub_std:.1f}%" if r.conf_ub_std is not None else "")
        ut = _pct(r.utility) + (f"±{100 * r.utility_std:.1f}%" if r.utility_std is not None else "")
        lines.append([r.setting, r.attack, r.method, _pct(r.conf_lb), ub, _num(r.total_cost),
                      _num(r.cost_ti), _pct(r.cost_ratio), _num(r.records_pi), _num(r.records_ti), ut])
    widths = [max(len(str(row[i])) for row in lines) for i in range(len(header))]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in lines)
