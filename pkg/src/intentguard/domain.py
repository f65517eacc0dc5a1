"""Data space, intents, aggregated datasets and their ingestion.

A dataset is held as two dense arrays over the full categorical product
space: a record count and a per-record cost for every cell.  All attacker
models and protection algorithms only ever look at those two arrays.
"""

from __future__ import annotations

import csv
import gzip
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import EmptyDatasetError, InvalidIntentError, InvalidOperationError, SchemaError

Cell = tuple[int, ...]

MISSING_TOKENS = frozenset({"", "?"})
COUNT_COLUMN = "__count"
COST_COLUMN = "__cost"


@dataclass(frozen=True)
class Dimension:
    name: str
    values: tuple[str, ...]
    ordinal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise SchemaError(f"dimension {self.name!r} has no values")
        if len(set(self.values)) != len(self.values):
            raise SchemaError(f"dimension {self.name!r} has duplicate values")

    def __len__(self) -> int:
        return len(self.values)

    def index(self, value: str) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise SchemaError(f"value {value!r} is not in dimension {self.name!r}") from None


@dataclass(frozen=True)
class DataSpace:
    dimensions: tuple[Dimension, ...]
    _positions: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        if not self.dimensions:
            raise SchemaError("a data space needs at least one dimension")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise SchemaError("dimension names must be unique")
        object.__setattr__(self, "_positions", {n: i for i, n in enumerate(names)})

    @property
    def n(self) -> int:
        return len(self.dimensions)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(d) for d in self.dimensions)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dimensions]

    def dim_index(self, name: str) -> int:
        try:
            return self._positions[name]
        except KeyError:
            raise SchemaError(f"unknown dimension {name!r}") from None

    def cells(self) -> Iterator[Cell]:
        return itertools.product(*(range(k) for k in self.shape))

    def flat(self, cell: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(cell), self.shape))

    def unflat(self, index: int) -> Cell:
        return tuple(int(i) for i in np.unravel_index(index, self.shape))

    def labels(self, cell: Sequence[int]) -> tuple[str, ...]:
        return tuple(d.values[i] for d, i in zip(self.dimensions, cell))

    def cell_from_labels(self, labels: Mapping[str, str] | Sequence[str]) -> Cell:
        if isinstance(labels, Mapping):
            return tuple(d.index(labels[d.name]) for d in self.dimensions)
        return tuple(d.index(v) for d, v in zip(self.dimensions, labels))

    def drop(self, dim: int) -> "DataSpace":
        if self.n < 2:
            raise InvalidOperationError("cannot drop the only dimension of a space")
        return DataSpace(self.dimensions[:dim] + self.dimensions[dim + 1:])

    def to_json(self) -> dict:
        return {
            "dimensions": [
                {"name": d.name, "values": list(d.values), "ordinal": d.ordinal}
                for d in self.dimensions
            ]
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "DataSpace":
        try:
            dims = [
                Dimension(d["name"], tuple(d["values"]), bool(d.get("ordinal", False)))
                for d in obj["dimensions"]
            ]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from None
        return cls(tuple(dims))


def load_schema(path: str | Path) -> DataSpace:
    with open(path, encoding="utf-8") as fh:
        return DataSpace.from_json(json.load(fh))


def save_schema(space: DataSpace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space.to_json(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class Intent:
    """A conjunctive selection: one sorted tuple of value indices per dimension."""

    selections: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        sel = tuple(tuple(sorted(set(int(v) for v in s))) for s in self.selections)
        object.__setattr__(self, "selections", sel)

    @classmethod
    def full(cls, space: DataSpace) -> "Intent":
        return cls(tuple(tuple(range(k)) for k in space.shape))

    @classmethod
    def singleton(cls, cell: Sequence[int]) -> "Intent":
        return cls(tuple((int(v),) for v in cell))

    @classmethod
    def from_labels(cls, space: DataSpace, selections: Mapping[str, object]) -> "Intent":
        """Build from ``{dim: [values] | "ALL"}``; dimensions left out mean ALL."""
        unknown = set(selections) - set(space.names)
        if unknown:
            raise SchemaError(f"unknown dimension(s) in intent: {sorted(unknown)}")
        out = []
        for d in space.dimensions:
            chosen = selections.get(d.name, "ALL")
            if chosen == "ALL":
                out.append(tuple(range(len(d))))
            else:
                if isinstance(chosen, str):
                    chosen = [chosen]
                out.append(tuple(d.index(v) for v in chosen))
        intent = cls(tuple(out))
        intent.validate(space)
        return intent

    def validate(self, space: DataSpace) -> None:
        if len(self.selections) != space.n:
            raise InvalidIntentError(
                f"intent has {len(self.selections)} selections for a {space.n}-dimensional space"
            )
        for d, s in zip(space.dimensions, self.selections):
            if not s:
                raise InvalidIntentError(f"empty selection on dimension {d.name!r}")
            if s[0] < 0 or s[-1] >= len(d):
                raise InvalidIntentError(f"selection out of range on dimension {d.name!r}")

    @property
    def size(self) -> int:
        return math.prod(len(s) for s in self.selections)

    def contains(self, cell: Sequence[int]) -> bool:
        return all(v in s for v, s in zip(cell, self.selections))

    def issubset(self, other: "Intent") -> bool:
        return len(self.selections) == len(other.selections) and all(
            set(a) <= set(b) for a, b in zip(self.selections, other.selections)
        )

    def add(self, dim: int, value: int) -> "Intent":
        sel = list(self.selections)
        sel[dim] = sel[dim] + (value,)
        return Intent(tuple(sel))

    def replace(self, dim: int, values: Iterable[int]) -> "Intent":
        sel = list(self.selections)
        sel[dim] = tuple(values)
        return Intent(tuple(sel))

    def drop(self, dim: int) -> "Intent":
        return Intent(self.selections[:dim] + self.selections[dim + 1:])

    def index(self):
        """Open-mesh index selecting the intent's block out of a space-shaped array."""
        return np.ix_(*self.selections)

    def cells(self) -> Iterator[Cell]:
        return itertools.product(*self.selections)

    def mask(self, space: DataSpace) -> np.ndarray:
        m = np.zeros(space.shape, dtype=bool)
        m[self.index()] = True
        return m

    def to_json(self, space: DataSpace) -> dict:
        sel = {}
        for d, s in zip(space.dimensions, self.selections):
            sel[d.name] = "ALL" if len(s) == len(d) else [d.values[i] for i in s]
        return {"selections": sel}


def load_intent(path: str | Path, space: DataSpace) -> Intent:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if "selections" not in obj:
        raise SchemaError(f"{path}: intent file needs a 'selections' object")
    return Intent.from_labels(space, obj["selections"])


def save_intent(intent: Intent, space: DataSpace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(intent.to_json(space), fh, indent=2)
        fh.write("\n")


def cartesian_size(space: DataSpace, intent: Intent) -> int:
    intent.validate(space)
    return intent.size


@dataclass(frozen=True, eq=False)
class Dataset:
    """Per-cell record counts and per-record costs over a data space."""

    space: DataSpace
    freq: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        freq = np.array(self.freq, dtype=np.int64).reshape(self.space.shape)
        cost = np.array(self.cost, dtype=np.float64).reshape(self.space.shape)
        if (freq < 0).any():
            raise SchemaError("record counts must be non-negative")
        if not (cost > 0).all() or not np.isfinite(cost).all():
            raise SchemaError("costs must be positive and finite")
        if freq.sum() == 0:
            raise EmptyDatasetError("dataset has no records")
        freq.setflags(write=False)
        cost.setflags(write=False)
        object.__setattr__(self, "freq", freq)
        object.__setattr__(self, "cost", cost)

    @property
    def total_count(self) -> int:
        return int(self.freq.sum())

    @property
    def density(self) -> np.ndarray:
        """f_D: each cell's share of all records."""
        return self.freq / self.total_count

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.space == other.space
            and np.array_equal(self.freq, other.freq)
            and np.array_equal(self.cost, other.cost)
        )

    __hash__ = None

    def drop_dimension(self, dim: int) -> "Dataset":
        """Marginalize one dimension away.

        Counts are summed.  The marginal cost is the count-weighted mean cost,
        so count * cost sums are preserved; a marginal cell with no records
        gets the plain mean.
        """
        space = self.space.drop(dim)
        freq = self.freq.sum(axis=dim)
        spend = (self.freq * self.cost).sum(axis=dim)
        plain = self.cost.mean(axis=dim)
        with np.errstate(invalid="ignore", divide="ignore"):
            cost = np.where(freq > 0, spend / np.maximum(freq, 1), plain)
        return Dataset(space, freq, cost)


class RecordTotals(NamedTuple):
    count: int
    total_cost: float


def records_in_intent(dataset: Dataset, intent: Intent) -> RecordTotals:
    idx = intent.index()
    f = dataset.freq[idx]
    return RecordTotals(int(f.sum()), float((f * dataset.cost[idx]).sum()))


def _open_text(path: str | Path):
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, encoding="utf-8", newline="")


def load_dataset(
    csv_path: str | Path,
    schema: DataSpace,
    count_column: str = COUNT_COLUMN,
    cost_column: str = COST_COLUMN,
) -> Dataset:
    """Read a raw or aggregated CSV into a Dataset.

    Raw files have one row per record.  Aggregated files carry a count column
    (and optionally a cost column); every row then describes one cell.  Rows
    with a missing value in any dimension column are dropped.  Cells never
    given a cost get cost 1.
    """
    freq = np.zeros(schema.shape, dtype=np.int64)
    cost = np.ones(schema.shape, dtype=np.float64)
    with _open_text(csv_path) as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise SchemaError(f"{csv_path}: CSV header lacks dimension column(s) {missing}")
        has_count = count_column in header
        has_cost = cost_column in header
        dims = schema.dimensions
        for lineno, row in enumerate(reader, start=2):
            raw = [(row[d.name] or "").strip() for d in dims]
            if any(v in MISSING_TOKENS for v in raw):
                continue
            cell = []
            for d, v in zip(dims, raw):
                try:
                    cell.append(d.values.index(v))
                except ValueError:
                    raise SchemaError(
                        f"{csv_path}: row {lineno}, column {d.name!r}: value {v!r} not in schema"
                    ) from None
            cell = tuple(cell)
            if has_count:
                token = (row[count_column] or "").strip()
                if token in MISSING_TOKENS:
                    continue
                try:
                    freq[cell] += int(token)
                except ValueError:
                    raise SchemaError(
                        f"{csv_path}: row {lineno}, column {count_column!r}: bad count {token!r}"
                    ) from None
            else:
                freq[cell] += 1
            if has_cost:
                token = (row[cost_column] or "").strip()
                if token not in MISSING_TOKENS:
                    cost[cell] = float(token)
    if freq.sum() == 0:
        raise EmptyDatasetError(f"{csv_path}: no usable records")
    return Dataset(schema, freq, cost)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the aggregated form: cells with records or a non-default cost, in space order."""
    space = dataset.space
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(space.names + [COUNT_COLUMN, COST_COLUMN])
        for cell in space.cells():
            f = int(dataset.freq[cell])
            c = float(dataset.cost[cell])
            if f == 0 and c == 1.0:
                continue
            w.writerow(list(space.labels(cell)) + [f, repr(c)])


# --- Adult census -----------------------------------------------------------

ADULT_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)


def adult_space() -> DataSpace:
    return DataSpace((
        Dimension("age", ("childhood", "young adult", "working adult", "retirement"), ordinal=True),
        Dimension("ethnicity", ("White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black")),
        Dimension("gender", ("Female", "Male")),
        Dimension("hours-per-week", ("part-time", "full-time", "overtime"), ordinal=True),
        Dimension("income", ("<=50K", ">50K")),
    ))


def age_bin(age: float) -> str:
    if age <= 17:
        return "childhood"
    if age <= 24:
        return "young adult"
    if age <= 61:
        return "working adult"
    return "retirement"


def hours_bin(hours: float) -> str:
    if hours <= 34:
        return "part-time"
    if hours <= 40:
        return "full-time"
    return "overtime"


@dataclass
class DropReport:
    kept: int = 0
    missing: int = 0
    malformed: int = 0
    malformed_rows: list[int] = field(default_factory=list)


def _adult_rows(path: str | Path) -> Iterator[tuple[int, dict[str, str]]]:
    with _open_text(path) as fh:
        lines = fh.read().splitlines()
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("|")]
    if not body:
        return
    first = next(csv.reader([body[0][1]], skipinitialspace=True))
    if first and first[0].strip() == "age":
        header = [h.strip() for h in first]
        body = body[1:]
    else:
        header = list(ADULT_COLUMNS)
    for lineno, ln in body:
        fields = [f.strip() for f in next(csv.reader([ln], skipinitialspace=True))]
        yield lineno, dict(zip(header, fields))


def read_adult(raw_csv: str | Path) -> tuple[Dataset, DropReport]:
    """Bin the raw Adult census file into the five-dimension space.

    Accepts the headerless UCI layout (``adult.data`` / ``adult.test``,
    optionally gzipped) or a CSV with a header row.  A row is dropped when any
    of its fields is missing; rows with unparsable age or hours, or values
    outside the schema, are dropped as malformed.
    """
    space = adult_space()
    freq = np.zeros(space.shape, dtype=np.int64)
    report = DropReport()
    needed = ("age", "race", "sex", "hours-per-week", "income")
    for lineno, row in _adult_rows(raw_csv):
        if any(k not in row for k in needed):
            report.malformed += 1
            report.malformed_rows.append(lineno)
            continue
        if any(v in MISSING_TOKENS for v in row.values()):
            report.missing += 1
            continue
        try:
            age = float(row["age"])
            hours = float(row["hours-per-week"])
            if not (math.isfinite(age) and math.isfinite(hours)) or age < 0 or hours < 0:
                raise ValueError
            cell = space.cell_from_labels(
                (age_bin(age), row["race"], row["sex"], hours_bin(hours), row["income"].rstrip("."))
            )
        except (ValueError, SchemaError):
            report.malformed += 1
            report.malformed_rows.append(lineno)
            continue
        freq[cell] += 1
        report.kept += 1
    if report.kept == 0:
        raise EmptyDatasetError(f"{raw_csv}: no usable Adult records")
    return Dataset(space, freq, np.ones(space.shape)), report


def preprocess_adult(raw_csv: str | Path) -> Dataset:
    return read_adult(raw_csv)[0]


def bundled_adult_path() -> Path:
    return Path(str(resources.files("intentguard") / "data" / "adult.data.gz"))


@lru_cache(maxsize=1)
def load_adult() -> Dataset:
    """The bundled UCI Adult training file, binned (30,162 records)."""
    return preprocess_adult(bundled_adult_path())


def case_study_intent(space: DataSpace, size: int) -> Intent:
    """The working-adult / female / full-time / >50K buyer used in the experiments."""
    if size not in (1, 2):
        raise InvalidOperationError("case-study true intents exist for sizes 1 and 2")
    ethnicity = ["Black"] if size == 1 else ["Black", "Asian-Pac-Islander"]
    return Intent.from_labels(space, {
        "age": ["working adult"],
        "ethnicity": ethnicity,
        "gender": ["Female"],
        "hours-per-week": ["full-time"],
        "income": [">50K"],
    })


# --- synthetic data ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticParams:
    freq_mean: float = 1000.0
    freq_std: float = 300.0
    cost_mean: float = 20.0
    cost_std: float = 5.0
    cost_floor: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.freq_std < 0 or self.cost_std < 0 or self.cost_floor < 0:
            raise SchemaError("standard deviations and the cost floor must be non-negative")


def generate_synthetic(space: DataSpace, params: SyntheticParams = SyntheticParams()) -> Dataset:
    """Independent Gaussian count and cost per cell; deterministic in ``params.seed``."""
    rng = np.random.default_rng(params.seed)
    freq = np.rint(np.maximum(0.0, rng.normal(params.freq_mean, params.freq_std, space.shape)))
    cost = np.maximum(params.cost_floor, rng.normal(params.cost_mean, params.cost_std, space.shape))
    # a zero floor could still let a draw land at exactly 0; costs must stay positive
    cost = np.where(cost > 0, cost, np.finfo(float).tiny)
    if freq.sum() == 0:
        raise EmptyDatasetError("synthetic generator produced no records")
    return Dataset(space, freq.astype(np.int64), cost)
