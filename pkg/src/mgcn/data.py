"""Categorical datasets with explicit missing cells.

Cells are stored as integer level codes with ``-1`` marking a missing cell.
A :class:`Dataset` never changes after construction; operations return new
datasets.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (DataError, MissingColumn, NoCohortColumn, RaggedRow,
                     UnknownLevel)

MISSING = -1
DEFAULT_MISSING_TOKENS = ("", "NA")
WEIGHT_COLUMN = "_weight"


@dataclass(frozen=True)
class Variable:
    name: str
    levels: tuple[str, ...]
    missing: tuple[str, ...] = DEFAULT_MISSING_TOKENS

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "missing", tuple(self.missing))
        if not self.levels:
            raise DataError(f"{self.name}: empty level list")
        if len(set(self.levels)) != len(self.levels):
            raise DataError(f"{self.name}: duplicate levels")
        clash = set(self.levels) & set(self.missing)
        if clash:
            raise DataError(f"{self.name}: levels {sorted(clash)} are also missing tokens")

    @property
    def card(self) -> int:
        return len(self.levels)

    def code(self, level: str) -> int:
        try:
            return self.levels.index(level)
        except ValueError:
            raise DataError(f"{self.name}: unknown level {level!r}") from None


@dataclass(frozen=True)
class Schema:
    variables: tuple[Variable, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = self.names
        if len(set(names)) != len(names):
            raise DataError("duplicate variable names in schema")

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def __contains__(self, name) -> bool:
        return any(v.name == name for v in self.variables)

    def __getitem__(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise MissingColumn(name)

    def levels(self) -> dict[str, tuple[str, ...]]:
        return {v.name: v.levels for v in self.variables}


_SCHEMA_LINE = re.compile(r"^(?P<name>[^:\s]+)\s*:\s*(?P<levels>.*?)(?:\s+missing=(?P<miss>\S*))?$")


def parse_schema(text: str) -> Schema:
    variables = []
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SCHEMA_LINE.match(line)
        if not m:
            raise DataError(f"schema line {lineno}: expected 'name: l1,l2,... [missing=t1|t2]'")
        levels = [lv.strip() for lv in m["levels"].split(",")]
        miss = DEFAULT_MISSING_TOKENS if m["miss"] is None else tuple(m["miss"].split("|"))
        variables.append(Variable(m["name"], tuple(levels), miss))
    return Schema(tuple(variables))


def format_schema(schema: Schema) -> str:
    lines = []
    for v in schema.variables:
        line = f"{v.name}: {','.join(v.levels)}"
        if v.missing != DEFAULT_MISSING_TOKENS:
            line += " missing=" + "|".join(v.missing)
        lines.append(line)
    return "\n".join(lines) + "\n"


def read_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read())


def write_schema(path, schema: Schema) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_schema(schema))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented categorical table.

    ``codes`` has shape ``(n_rows, n_columns)`` in schema order; ``row_ids``
    tracks the originating row so splits can be checked as partitions.
    """

    schema: Schema
    codes: np.ndarray
    weights: np.ndarray = None
    cohort: str | None = None
    row_ids: np.ndarray = None
    _col: dict = field(default=None, repr=False)

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int64, copy=True)
        if codes.ndim != 2:
            codes = codes.reshape(-1, len(self.schema.variables))
        if codes.shape[1] != len(self.schema.variables):
            raise DataError("code matrix does not match schema width")
        for j, var in enumerate(self.schema.variables):
            col = codes[:, j]
            if ((col < MISSING) | (col >= var.card)).any():
                raise DataError(f"{var.name}: code out of range")
        n = codes.shape[0]
        weights = np.ones(n) if self.weights is None else np.array(self.weights, dtype=float)
        if weights.shape != (n,) or not np.isfinite(weights).all() or (weights < 0).any():
            raise DataError("weights must be finite, non-negative, one per row")
        row_ids = np.arange(n) if self.row_ids is None else np.array(self.row_ids, dtype=np.int64)
        if self.cohort is not None and self.cohort not in self.schema:
            raise NoCohortColumn(f"cohort column {self.cohort!r} not in schema")
        for arr in (codes, weights, row_ids):
            arr.flags.writeable = False
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "_col", {name: j for j, name in enumerate(self.schema.names)})

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_rows(cls, schema: Schema, rows, weights=None, cohort=None) -> "Dataset":
        """Rows are sequences (schema order) or dicts of level labels; ``None``
        marks a missing cell."""
        codes = np.full((len(rows), len(schema.variables)), MISSING, dtype=np.int64)
        for i, row in enumerate(rows):
            if isinstance(row, dict):
                row = [row.get(v.name) for v in schema.variables]
            for j, (var, cell) in enumerate(zip(schema.variables, row)):
                if cell is not None:
                    codes[i, j] = var.code(cell)
        return cls(schema, codes, weights, cohort)

    # -- accessors ------------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self.codes.shape[0]

    def __len__(self) -> int:
        return self.n_rows

    @property
    def columns(self) -> list[str]:
        return self.schema.names

    def col(self, name: str) -> int:
        try:
            return self._col[name]
        except KeyError:
            raise MissingColumn(name) from None

    def column(self, name: str) -> np.ndarray:
        return self.codes[:, self.col(name)]

    def observed(self, name: str) -> np.ndarray:
        return self.column(name) != MISSING

    def labels(self, name: str) -> list[str | None]:
        levels = self.schema[name].levels
        return [None if c == MISSING else levels[c] for c in self.column(name)]

    def is_complete(self, names=None) -> bool:
        cols = [self.col(n) for n in (names if names is not None else self.columns)]
        return bool((self.codes[:, cols] != MISSING).all())

    def equals(self, other: "Dataset") -> bool:
        return (
            self.schema == other.schema
            and self.cohort == other.cohort
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.weights, other.weights)
        )

    # -- derived datasets -----------------------------------------------------

    def take(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.schema, self.codes[index], self.weights[index],
                       self.cohort, self.row_ids[index])

    def select(self, names) -> "Dataset":
        cols = [self.col(n) for n in names]
        schema = Schema(tuple(self.schema[n] for n in names))
        cohort = self.cohort if self.cohort in names else None
        return Dataset(schema, self.codes[:, cols], self.weights, cohort, self.row_ids)

    def with_codes(self, codes) -> "Dataset":
        return Dataset(self.schema, codes, self.weights, self.cohort, self.row_ids)

    def with_weights(self, weights) -> "Dataset":
        return Dataset(self.schema, self.codes, weights, self.cohort, self.row_ids)

    def with_column(self, var: Variable, codes) -> "Dataset":
        """Append ``var`` or replace the column of the same name."""
        codes = np.asarray(codes, dtype=np.int64)
        if var.name in self._col:
            j = self._col[var.name]
            variables = list(self.schema.variables)
            variables[j] = var
            mat = self.codes.copy()
            mat[:, j] = codes
        else:
            variables = list(self.schema.variables) + [var]
            mat = np.column_stack([self.codes, codes]) if self.n_rows else \
                np.empty((0, len(variables)), dtype=np.int64)
        return Dataset(Schema(tuple(variables)), mat, self.weights, self.cohort, self.row_ids)


# -- CSV ---------------------------------------------------------------------

def load_csv(path, schema: Schema, cohort: str | None = None) -> Dataset:
    """Parse a CSV file against ``schema``.  Columns may appear in any order;
    an optional ``_weight`` column carries row weights."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header required") from None
        rows = list(reader)
    position = {name: j for j, name in enumerate(header)}
    for name in schema.names:
        if name not in position:
            raise MissingColumn(name)
    extra = [h for h in header if h not in schema and h != WEIGHT_COLUMN]
    if extra:
        raise DataError(f"columns not in schema: {', '.join(extra)}")

    width = len(header)
    codes = np.full((len(rows), len(schema.variables)), MISSING, dtype=np.int64)
    lookup = [
        (j, position[v.name], {lv: k for k, lv in enumerate(v.levels)}, set(v.missing))
        for j, v in enumerate(schema.variables)
    ]
    for i, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRow(i + 1)
        for j, src, codebook, missing in lookup:
            token = row[src]
            if token in codebook:
                codes[i, j] = codebook[token]
            elif token not in missing:
                raise UnknownLevel(i + 1, schema.variables[j].name, token)
    weights = None
    if WEIGHT_COLUMN in position:
        try:
            weights = [float(row[position[WEIGHT_COLUMN]]) for row in rows]
        except ValueError as exc:
            raise DataError(f"bad weight: {exc}") from None
    return Dataset(schema, codes, weights, cohort)


def write_csv(path, d: Dataset) -> None:
    with_weights = not np.all(d.weights == 1.0)
    header = d.columns + ([WEIGHT_COLUMN] if with_weights else [])
    tokens = []
    for var in d.schema.variables:
        if var.missing:
            tokens.append(var.missing[0])
        else:
            tokens.append(None)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(d.n_rows):
            out = []
            for var, token, code in zip(d.schema.variables, tokens, d.codes[i]):
                if code == MISSING:
                    if token is None:
                        raise DataError(f"{var.name}: missing cell but no missing token")
                    out.append(token)
                else:
                    out.append(var.levels[code])
            if with_weights:
                out.append(repr(float(d.weights[i])))
            writer.writerow(out)


# -- indicators and splits ---------------------------------------------------

def indicator_variable(name: str) -> Variable:
    return Variable(name, ("0", "1"))


def derive_indicators(d: Dataset, g) -> Dataset:
    """Add a fully observed ``R_X`` column (0 = observed, 1 = missing) for
    every partially observed ``X`` of ``g``."""
    out = d
    for x, r in g.indicators().items():
        out = out.with_column(indicator_variable(r), (d.column(x) == MISSING).astype(np.int64))
    return out


def split_train_test(d: Dataset, train_frac_per_cohort, seed: int):
    """Per cohort level, ``floor(frac * n_level)`` shuffled rows go to train.

    Both halves keep the original row order.
    """
    if d.cohort is None:
        raise NoCohortColumn("dataset has no designated cohort column")
    var = d.schema[d.cohort]
    col = d.column(d.cohort)
    if (col == MISSING).any():
        raise DataError(f"cohort column {d.cohort!r} has missing cells")
    fractions = dict(train_frac_per_cohort)
    rng = np.random.default_rng(seed)
    train = []
    for code, level in enumerate(var.levels):
        rows = np.flatnonzero(col == code)
        if len(rows) == 0:
            continue
        if level not in fractions:
            raise DataError(f"no training fraction for cohort {level!r}")
        frac = float(fractions[level])
        if not 0.0 <= frac <= 1.0:
            raise DataError(f"fraction for {level!r} outside [0, 1]")
        k = math.floor(frac * len(rows))
        train.append(rng.permutation(rows)[:k])
    train = np.sort(np.concatenate(train)) if train else np.empty(0, dtype=np.int64)
    mask = np.zeros(d.n_rows, dtype=bool)
    mask[train] = True
    return d.take(np.flatnonzero(mask)), d.take(np.flatnonzero(~mask))
