"""Mixed-type CSV ingestion: schema inference, typed tables, seeded splits.

Tables are stored columnar: numerical columns as float64 arrays (NaN marks an
absent cell), categorical columns as integer category indices (-1 absent).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


class UnreadableFile(OSError):
    pass


class RaggedRows(ValueError):
    def __init__(self, row_index: int):
        super().__init__(f"row {row_index} width differs from header")
        self.row_index = row_index


class LabelNotInSchema(ValueError):
    def __init__(self, column: str, label: str):
        super().__init__(f"label {label!r} not in schema for column {column!r}")
        self.column = column
        self.label = label


class SchemaInvariantError(ValueError):
    pass


class DegenerateSplit(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple = ()


@dataclass(frozen=True)
class Schema:
    columns: tuple

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names) or any(not n for n in names):
            raise SchemaInvariantError("column names must be unique and non-empty")
        for c in self.columns:
            if c.kind not in (NUMERICAL, CATEGORICAL):
                raise SchemaInvariantError(f"unknown column kind {c.kind!r}")
            if c.kind == CATEGORICAL:
                if len(c.categories) < 2:
                    raise SchemaInvariantError(
                        f"categorical column {c.name!r} needs >= 2 categories")
                if len(set(c.categories)) != len(c.categories):
                    raise SchemaInvariantError(
                        f"duplicate categories in column {c.name!r}")

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    def col_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise KeyError(name)


@dataclass
class RawTable:
    schema: Schema
    columns: list = field(repr=False)  # float64 (NaN=absent) or int64 (-1=absent)

    @property
    def n_rows(self) -> int:
        return 0 if not self.columns else len(self.columns[0])

    @property
    def n_cols(self) -> int:
        return self.schema.n_cols

    def is_absent(self, i: int, j: int) -> bool:
        col = self.columns[j]
        if self.schema.columns[j].kind == NUMERICAL:
            return bool(np.isnan(col[i]))
        return col[i] < 0

    def cell(self, i: int, j: int):
        """Cell as float, label string, or None when absent."""
        col = self.columns[j]
        spec = self.schema.columns[j]
        if spec.kind == NUMERICAL:
            v = col[i]
            return None if np.isnan(v) else float(v)
        k = col[i]
        return None if k < 0 else spec.categories[k]

    def take_rows(self, idx: np.ndarray) -> "RawTable":
        return RawTable(self.schema, [c[idx] for c in self.columns])

    def numeric_col_indices(self) -> list:
        return [j for j, c in enumerate(self.schema.columns) if c.kind == NUMERICAL]

    def categorical_col_indices(self) -> list:
        return [j for j, c in enumerate(self.schema.columns) if c.kind == CATEGORICAL]


@dataclass(frozen=True)
class SplitSpec:
    in_fraction: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.in_fraction < 1.0:
            raise ValueError("in_fraction must lie strictly between 0 and 1")


def _parse_float(text: str):
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise UnreadableFile(str(e)) from e
    if not rows:
        raise UnreadableFile(f"{path}: empty file, header required")
    return rows


def load_csv(path, schema: Schema | None = None) -> RawTable:
    """Read a header-first CSV into a typed table.

    Without a schema, a column is numerical iff it has at least one non-empty
    cell and every non-empty cell parses as a finite float; otherwise it is
    categorical with lexicographically sorted distinct labels. Empty cells
    are absent.
    """
    rows = _read_rows(path)
    header, body = rows[0], rows[1:]
    n = len(header)
    for i, row in enumerate(body):
        if len(row) != n:
            raise RaggedRows(i)

    if schema is None:
        cols = []
        for j, name in enumerate(header):
            cells = [row[j] for row in body]
            nonempty = [c for c in cells if c != ""]
            if nonempty and all(_parse_float(c) is not None for c in nonempty):
                cols.append(Column(name, NUMERICAL))
            else:
                cols.append(Column(name, CATEGORICAL, tuple(sorted(set(nonempty)))))
        schema = Schema(tuple(cols))
    else:
        if [c.name for c in schema.columns] != header:
            raise SchemaInvariantError("header does not match schema column names")

    data = []
    for j, col in enumerate(schema.columns):
        cells = [row[j] for row in body]
        if col.kind == NUMERICAL:
            arr = np.full(len(cells), np.nan)
            for i, c in enumerate(cells):
                if c != "":
                    v = _parse_float(c)
                    if v is None:
                        raise LabelNotInSchema(col.name, c)
                    arr[i] = v
        else:
            lut = {lab: k for k, lab in enumerate(col.categories)}
            arr = np.full(len(cells), -1, dtype=np.int64)
            for i, c in enumerate(cells):
                if c != "":
                    if c not in lut:
                        raise LabelNotInSchema(col.name, c)
                    arr[i] = lut[c]
        data.append(arr)
    return RawTable(schema, data)


def write_csv(table: RawTable, path) -> None:
    """Write a table back to CSV; absent cells become empty strings."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([c.name for c in table.schema.columns])
        for i in range(table.n_rows):
            row = []
            for j in range(table.n_cols):
                v = table.cell(i, j)
                if v is None:
                    row.append("")
                elif isinstance(v, float):
                    row.append(repr(v))
                else:
                    row.append(v)
            w.writerow(row)


def split_in_out(table: RawTable, spec: SplitSpec) -> tuple:
    """Deterministic seeded shuffle split into (in-sample, out-of-sample)."""
    m = table.n_rows
    if m < 2:
        raise DegenerateSplit("need at least 2 rows to split")
    n_in = int(spec.in_fraction * m)
    if n_in == 0 or n_in == m:
        raise DegenerateSplit(f"split sizes ({n_in}, {m - n_in}) are degenerate")
    perm = np.random.default_rng(spec.seed).permutation(m)
    return table.take_rows(perm[:n_in]), table.take_rows(perm[n_in:])


# -- schema files -------------------------------------------------------------

def read_schema(path) -> Schema:
    """Schema file: `name = numerical` or `name = categorical:a|b|c` per line."""
    cols = []
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise UnreadableFile(str(e)) from e
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, kind = line.partition("=")
        name, kind = name.strip(), kind.strip()
        if kind == NUMERICAL:
            cols.append(Column(name, NUMERICAL))
        elif kind.startswith(CATEGORICAL + ":"):
            labels = kind[len(CATEGORICAL) + 1:].split("|")
            cols.append(Column(name, CATEGORICAL, tuple(labels)))
        else:
            raise SchemaInvariantError(f"cannot parse schema line {line!r}")
    return Schema(tuple(cols))


def write_schema(schema: Schema, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in schema.columns:
            if c.kind == NUMERICAL:
                f.write(f"{c.name} = {NUMERICAL}\n")
            else:
                f.write(f"{c.name} = {CATEGORICAL}:{'|'.join(c.categories)}\n")
