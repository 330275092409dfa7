"""Tabular dataset container and the deterministic preprocessing behind the
EDA and feature-engineering agents.

A :class:`Table` stores one numpy array per column: ``float64`` with ``NaN``
for missing numeric cells, ``object`` with ``None`` for missing text cells.
Tables are never mutated; every operation returns a new table.
"""

from __future__ import annotations

import csv
import math
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    EmptyFile,
    FileMissing,
    KeyMissing,
    MinorityTooSmall,
    RaggedRow,
    SingleClass,
    TooFewCompleteRows,
    UnknownStatusSymbol,
    UnknownTarget,
)
from .rng import substream

FLAG_CARDINALITY = 10


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _as_column(values) -> np.ndarray:
    """Coerce a sequence to a numeric (float64/NaN) or text (object/None) column."""
    if isinstance(values, np.ndarray):
        if values.dtype.kind in "biuf":
            return _readonly(values.astype(np.float64, copy=True))
        values = list(values)
    numeric = True
    for v in values:
        if v is None or (isinstance(v, float) and math.isnan(v)):
            continue
        if isinstance(v, (bool, int, float, np.integer, np.floating)):
            continue
        numeric = False
        break
    if numeric:
        out = np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)
    else:
        out = np.empty(len(values), dtype=object)
        for i, v in enumerate(values):
            if v is None or (isinstance(v, float) and math.isnan(v)):
                out[i] = None
            elif isinstance(v, (float, np.floating)):
                out[i] = _format_number(float(v))
            else:
                out[i] = str(v)
    return _readonly(out)


def is_missing(column: np.ndarray) -> np.ndarray:
    if column.dtype == object:
        return np.array([v is None for v in column], dtype=bool)
    return np.isnan(column)


@dataclass(frozen=True, eq=False)
class Table:
    column_names: tuple[str, ...]
    data: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if len(set(self.column_names)) != len(self.column_names):
            raise ValueError("column names must be unique")
        lengths = {len(self.data[c]) for c in self.column_names}
        if len(lengths) > 1:
            raise ValueError("columns have different lengths")

    @classmethod
    def from_columns(cls, columns: dict) -> "Table":
        names = tuple(columns)
        return cls(names, {name: _as_column(columns[name]) for name in names})

    @classmethod
    def from_rows(cls, column_names: Sequence[str], rows: Iterable[Sequence]) -> "Table":
        rows = [tuple(r) for r in rows]
        for i, r in enumerate(rows):
            if len(r) != len(column_names):
                raise ValueError(f"row {i} has {len(r)} values, expected {len(column_names)}")
        cols = {name: [r[j] for r in rows] for j, name in enumerate(column_names)}
        return cls.from_columns(cols)

    @property
    def n_rows(self) -> int:
        return len(self.data[self.column_names[0]]) if self.column_names else 0

    @property
    def n_cols(self) -> int:
        return len(self.column_names)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    def __contains__(self, name: str) -> bool:
        return name in self.data

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[name]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def is_numeric(self, name: str) -> bool:
        return self.data[name].dtype != object

    def numeric_columns(self) -> list[str]:
        return [c for c in self.column_names if self.is_numeric(c)]

    def rows(self) -> Iterator[tuple]:
        cols = [self.data[c] for c in self.column_names]
        for i in range(self.n_rows):
            yield tuple(_cell(col[i]) for col in cols)

    def select(self, names: Sequence[str]) -> "Table":
        return Table(tuple(names), {n: self.column(n) for n in names})

    def drop(self, names: Iterable[str]) -> "Table":
        names = set(names)
        missing = names - set(self.column_names)
        if missing:
            raise KeyError(f"cannot drop unknown columns {sorted(missing)}")
        return self.select([c for c in self.column_names if c not in names])

    def take(self, index) -> "Table":
        index = np.asarray(index, dtype=np.intp)
        return Table(self.column_names, {c: _readonly(self.data[c][index]) for c in self.column_names})

    def with_column(self, name: str, values) -> "Table":
        col = _as_column(values)
        if len(col) != self.n_rows:
            raise ValueError("column length does not match table")
        names = self.column_names if name in self.data else self.column_names + (name,)
        data = dict(self.data)
        data[name] = col
        return Table(names, data)

    def rename(self, mapping: dict) -> "Table":
        names = tuple(mapping.get(c, c) for c in self.column_names)
        return Table(names, {mapping.get(c, c): self.data[c] for c in self.column_names})

    def concat(self, other: "Table") -> "Table":
        if other.column_names != self.column_names:
            raise ValueError("cannot concatenate tables with different columns")
        data = {}
        for c in self.column_names:
            a, b = self.data[c], other.data[c]
            if a.dtype != b.dtype:
                a, b = a.astype(object), b.astype(object)
            data[c] = _readonly(np.concatenate([a, b]))
        return Table(self.column_names, data)

    def to_matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = list(self.column_names if names is None else names)
        for n in names:
            if not self.is_numeric(n):
                raise ValueError(f"column {n!r} is not numeric")
        if not names:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self.data[n] for n in names]).astype(np.float64)

    def equals(self, other: "Table") -> bool:
        """Bitwise equality, treating missing cells as equal to each other."""
        if self.column_names != other.column_names or self.n_rows != other.n_rows:
            return False
        return all(columns_equal(self.data[c], other.data[c]) for c in self.column_names)


def columns_equal(a: np.ndarray, b: np.ndarray) -> bool:
    if a.dtype != b.dtype or len(a) != len(b):
        return False
    if a.dtype == object:
        return all(x == y for x, y in zip(a, b))
    na, nb = np.isnan(a), np.isnan(b)
    if not np.array_equal(na, nb):
        return False
    return bool(np.array_equal(a[~na].view(np.uint64), b[~nb].view(np.uint64)))


def _cell(v):
    if v is None:
        return None
    if isinstance(v, (float, np.floating)):
        return None if math.isnan(v) else float(v)
    return v


def _format_number(v: float) -> str:
    if math.isnan(v):
        return ""
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


# --- CSV -------------------------------------------------------------------


def load_csv(path) -> Table:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileMissing(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path} is empty") from None
        width = len(header)
        raw: list[list[str]] = []
        for row in reader:
            if not row:
                continue
            if len(row) != width:
                raise RaggedRow(reader.line_num, width, len(row))
            raw.append(row)
    columns = {}
    for j, name in enumerate(header):
        columns[name] = _parse_column([r[j] for r in raw])
    return Table(tuple(header), columns)


def _parse_column(cells: list[str]) -> np.ndarray:
    empty = np.array([c == "" for c in cells], dtype=bool)
    if cells and not empty.all():
        filled = ["nan" if e else c for c, e in zip(cells, empty)]
        try:
            values = np.array(filled, dtype=np.str_).astype(np.float64)
        except ValueError:
            values = None
        if values is not None and np.isfinite(values[~empty]).all():
            return _readonly(values)
    elif cells:
        return _readonly(np.full(len(cells), np.nan))
    out = np.empty(len(cells), dtype=object)
    for i, (c, e) in enumerate(zip(cells, empty)):
        out[i] = None if e else c
    return _readonly(out)


def write_csv(table: Table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.column_names)
        cols = []
        for c in table.column_names:
            col = table.data[c]
            if col.dtype == object:
                cols.append(["" if v is None else v for v in col])
            else:
                cols.append([_format_number(float(v)) for v in col])
        writer.writerows(zip(*cols))


# --- schema ----------------------------------------------------------------


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str  # numeric | categorical | binary-flag | target
    missing_fraction: float
    cardinality: int
    mean: float | None = None
    std: float | None = None
    min: float | None = None
    max: float | None = None
    skewness: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(**d)


def skewness(values: np.ndarray) -> float:
    """Fisher-Pearson coefficient g1 = m3 / m2**1.5; zero for constant samples."""
    x = np.asarray(values, dtype=np.float64)
    if len(x) == 0:
        return 0.0
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 <= 1e-300 * max(1.0, float(np.max(np.abs(x))) ** 2) or m2 == 0.0:
        return 0.0
    return float(np.mean(d * d * d) / m2**1.5)


def _cardinality(col: np.ndarray) -> int:
    present = col[~is_missing(col)]
    return len(set(present.tolist()))


def infer_schema(table: Table, target_name: str) -> list[ColumnSchema]:
    if target_name not in table:
        raise UnknownTarget(f"target column {target_name!r} not in table")
    n = table.n_rows
    out = []
    for name in table.column_names:
        col = table.column(name)
        miss = is_missing(col)
        frac = float(miss.sum() / n) if n else 0.0
        card = _cardinality(col)
        if name == target_name:
            out.append(ColumnSchema(name, "target", frac, card))
            continue
        if col.dtype == object:
            out.append(ColumnSchema(name, "categorical", frac, card))
            continue
        present = col[~miss]
        if len(present) and np.all(present == np.round(present)) and card <= FLAG_CARDINALITY:
            out.append(ColumnSchema(name, "binary-flag", frac, card))
            continue
        if len(present) == 0:
            out.append(ColumnSchema(name, "numeric", frac, 0))
            continue
        std = float(np.std(present, ddof=1)) if len(present) > 1 else 0.0
        out.append(
            ColumnSchema(
                name,
                "numeric",
                frac,
                card,
                mean=float(np.mean(present)),
                std=std,
                min=float(np.min(present)),
                max=float(np.max(present)),
                skewness=skewness(present),
            )
        )
    return out


def columns_of_kind(schema: Sequence[ColumnSchema], *kinds: str) -> list[str]:
    return [c.name for c in schema if c.kind in kinds]


# --- splitting -------------------------------------------------------------


def train_test_split(table: Table, ratio: float = 0.8, seed: int = 0) -> tuple[Table, Table]:
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    n = table.n_rows
    perm = substream(seed, "split").permutation(n)
    n_train = int(math.floor(ratio * n + 1e-9))
    return table.take(perm[:n_train]), table.take(perm[n_train:])


# --- label encoding --------------------------------------------------------


@dataclass(frozen=True)
class EncoderState:
    mappings: dict  # column -> {category: code}
    unseen_policy: str = "bucket"

    def cardinality(self, column: str) -> int:
        return len(self.mappings[column])

    def to_dict(self) -> dict:
        return {"mappings": self.mappings, "unseen_policy": self.unseen_policy}


def fit_label_encoders(train: Table, schema: Sequence[ColumnSchema]) -> EncoderState:
    mappings = {}
    for name in columns_of_kind(schema, "categorical"):
        if name not in train:
            continue
        col = train.column(name)
        if col.dtype != object:
            raise ValueError(f"column {name!r} is already numeric; fit encoders on raw data")
        codes: dict[str, int] = {}
        for v in col:
            if v is not None and v not in codes:
                codes[v] = len(codes)
        mappings[name] = codes
    return EncoderState(mappings)


def apply_label_encoders(state: EncoderState, table: Table) -> Table:
    out = table
    for name, codes in state.mappings.items():
        if name not in table:
            continue
        col = table.column(name)
        if col.dtype != object:
            raise ValueError(f"column {name!r} is already encoded")
        unseen = float(len(codes))
        encoded = np.array(
            [np.nan if v is None else float(codes.get(v, unseen)) for v in col], dtype=np.float64
        )
        out = out.with_column(name, encoded)
    return out


# --- KNN imputation --------------------------------------------------------


@dataclass(frozen=True)
class ImputerState:
    k: int
    columns: tuple[str, ...]
    reference: np.ndarray  # complete train rows, raw units
    center: np.ndarray
    scale: np.ndarray
    fallback: np.ndarray  # column means of the reference rows
    modes: dict  # column -> train mode, for categorical-like columns


def _mode(col: np.ndarray):
    counts: dict = {}
    for v in col[~is_missing(col)].tolist():
        counts[v] = counts.get(v, 0) + 1
    if not counts:
        return None
    best = max(counts.values())
    return next(v for v, c in counts.items() if c == best)


def fit_knn_imputer(train: Table, k: int = 5, categorical: Sequence[str] = (),
                    exclude: Sequence[str] = ()) -> ImputerState:
    if k < 1:
        raise ValueError("k must be at least 1")
    skip = set(categorical) | set(exclude)
    cols = tuple(c for c in train.column_names if train.is_numeric(c) and c not in skip)
    X = train.to_matrix(cols)
    complete = ~np.isnan(X).any(axis=1) if cols else np.ones(train.n_rows, dtype=bool)
    ref = X[complete]
    if len(ref):
        center = ref.mean(axis=0)
        scale = ref.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        center = np.zeros(len(cols))
        scale = np.ones(len(cols))
    modes = {}
    for c in train.column_names:
        if c in exclude:
            continue
        if c in categorical or not train.is_numeric(c):
            modes[c] = _mode(train.column(c))
    return ImputerState(k, cols, ref, center, scale, center.copy(), modes)


def apply_knn_imputer(state: ImputerState, table: Table) -> Table:
    out = table
    cols = [c for c in state.columns if c in table]
    if cols:
        X = table.to_matrix(cols)
        col_idx = [state.columns.index(c) for c in cols]
        miss = np.isnan(X)
        rows = np.flatnonzero(miss.any(axis=1))
        if len(rows):
            if len(state.reference) < state.k:
                raise TooFewCompleteRows(
                    f"need {state.k} complete reference rows, found {len(state.reference)}"
                )
            ref = state.reference[:, col_idx]
            zref = (ref - state.center[col_idx]) / state.scale[col_idx]
            filled = X.copy()
            for r in rows:
                obs = np.flatnonzero(~miss[r])
                if len(obs) == 0:
                    filled[r, miss[r]] = state.fallback[col_idx][miss[r]]
                    continue
                zq = (X[r] - state.center[col_idx]) / state.scale[col_idx]
                d2 = np.zeros(len(zref))
                for j in obs:
                    diff = zref[:, j] - zq[j]
                    d2 += diff * diff
                nearest = _k_smallest_stable(d2, state.k)
                for j in np.flatnonzero(miss[r]):
                    vals = ref[nearest, j]
                    filled[r, j] = vals.sum() / state.k
            for j, c in enumerate(cols):
                if miss[:, j].any():
                    out = out.with_column(c, filled[:, j])
    for c, mode in state.modes.items():
        if c not in table or mode is None:
            continue
        col = table.column(c)
        m = is_missing(col)
        if m.any():
            new = col.copy()
            new[m] = mode
            out = out.with_column(c, new)
    return out


def _k_smallest_stable(d: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest values, ties broken by lower index."""
    if k >= len(d):
        return np.argsort(d, kind="stable")[:k]
    kth = np.partition(d, k - 1)[k - 1]
    cand = np.flatnonzero(d <= kth)
    order = np.argsort(d[cand], kind="stable")
    return cand[order[:k]]


def knn_impute(train: Table, table: Table, k: int = 5, categorical: Sequence[str] = (),
               exclude: Sequence[str] = ()) -> Table:
    """Fill missing cells of ``table`` from the k nearest complete rows of ``train``.

    Numeric cells get the neighbour mean, with distances taken over the
    standardised numeric columns the query row has observed. Categorical and
    text cells get the train mode. Columns in ``exclude`` (the target) are
    neither used for distances nor filled.
    """
    return apply_knn_imputer(fit_knn_imputer(train, k, categorical, exclude), table)


# --- resampling ------------------------------------------------------------


def _class_split(table: Table, target: str):
    if target not in table:
        raise UnknownTarget(f"target column {target!r} not in table")
    y = table.column(target)
    classes, counts = np.unique(y[~is_missing(y)], return_counts=True)
    return y, classes, counts


def smote(table: Table, target: str, k: int = 5, seed: int = 0) -> Table:
    """Oversample the minority class with interpolated synthetic rows until balanced."""
    y, classes, counts = _class_split(table, target)
    if len(classes) != 2:
        raise SingleClass("SMOTE needs exactly two classes")
    if counts[0] == counts[1]:
        return table
    minority = classes[int(np.argmin(counts))]
    n_min, n_maj = int(counts.min()), int(counts.max())
    if n_min < 2:
        raise MinorityTooSmall(f"minority class has {n_min} row(s); need at least 2")
    features = [c for c in table.column_names if c != target]
    for c in features:
        if not table.is_numeric(c):
            raise ValueError(f"SMOTE requires numeric features; {c!r} is text")
    X = table.to_matrix(features)
    if np.isnan(X).any():
        raise ValueError("SMOTE requires complete rows")
    min_idx = np.flatnonzero(y == minority)
    Xm = X[min_idx]
    k_eff = min(k, n_min - 1)
    neighbors = _minority_neighbors(Xm, k_eff)
    rng = substream(seed, "smote")
    n_new = n_maj - n_min
    base = rng.integers(0, n_min, size=n_new)
    pick = rng.integers(0, k_eff, size=n_new)
    lam = rng.random(n_new)
    nn = neighbors[base, pick]
    synth = Xm[base] + lam[:, None] * (Xm[nn] - Xm[base])
    new_cols = {}
    for j, c in enumerate(features):
        new_cols[c] = synth[:, j]
    new_cols[target] = np.full(n_new, minority, dtype=np.float64) if table.is_numeric(target) \
        else np.array([minority] * n_new, dtype=object)
    extra = Table(table.column_names, {c: _readonly(np.asarray(new_cols[c])) for c in table.column_names})
    return table.concat(extra)


def _minority_neighbors(Xm: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    n = len(Xm)
    sq = np.einsum("ij,ij->i", Xm, Xm)
    out = np.empty((n, k), dtype=np.intp)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        d = sq[start:stop, None] - 2.0 * Xm[start:stop] @ Xm.T + sq[None, :]
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.argpartition(d, k - 1, axis=1)[:, :k] if k < n - 1 else np.argsort(d, axis=1)[:, :k]
        rows = np.arange(stop - start)[:, None]
        order = np.lexsort((part, d[rows, part]), axis=1)
        out[start:stop] = part[rows, order]
    return out


def random_downsample(table: Table, target: str, seed: int = 0) -> Table:
    y, classes, counts = _class_split(table, target)
    if len(classes) < 2:
        raise SingleClass("downsampling needs two classes")
    n_min = int(counts.min())
    keep = []
    rng = substream(seed, "downsample")
    for cls, cnt in zip(classes, counts):
        idx = np.flatnonzero(y == cls)
        if cnt > n_min:
            idx = np.sort(rng.choice(idx, size=n_min, replace=False))
        keep.append(idx)
    return table.take(np.sort(np.concatenate(keep)))


def class_proportions(table: Table, target: str) -> dict:
    y, classes, counts = _class_split(table, target)
    total = counts.sum()
    out = {}
    for cls, cnt in zip(classes.tolist(), counts.tolist()):
        key = int(cls) if isinstance(cls, float) and cls.is_integer() else cls
        out[key] = cnt / total
    return out


# --- joins -----------------------------------------------------------------


def _key_values(table: Table, key: str) -> list:
    if key not in table:
        raise KeyMissing(f"key column {key!r} missing")
    return [_cell(v) for v in table.column(key)]


def merge_on_key(left: Table, right: Table, key: str) -> Table:
    """Inner join; output rows follow left order, then right order within a key."""
    lkeys = _key_values(left, key)
    rkeys = _key_values(right, key)
    index: dict = {}
    for j, kv in enumerate(rkeys):
        if kv is not None:
            index.setdefault(kv, []).append(j)
    li, ri = [], []
    for i, kv in enumerate(lkeys):
        for j in index.get(kv, ()):
            li.append(i)
            ri.append(j)
    lpart = left.take(li)
    data = dict(lpart.data)
    names = list(lpart.column_names)
    rpart = right.take(ri)
    for c in right.column_names:
        if c == key:
            continue
        name = c if c not in data else f"{c}_right"
        data[name] = rpart.data[c]
        names.append(name)
    return Table(tuple(names), data)


def dedupe(table: Table) -> Table:
    seen = set()
    keep = []
    for i, row in enumerate(table.rows()):
        if row not in seen:
            seen.add(row)
            keep.append(i)
    if len(keep) == table.n_rows:
        return table
    return table.take(keep)


def group_aggregate(table: Table, key: str, aggregations: dict) -> Table:
    """One row per key (first-appearance order) with numeric min/max aggregates."""
    keys = _key_values(table, key)
    groups: dict = {}
    for i, kv in enumerate(keys):
        groups.setdefault(kv, []).append(i)
    cols = {key: list(groups)}
    for col, how in aggregations.items():
        values = table.column(col)
        fn = {"min": np.nanmin, "max": np.nanmax}[how]
        cols[col] = [float(fn(values[idx])) for idx in groups.values()]
    return Table.from_columns(cols)


STATUS_NON_DEFAULT = {"0", "1", "C", "X"}
STATUS_DEFAULT = {"2", "3", "4", "5"}


def map_target_status(table: Table, column: str = "STATUS", target_name: str | None = None) -> Table:
    """Collapse the monthly delinquency status to a binary default flag."""
    if column not in table:
        raise KeyMissing(f"status column {column!r} missing")
    mapped = []
    for v in table.column(column):
        sym = _format_number(float(v)) if isinstance(v, (float, np.floating)) else v
        if sym in STATUS_NON_DEFAULT:
            mapped.append(0.0)
        elif sym in STATUS_DEFAULT:
            mapped.append(1.0)
        else:
            raise UnknownStatusSymbol(f"unknown STATUS symbol {v!r}")
    out = table.with_column(column, np.array(mapped))
    if target_name and target_name != column:
        out = out.rename({column: target_name})
    return out
