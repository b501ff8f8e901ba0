"""CSV ingestion: response, fixed covariates and one-hot group factors.

Factor levels are ordered by first appearance in the file, so the columns of
Z and W are reproducible across runs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import HdlmmError
from .projections import MixedData

__all__ = [
    "DatasetSpec",
    "Dataset",
    "DataError",
    "ParseError",
    "MissingValueError",
    "load_dataset",
    "read_dataset",
    "write_dataset",
    "one_hot",
    "standardize_columns",
]

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


class DataError(HdlmmError, ValueError):
    """Invalid dataset contents or specification."""


class ParseError(DataError):
    def __init__(self, msg: str, line: Optional[int] = None, column: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)
        self.line = line
        self.column = column


class MissingValueError(ParseError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    csv_path: str
    response_col: str
    fixed_cols: tuple
    z_factor_col: str
    w_factor_col: Optional[str] = None
    standardize_fixed: bool = True
    id_col: Optional[str] = None

    def __post_init__(self):
        fixed = (self.fixed_cols,) if isinstance(self.fixed_cols, str) else tuple(self.fixed_cols)
        object.__setattr__(self, "fixed_cols", fixed)
        if not fixed:
            raise DataError("fixed_cols must name at least one column")
        named = [self.response_col, *fixed, self.z_factor_col]
        if self.w_factor_col is not None:
            named.append(self.w_factor_col)
        dup = {c for c in named if named.count(c) > 1}
        if dup:
            raise DataError(f"columns used more than once: {sorted(dup)}")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "DatasetSpec":
        d = dict(d)
        known = {"csv_path", "response_col", "fixed_cols", "z_factor_col", "w_factor_col", "standardize_fixed", "id_col"}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown dataset fields: {sorted(unknown)}")
        missing = {"csv_path", "response_col", "fixed_cols", "z_factor_col"} - set(d)
        if missing:
            raise DataError(f"dataset config is missing {sorted(missing)}")
        path = Path(d["csv_path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        d["csv_path"] = str(path)
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Dataset:
    data: MixedData
    z_levels: tuple
    w_levels: tuple = ()
    fixed_names: tuple = ()
    row_ids: tuple = field(default=())
    z_index: np.ndarray = None

    def z_label(self, i: int) -> str:
        return self.z_levels[int(self.z_index[i])]


def one_hot(values: Sequence[str]):
    """Indicator matrix with levels ordered by first appearance.

    Returns ``(matrix, levels, codes)``.
    """
    levels: dict = {}
    codes = np.empty(len(values), dtype=np.intp)
    for i, v in enumerate(values):
        codes[i] = levels.setdefault(v, len(levels))
    mat = np.zeros((len(values), len(levels)))
    mat[np.arange(len(values)), codes] = 1.0
    return mat, tuple(levels), codes


def standardize_columns(X, names=None) -> np.ndarray:
    """Center each column and scale it to squared norm n."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    centered = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    scale = np.max(np.abs(X), axis=0)
    bad = ~(norms > 1e-12 * np.maximum(scale, 1.0) * math.sqrt(n))
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        label = names[j] if names is not None else j
        raise DataError(f"fixed column {label!r} has zero variance and cannot be standardized")
    return centered * (math.sqrt(n) / norms)


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _parse_float(cell: str, line: int, col: str) -> float:
    if _is_missing(cell):
        raise MissingValueError("missing value (no imputation is done)", line, col)
    try:
        val = float(cell)
    except ValueError:
        raise ParseError(f"cannot parse {cell!r} as a number", line, col) from None
    if not math.isfinite(val):
        raise ParseError(f"non-finite value {cell!r}", line, col)
    return val


def read_dataset(spec: DatasetSpec) -> Dataset:
    path = Path(spec.csv_path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError("file is empty, a header row is required", 1)
        header = [h.strip() for h in header]
        col_of = {}
        for j, h in enumerate(header):
            if h in col_of:
                raise ParseError(f"duplicate header {h!r}", 1, h)
            col_of[h] = j
        wanted = [spec.response_col, *spec.fixed_cols, spec.z_factor_col]
        if spec.w_factor_col is not None:
            wanted.append(spec.w_factor_col)
        if spec.id_col is not None:
            wanted.append(spec.id_col)
        absent = [c for c in wanted if c not in col_of]
        if absent:
            raise DataError(f"{path}: columns not found in header: {absent}")

        y, X, zs, ws, ids = [], [], [], [], []
        fixed_idx = [col_of[c] for c in spec.fixed_cols]
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
            y.append(_parse_float(row[col_of[spec.response_col]], line, spec.response_col))
            X.append([_parse_float(row[j], line, c) for j, c in zip(fixed_idx, spec.fixed_cols)])
            zs.append(_factor(row, col_of, spec.z_factor_col, line))
            if spec.w_factor_col is not None:
                ws.append(_factor(row, col_of, spec.w_factor_col, line))
            ids.append(row[col_of[spec.id_col]].strip() if spec.id_col else str(len(ids)))
    if not y:
        raise DataError(f"{path}: no data rows")

    Z, z_levels, z_codes = one_hot(zs)
    if len(z_levels) < 2:
        raise DataError(f"factor {spec.z_factor_col!r} needs at least 2 levels, found {len(z_levels)}")
    if spec.w_factor_col is not None:
        W, w_levels, _ = one_hot(ws)
        if len(w_levels) < 2:
            raise DataError(f"factor {spec.w_factor_col!r} needs at least 2 levels, found {len(w_levels)}")
    else:
        W, w_levels = None, ()
    Xa = np.array(X, dtype=float).reshape(len(y), len(spec.fixed_cols))
    if spec.standardize_fixed:
        Xa = standardize_columns(Xa, spec.fixed_cols)
    data = MixedData(np.array(y, dtype=float), Xa, Z, W)
    return Dataset(
        data=data,
        z_levels=z_levels,
        w_levels=w_levels,
        fixed_names=tuple(spec.fixed_cols),
        row_ids=tuple(ids),
        z_index=z_codes,
    )


def _factor(row, col_of, name, line) -> str:
    cell = row[col_of[name]].strip()
    if _is_missing(cell):
        raise MissingValueError("missing factor level", line, name)
    return cell


def load_dataset(spec: DatasetSpec) -> MixedData:
    """Read ``spec.csv_path`` into (Y, X, Z, W)."""
    return read_dataset(spec).data


def write_dataset(path, data: MixedData, z_labels=None, w_labels=None, fixed_names=None) -> DatasetSpec:
    """Write a dataset as CSV (floats in shortest round-trip form) and return a spec that reloads it.

    Factor labels default to ``z<k>`` / ``w<k>`` from the one-hot column index.
    The returned spec does not standardize, so reloading gives the same Y and
    X bit for bit, and Z / W up to the first-appearance column order.
    """
    n, p = data.X.shape
    fixed_names = tuple(fixed_names or (f"x{j}" for j in range(p)))
    z_idx = np.argmax(data.Z, axis=1)
    z_labels = z_labels or [f"z{k}" for k in range(data.v)]
    has_w = data.r > 0
    if has_w:
        w_idx = np.argmax(data.W, axis=1)
        w_labels = w_labels or [f"w{k}" for k in range(data.r)]
    header = ["y", *fixed_names, "group", *(["nuisance"] if has_w else [])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            row = [repr(float(data.Y[i])), *(repr(float(x)) for x in data.X[i]), z_labels[z_idx[i]]]
            if has_w:
                row.append(w_labels[w_idx[i]])
            w.writerow(row)
    return DatasetSpec(
        csv_path=str(path),
        response_col="y",
        fixed_cols=fixed_names,
        z_factor_col="group",
        w_factor_col="nuisance" if has_w else None,
        standardize_fixed=False,
    )
