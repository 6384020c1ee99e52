"""Sample representation and CSV ingestion."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ParseError, SchemaError

ROLES = ("outcome", "treatment", "instrument", "covariate")


def _frozen(a, ndim):
    a = np.array(a, dtype=float, copy=True)
    if ndim == 2 and a.ndim == 1:
        a = a[:, None]
    if a.ndim != ndim:
        raise DataError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An i.i.d. sample (Y, Z, W, X).

    ``z`` is n x p, ``w`` is n x q, ``y`` and ``x`` have length n. ``k`` is the
    zero-based column of ``w`` whose deviation from its mean enters the test
    statistic. Arrays are copied and made read-only on construction.
    """

    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    x: np.ndarray
    k: int = 0

    def __post_init__(self):
        y = _frozen(self.y, 1)
        z = _frozen(self.z, 2)
        w = _frozen(self.w, 2)
        x = _frozen(self.x, 1)
        n = y.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if not (z.shape[0] == w.shape[0] == x.shape[0] == n):
            raise DataError(
                f"row counts differ: y={n}, z={z.shape[0]}, w={w.shape[0]}, x={x.shape[0]}"
            )
        for name, a in (("y", y), ("z", z), ("w", w), ("x", x)):
            if not np.isfinite(a).all():
                raise DataError(f"{name} contains non-finite values")
        k = int(self.k)
        if not 0 <= k < w.shape[1]:
            raise ConfigError(f"k={k} is not a column of w (q={w.shape[1]})")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "k", k)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.z.shape[1]

    @property
    def q(self):
        return self.w.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.k == other.k
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.x, other.x)
        )

    __hash__ = None


def resample(d, indices):
    """Pairwise resample: rows of (y, z, w, x) taken jointly at ``indices``.

    Indices are zero-based positions in ``[0, n)``.
    """
    idx = np.asarray(indices)
    if idx.ndim != 1 or idx.shape[0] != d.n:
        raise IndexError(f"need {d.n} indices, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= d.n):
        raise IndexError("resample index out of range")
    return Dataset(d.y[idx], d.z[idx], d.w[idx], d.x[idx], d.k)


@dataclass(frozen=True)
class ColumnSpec:
    """Maps one CSV column (by header name or zero-based position) to a role.

    ``intercept`` on a treatment or instrument entry adds a leading column of
    ones to that matrix.
    """

    role: str
    column: object
    intercept: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown column role {self.role!r}")


def validate_specs(specs):
    counts = {r: sum(s.role == r for s in specs) for r in ROLES}
    if counts["outcome"] != 1:
        raise ConfigError(f"exactly one outcome column required, got {counts['outcome']}")
    if counts["covariate"] != 1:
        raise ConfigError(f"exactly one covariate column required, got {counts['covariate']}")
    if counts["treatment"] < 1:
        raise ConfigError("at least one treatment column required")
    if counts["instrument"] < 1:
        raise ConfigError("at least one instrument column required")


def _parse_cell(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a number",
            row=row,
            column=column,
        ) from None
    if not math.isfinite(value):
        raise ParseError(
            f"row {row}, column {column!r}: non-finite value {text!r}", row=row, column=column
        )
    return value


def _read_table(path):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path} has no data rows")
    return header, rows


def _locate(header, column):
    if isinstance(column, int):
        if not 0 <= column < len(header):
            raise SchemaError(f"column index {column} out of range")
        return column
    if column not in header:
        raise SchemaError(f"missing column {column!r} (have {', '.join(header)})")
    return header.index(column)


def _parse_column(header, rows, j):
    col = np.empty(len(rows))
    for i, r in enumerate(rows):
        # i + 2: one-based file line, counting the header
        if j >= len(r):
            raise ParseError(f"row {i + 2}: missing field for column {header[j]!r}", i + 2, header[j])
        col[i] = _parse_cell(r[j].strip(), i + 2, header[j])
    return col


def read_columns(path, columns):
    """Selected columns (names or zero-based positions) as float arrays, in order."""
    header, rows = _read_table(path)
    return [_parse_column(header, rows, _locate(header, c)) for c in columns]


def load_csv(path, specs, k):
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    ``k`` selects the tested instrument: a column name among the instrument
    columns, or a 1-based position in the final instrument matrix (after any
    intercept column).
    """
    specs = list(specs)
    validate_specs(specs)
    header, rows = _read_table(path)
    located = [(s, _locate(header, s.column)) for s in specs]
    n = len(rows)
    values = {id(s): _parse_column(header, rows, j) for s, j in located}

    def block(role):
        chosen = [s for s, _ in located if s.role == role]
        cols = [values[id(s)] for s in chosen]
        names = [header[j] for s, j in located if s.role == role]
        if any(s.intercept for s in chosen):
            cols.insert(0, np.ones(n))
            names.insert(0, "(intercept)")
        return np.column_stack(cols), names

    z, _ = block("treatment")
    w, w_names = block("instrument")
    (y_spec,) = [s for s in specs if s.role == "outcome"]
    (x_spec,) = [s for s in specs if s.role == "covariate"]

    if isinstance(k, str) and not k.lstrip("-").isdigit():
        if k not in w_names or k == "(intercept)":
            raise ConfigError(f"k={k!r} is not an instrument column")
        k_index = w_names.index(k)
    else:
        pos = int(k)
        if not 1 <= pos <= len(w_names):
            raise ConfigError(f"k={pos} outside instrument positions 1..{len(w_names)}")
        k_index = pos - 1
    return Dataset(values[id(y_spec)], z, w, values[id(x_spec)], k_index)
