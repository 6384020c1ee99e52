"""Independence pre-tests between the covariate X and the tested instrument."""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import DataError, DegeneracyError

TIE_WARN_FRACTION = 0.10


@dataclass(frozen=True)
class IndependenceReport:
    method: str
    statistic: float
    p_value: float
    note: str = ""

    def to_dict(self):
        return {"method": self.method, "statistic": self.statistic, "p_value": self.p_value, "note": self.note}


def chi_squared_independence(x, w):
    """Pearson chi-squared test on the contingency table of two discrete vectors.

    No continuity correction. A note (and a warning) is attached when some
    expected cell count is below 5.
    """
    x = np.asarray(x).ravel()
    w = np.asarray(w).ravel()
    if x.shape != w.shape:
        raise DataError("x and w must have the same length")
    xl, xi = np.unique(x, return_inverse=True)
    wl, wi = np.unique(w, return_inverse=True)
    if xl.size < 2 or wl.size < 2:
        raise DegeneracyError("chi-squared test needs both variables to take at least two values")
    table = np.zeros((xl.size, wl.size))
    np.add.at(table, (xi, wi), 1)
    expected = table.sum(1, keepdims=True) * table.sum(0, keepdims=True) / table.sum()
    stat = float(((table - expected) ** 2 / expected).sum())
    dof = (xl.size - 1) * (wl.size - 1)
    p = float(stats.chi2.sf(stat, dof))
    note = f"{xl.size}x{wl.size} table, {dof} degrees of freedom"
    if expected.min() < 5:
        note += "; some expected counts are below 5"
        warnings.warn("chi-squared approximation may be poor: expected count below 5", RuntimeWarning, stacklevel=2)
    return IndependenceReport("chi_squared", stat, min(max(p, 0.0), 1.0), note)


def ks_two_sample(x, w):
    """Two-sample Kolmogorov-Smirnov test of W | X=0 against W | X=1.

    The p-value is the asymptotic Kolmogorov tail at ``sqrt(m n / (m + n)) D``.
    """
    x = np.asarray(x, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if x.shape != w.shape:
        raise DataError("x and w must have the same length")
    levels = np.unique(x)
    if not np.all(np.isin(levels, (0.0, 1.0))):
        raise DataError("x must be binary (0/1)")
    a, b = np.sort(w[x == 0]), np.sort(w[x == 1])
    if a.size == 0 or b.size == 0:
        raise DataError("both groups x=0 and x=1 must be non-empty")
    grid = np.unique(w)
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    p = float(special.kolmogorov(en * d))
    tie_fraction = 1.0 - grid.size / w.size
    note = f"groups of size {a.size} and {b.size}"
    if tie_fraction > TIE_WARN_FRACTION:
        note += f"; {tie_fraction:.0%} of w values are ties"
        warnings.warn("many ties in w: the asymptotic KS p-value assumes continuity", RuntimeWarning, stacklevel=2)
    return IndependenceReport("ks_two_sample", d, min(max(p, 0.0), 1.0), note)
