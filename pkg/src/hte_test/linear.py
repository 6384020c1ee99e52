"""Two-stage least squares and the linear test of homogeneous effects."""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _accel
from .bootstrap import assemble_report, bootstrap_replicates, replicate_indices
from .errors import ConfigError, RankDeficiencyError

COND_MAX = 1e12


@dataclass(frozen=True)
class LinearFit:
    beta_tsls: np.ndarray
    gamma_hat: np.ndarray
    residuals: np.ndarray


@dataclass(frozen=True)
class LinearTestConfig:
    B: int = 1000
    seed: int = 0
    pvalue_mode: str = "symmetric"

    def __post_init__(self):
        if int(self.B) < 1:
            raise ConfigError("B must be >= 1")
        if self.pvalue_mode not in ("symmetric", "equal-tailed"):
            raise ConfigError(f"unknown p-value mode {self.pvalue_mode!r}")


def _checked_solve(a, b, name):
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise RankDeficiencyError(
            f"{name} is singular or ill-conditioned (condition number {cond:.3g})",
            matrix=name,
            condition=cond,
        )
    return scipy.linalg.solve(a, b)


def tsls_fit(d):
    """TSLS coefficients, first-stage matrix and residuals.

    Raises :class:`RankDeficiencyError` naming the offending moment matrix
    when its condition number exceeds 1e12.
    """
    n = d.n
    sww = d.w.T @ d.w / n
    swz = d.w.T @ d.z / n
    swy = d.w.T @ d.y / n
    gamma = _checked_solve(sww, swz, "mean(W W')")
    amat = gamma.T @ sww @ gamma
    beta = _checked_solve(amat, gamma.T @ swy, "Gamma' mean(W W') Gamma")
    resid = d.y - d.z @ beta
    return LinearFit(beta_tsls=beta, gamma_hat=gamma, residuals=resid)


def linear_statistic(d, fit):
    """``n^{-1/2} sum_i U_i X_i (W_ki - mean(W_k))``."""
    wk = d.w[:, d.k]
    return float(np.sum(fit.residuals * d.x * (wk - wk.mean())) / math.sqrt(d.n))


def _statistic(d):
    return linear_statistic(d, tsls_fit(d))


def _batch(d):
    def fn(idx):
        return _accel.tsls_statistic_batch(d.y, d.z, d.w, d.x, d.k, idx, COND_MAX)

    return fn


def linear_test(d, cfg=None, *, threads=None):
    """Bootstrap test of E[U X (W_k - E W_k)] = 0 with TSLS residuals.

    Every replicate refits TSLS on the resample and recentres W_k at the
    resample mean.
    """
    cfg = cfg or LinearTestConfig()
    statistic = _statistic(d)
    raw = bootstrap_replicates(d, _statistic, int(cfg.B), cfg.seed, batch_fn=_batch(d), threads=threads)
    config = {
        "test": "linear",
        "B": int(cfg.B),
        "seed": int(cfg.seed),
        "pvalue_mode": cfg.pvalue_mode,
        "n": d.n,
        "p": d.p,
        "q": d.q,
        "k": d.k + 1,
    }
    return assemble_report(statistic, raw, pvalue_mode=cfg.pvalue_mode, config=config)


def linear_bootstrap_draw(d, seed, b=0):
    """A single bootstrap statistic (used by warp-speed Monte Carlo)."""
    idx = replicate_indices(seed, b, d.n)[None, :]
    return float(_batch(d)(idx)[0])


def ols_fit(y, z):
    """Least-squares coefficients of y on the columns of z."""
    coef, *_ = np.linalg.lstsq(z, y, rcond=None)
    return coef
