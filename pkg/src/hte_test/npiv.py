"""Tikhonov-regularised nonparametric IV estimation at the sample points."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from . import _accel
from .errors import ConfigError, CrossValidationError, DegeneracyError, NumericalError
from .kernels import _scalar_columns

DENSITY_FLOOR = 1e-300
SOLVE_RTOL = 1e-8
GRID_SIZE = 40
GRID_RANGE = (1e-6, 1e1)


@dataclass(frozen=True)
class CvResult:
    lambda_star: float
    objective_curve: list = field(default_factory=list)
    refined: bool = False


@dataclass(frozen=True, eq=False)
class NpivFit:
    m_z: np.ndarray
    m_w: np.ndarray
    r_hat: np.ndarray
    lam: float
    phi_hat: np.ndarray
    residuals: np.ndarray
    cv: CvResult = None


def _weights_at(density, points, name):
    v = np.asarray(density(points), dtype=float)
    if not np.all(np.isfinite(v)) or v.min() <= DENSITY_FLOOR:
        raise DegeneracyError(f"reference density {name} underflows at a data point")
    return v


def build_matrices(d, kern, bw, pi, tau):
    """Kernel matrices M_Z, M_W and the vector r_hat.

    ``M_Z[i, j] = K((Z_i - Z_j) / h_z) / (pi(Z_i) n h_z)`` and likewise for
    ``M_W`` with tau and h_w. ``r_hat[i] = sum_j Y_j K((W_j - W_i) / h_w) /
    (tau(W_i) n h_w)``, which equals ``M_W @ y`` because K is symmetric.
    """
    z, w = _scalar_columns(d)
    n = d.n
    piz = _weights_at(pi, z, "pi")
    tauw = _weights_at(tau, w, "tau")
    m_z = _accel.kernel_matrix(z, bw.h_z, kern.code)
    m_z /= (piz * (n * bw.h_z))[:, None]
    m_w = _accel.kernel_matrix(w, bw.h_w, kern.code)
    m_w /= (tauw * (n * bw.h_w))[:, None]
    r_hat = m_w @ d.y
    return m_z, m_w, r_hat


def tikhonov_solve(m_z, m_w, r_hat, lam, *, product=None):
    """Solve ``(lam I + M_Z M_W) phi = M_Z r_hat`` by LU factorisation."""
    if not (lam > 0 and math.isfinite(lam)):
        raise ConfigError(f"lambda must be positive and finite, got {lam}")
    mm = m_z @ m_w if product is None else product
    n = mm.shape[0]
    a = mm + lam * np.eye(n)
    rhs = m_z @ r_hat
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            phi = scipy.linalg.lu_solve(scipy.linalg.lu_factor(a, check_finite=False), rhs)
    except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError) as exc:
        cond = np.linalg.cond(a)
        raise NumericalError(f"Tikhonov solve failed at lambda={lam:.3g} (cond {cond:.3g}): {exc}", lam, cond) from None
    resid = np.linalg.norm(a @ phi - rhs)
    scale = np.linalg.norm(rhs)
    if not np.all(np.isfinite(phi)) or resid > SOLVE_RTOL * max(scale, np.finfo(float).tiny):
        if scale == 0.0 and np.all(phi == 0):
            return phi
        cond = np.linalg.cond(a)
        raise NumericalError(
            f"Tikhonov solve inaccurate at lambda={lam:.3g} (cond {cond:.3g}, residual {resid:.3g})", lam, cond
        )
    return phi


def spectral_norm_estimate(a, iters=100, rtol=1e-6):
    """Largest singular value of ``a`` by power iteration on a'a."""
    v = np.ones(a.shape[1]) / math.sqrt(a.shape[1])
    s = 0.0
    for _ in range(iters):
        u = a @ v
        s_new = np.linalg.norm(u)
        if s_new == 0.0:
            return 0.0
        v = a.T @ (u / s_new)
        v /= np.linalg.norm(v)
        if abs(s_new - s) <= rtol * s_new:
            return float(s_new)
        s = s_new
    return float(s)


def default_lambda_grid(m_z, m_w, product=None):
    mm = m_z @ m_w if product is None else product
    scale = spectral_norm_estimate(mm)
    if not scale > 0:
        raise DegeneracyError("M_Z M_W is zero; cannot scale the lambda grid")
    return np.geomspace(*GRID_RANGE, GRID_SIZE) * scale


class _LooCriterion:
    """Leave-one-out criterion sum_i (v_i(lam) - r_hat_i)^2.

    ``v(lam) = (M_W - diag M_W)(lam I + M_Z M_W)^{-1}(M_Z - diag M_Z) r_hat``.
    M_Z M_W is reduced once to Hessenberg form Q H Q', after which each
    lambda costs O(n^2).
    """

    def __init__(self, m_z, m_w, r_hat, product=None):
        mm = m_z @ m_w if product is None else product
        h, q = scipy.linalg.hessenberg(mm, calc_q=True)
        a_off = m_w - np.diag(np.diag(m_w))
        b_off = m_z @ r_hat - np.diag(m_z) * r_hat
        self.h = np.ascontiguousarray(h)
        self.p = a_off @ q
        self.c = q.T @ b_off
        self.r_hat = r_hat

    def __call__(self, lam):
        y = _accel.hessenberg_shift_solve(self.h, lam, self.c)
        v = self.p @ y
        return float(np.sum((v - self.r_hat) ** 2))


def cross_validate_lambda(d, kern, bw, pi, tau, grid=None, *, refine=True, matrices=None, product=None):
    """Leave-one-out choice of the Tikhonov parameter.

    Scans ``grid`` (default: 40 log-spaced points on [1e-6, 10] times an
    estimate of ||M_Z M_W||), then refines by golden-section search in log
    lambda between the neighbours of the grid minimiser.
    """
    m_z, m_w, r_hat = matrices if matrices is not None else build_matrices(d, kern, bw, pi, tau)
    if product is None:
        product = m_z @ m_w
    if grid is None:
        grid = default_lambda_grid(m_z, m_w, product)
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or not np.all(grid > 0):
        raise ConfigError("lambda grid must be non-empty with positive entries")
    crit = _LooCriterion(m_z, m_w, r_hat, product)
    values = np.array([crit(lam) for lam in grid])
    curve = [(float(lam), float(v)) for lam, v in zip(grid, values)]
    finite = np.isfinite(values)
    if not finite.any():
        raise CrossValidationError("cross-validation criterion is non-finite on the whole grid")
    order = np.argsort(grid)
    g, v = grid[order], np.where(finite, values, np.inf)[order]
    i = int(np.argmin(v))
    best, best_val = float(g[i]), float(v[i])
    if not refine or i == 0 or i == g.size - 1:
        return CvResult(best, curve, False)

    def objective(log_lam):
        val = crit(math.exp(log_lam))
        return val if math.isfinite(val) else math.inf

    lo, hi = math.log(g[i - 1]), math.log(g[i + 1])
    try:
        res = minimize_scalar(
            objective, bracket=(lo, math.log(best), hi), method="golden", options={"xtol": 1e-3}
        )
        lam_ref = math.exp(float(res.x))
        ok = math.isfinite(res.fun) and g[i - 1] <= lam_ref <= g[i + 1]
    except (ValueError, RuntimeError, FloatingPointError):
        ok = False
    if not ok:
        warnings.warn("lambda refinement failed; using the grid minimiser", RuntimeWarning, stacklevel=2)
        return CvResult(best, curve, False)
    if res.fun > best_val:
        return CvResult(best, curve, False)
    return CvResult(lam_ref, curve, True)


def npiv_fit(d, kern, bw, pi, tau, lam):
    """Estimate phi at Z_1..Z_n; ``lam`` is a positive float or ``"cv"``."""
    m_z, m_w, r_hat = build_matrices(d, kern, bw, pi, tau)
    product = m_z @ m_w
    cv = None
    if isinstance(lam, str):
        if lam != "cv":
            raise ConfigError(f"lambda must be a positive number or 'cv', got {lam!r}")
        cv = cross_validate_lambda(d, kern, bw, pi, tau, matrices=(m_z, m_w, r_hat), product=product)
        lam = cv.lambda_star
    lam = float(lam)
    phi = tikhonov_solve(m_z, m_w, r_hat, lam, product=product)
    return NpivFit(m_z, m_w, r_hat, lam, phi, d.y - phi, cv)
