"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version computing the same thing. The numba path is used when numba imports
and ``HTE_TEST_DISABLE_NUMBA`` is unset (or ``0``); otherwise the numpy path
runs. ``set_backend`` switches at runtime (tests and benchmarks use it).
"""

import math
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


GAUSSIAN = 0
EPANECHNIKOV = 1

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _env_backend():
    flag = os.environ.get("HTE_TEST_DISABLE_NUMBA", "").strip().lower()
    if flag not in ("", "0", "false", "no") or not NUMBA_AVAILABLE:
        return "numpy"
    return "numba"


_BACKEND = _env_backend()


def backend():
    return _BACKEND


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    previous, _BACKEND = _BACKEND, name
    return previous


# --------------------------------------------------------------------------
# kernel matrices K((a_i - a_j) / h)


@njit(cache=True, nogil=True)
def _kernel_matrix_nb(a, h, family):
    n = a.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i + 1):
            u = (a[i] - a[j]) / h
            if family == GAUSSIAN:
                v = math.exp(-0.5 * u * u) * _INV_SQRT_2PI
            elif abs(u) <= 1.0:
                v = 0.75 * (1.0 - u * u)
            else:
                v = 0.0
            out[i, j] = v
            out[j, i] = v
    return out


def kernel_values(u, family):
    u = np.asarray(u, dtype=float)
    if family == GAUSSIAN:
        return np.exp(-0.5 * u * u) * _INV_SQRT_2PI
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _kernel_matrix_np(a, h, family):
    return kernel_values((a[:, None] - a[None, :]) / h, family)


def kernel_matrix(a, h, family=GAUSSIAN):
    """Symmetric n x n matrix with entries K((a_i - a_j) / h)."""
    a = np.ascontiguousarray(a, dtype=float)
    if _BACKEND == "numba":
        return _kernel_matrix_nb(a, float(h), int(family))
    return _kernel_matrix_np(a, float(h), int(family))


# --------------------------------------------------------------------------
# TSLS statistic over a batch of resample index vectors


@njit(cache=True, nogil=True)
def _tsls_stat_batch_nb(y, z, w, x, k, idx, cond_max):
    nb, n = idx.shape
    p = z.shape[1]
    q = w.shape[1]
    out = np.empty(nb)
    for b in range(nb):
        sww = np.zeros((q, q))
        swz = np.zeros((q, p))
        swy = np.zeros(q)
        wk_sum = 0.0
        for t in range(n):
            i = idx[b, t]
            for a in range(q):
                wa = w[i, a]
                swy[a] += wa * y[i]
                for c in range(q):
                    sww[a, c] += wa * w[i, c]
                for c in range(p):
                    swz[a, c] += wa * z[i, c]
            wk_sum += w[i, k]
        sww /= n
        swz /= n
        swy /= n
        if not np.isfinite(sww).all() or np.linalg.cond(sww) > cond_max:
            out[b] = np.nan
            continue
        gamma = np.linalg.solve(sww, swz)
        amat = swz.T @ gamma
        if np.linalg.cond(amat) > cond_max:
            out[b] = np.nan
            continue
        beta = np.linalg.solve(amat, gamma.T @ swy)
        wbar = wk_sum / n
        s = 0.0
        for t in range(n):
            i = idx[b, t]
            u = y[i]
            for c in range(p):
                u -= z[i, c] * beta[c]
            s += u * x[i] * (w[i, k] - wbar)
        out[b] = s / math.sqrt(n)
    return out


def _tsls_stat_batch_np(y, z, w, x, k, idx, cond_max):
    n = idx.shape[1]
    yb, zb, wb, xb = y[idx], z[idx], w[idx], x[idx]
    sww = np.einsum("bia,bic->bac", wb, wb) / n
    swz = np.einsum("bia,bic->bac", wb, zb) / n
    swy = np.einsum("bia,bi->ba", wb, yb) / n
    out = np.full(idx.shape[0], np.nan)
    ok = np.isfinite(sww).all(axis=(1, 2))
    ok[ok] = np.linalg.cond(sww[ok]) <= cond_max
    if not ok.any():
        return out
    gamma = np.linalg.solve(sww[ok], swz[ok])
    amat = np.einsum("bap,baq->bpq", swz[ok], gamma)
    ok2 = np.linalg.cond(amat) <= cond_max
    rows = np.flatnonzero(ok)[ok2]
    gamma, amat = gamma[ok2], amat[ok2]
    rhs = np.einsum("bap,ba->bp", gamma, swy[rows])
    beta = np.linalg.solve(amat, rhs[..., None])[..., 0]
    u = yb[rows] - np.einsum("bip,bp->bi", zb[rows], beta)
    wk = wb[rows, :, k]
    wk = wk - wk.mean(axis=1, keepdims=True)
    out[rows] = (u * xb[rows] * wk).sum(axis=1) / math.sqrt(n)
    return out


def tsls_statistic_batch(y, z, w, x, k, idx, cond_max=1e12):
    """Linear test statistic on each resample given by a row of ``idx``.

    Rows whose moment matrices exceed ``cond_max`` yield NaN.
    """
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    args = (
        np.ascontiguousarray(y, dtype=float),
        np.ascontiguousarray(z, dtype=float),
        np.ascontiguousarray(w, dtype=float),
        np.ascontiguousarray(x, dtype=float),
        int(k),
        idx,
        float(cond_max),
    )
    if _BACKEND == "numba":
        return _tsls_stat_batch_nb(*args)
    return _tsls_stat_batch_np(*args)


# --------------------------------------------------------------------------
# (lam I + H) y = rhs for upper Hessenberg H, O(n^2)


@njit(cache=True, nogil=True)
def _hessenberg_solve_nb(h, lam, rhs):
    n = h.shape[0]
    a = h.copy()
    b = rhs.copy()
    for i in range(n):
        a[i, i] += lam
    for k in range(n - 1):
        if abs(a[k + 1, k]) > abs(a[k, k]):
            for j in range(k, n):
                tmp = a[k, j]
                a[k, j] = a[k + 1, j]
                a[k + 1, j] = tmp
            tmp = b[k]
            b[k] = b[k + 1]
            b[k + 1] = tmp
        if a[k, k] == 0.0:
            return np.full(n, np.nan)
        m = a[k + 1, k] / a[k, k]
        if m != 0.0:
            for j in range(k, n):
                a[k + 1, j] -= m * a[k, j]
            b[k + 1] -= m * b[k]
    out = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = b[i]
        for j in range(i + 1, n):
            s -= a[i, j] * out[j]
        if a[i, i] == 0.0:
            return np.full(n, np.nan)
        out[i] = s / a[i, i]
    return out


def _hessenberg_solve_np(h, lam, rhs):
    n = h.shape[0]
    a = h.copy()
    b = rhs.copy()
    a[np.diag_indices(n)] += lam
    for k in range(n - 1):
        if abs(a[k + 1, k]) > abs(a[k, k]):
            a[[k, k + 1], k:] = a[[k + 1, k], k:]
            b[[k, k + 1]] = b[[k + 1, k]]
        if a[k, k] == 0.0:
            return np.full(n, np.nan)
        m = a[k + 1, k] / a[k, k]
        if m != 0.0:
            a[k + 1, k:] -= m * a[k, k:]
            b[k + 1] -= m * b[k]
    out = np.empty(n)
    for i in range(n - 1, -1, -1):
        if a[i, i] == 0.0:
            return np.full(n, np.nan)
        out[i] = (b[i] - a[i, i + 1:] @ out[i + 1:]) / a[i, i]
    return out


def hessenberg_shift_solve(h, lam, rhs):
    """Solve ``(lam I + h) y = rhs`` for upper Hessenberg ``h``.

    Gaussian elimination with adjacent-row partial pivoting. NaN on breakdown.
    """
    h = np.ascontiguousarray(h, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if _BACKEND == "numba":
        return _hessenberg_solve_nb(h, float(lam), rhs)
    return _hessenberg_solve_np(h, float(lam), rhs)
