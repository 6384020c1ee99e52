"""Compare the numba and numpy backends of the hot kernels.

    python benchmarks/bench_accel.py [--repeat 5]

Each kernel is timed under both backends on the same inputs (the numba
version is compiled before timing) and the outputs are checked to agree.
"""

import argparse
import time

import numpy as np
import scipy.linalg

from hte_test import _accel
from hte_test.bootstrap import replicate_indices
from hte_test.simulation import generate


def _time(fn, repeat):
    fn()  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases():
    d = generate("linear_sec26", 0.0, 500, 1)
    idx = np.stack([replicate_indices(7, b, d.n) for b in range(1000)])
    yield "tsls bootstrap, n=500, B=1000", lambda: _accel.tsls_statistic_batch(d.y, d.z, d.w, d.x, d.k, idx)

    z = generate("np_sec33", 0.0, 500, 1).z[:, 0]
    yield "gaussian kernel matrix, n=500", lambda: _accel.kernel_matrix(z, 0.1, _accel.GAUSSIAN)

    rng = np.random.default_rng(3)
    h = scipy.linalg.hessenberg(rng.random((400, 400)) / 400)
    rhs = rng.standard_normal(400)
    grid = np.geomspace(1e-6, 10, 40)
    yield "hessenberg shift solve, n=400, 40 lambdas", lambda: np.stack(
        [_accel.hessenberg_shift_solve(h, lam, rhs) for lam in grid]
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    previous = _accel.backend()
    print(f"{'kernel':<44}{'numpy [s]':>12}{'numba [s]':>12}{'speed-up':>10}{'max |diff|':>13}")
    try:
        for name, fn in cases():
            _accel.set_backend("numpy")
            t_np, out_np = _time(fn, args.repeat)
            _accel.set_backend("numba")
            t_nb, out_nb = _time(fn, args.repeat)
            diff = float(np.nanmax(np.abs(out_np - out_nb)))
            print(f"{name:<44}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.1f}{diff:>13.2e}")
    finally:
        _accel.set_backend(previous)


if __name__ == "__main__":
    main()
