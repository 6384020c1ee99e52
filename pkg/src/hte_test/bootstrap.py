"""Pairwise bootstrap engine, p-values and the warp-speed pool."""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import resample
from .errors import ConfigError, DegeneracyError

MAX_DISCARD_FRACTION = 0.01
CHUNK = 256
SUMMARY_QUANTILES = (0.025, 0.05, 0.5, 0.95, 0.975)
_MASK64 = (1 << 64) - 1


def replicate_rng(seed, index):
    """Counter-based generator for stream ``(seed, index)``.

    Philox keyed by the pair, so every replicate's draws are independent of
    the order in which replicates are computed.
    """
    key = np.array([int(seed) & _MASK64, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed, *path):
    """Hash ``seed`` and an integer path into a new 64-bit seed."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def replicate_indices(seed, b, n):
    return replicate_rng(seed, b).integers(0, n, size=n)


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get("HTE_TEST_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"HTE_TEST_THREADS={env!r} is not an integer") from None
        else:
            threads = os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise ConfigError("thread count must be >= 1")
    return threads


def symmetric_pvalue(statistic, replicates):
    """Share of replicates with ``|T* - T| > |T|`` (ties do not count)."""
    r = np.asarray(replicates, dtype=float)
    if r.size == 0:
        raise DegeneracyError("no bootstrap replicates")
    return float(np.mean(np.abs(r - statistic) > abs(statistic)))


def equal_tailed_pvalue(statistic, replicates):
    """``2 min(F(T), 1 - F(T))`` with F the ECDF of the centred replicates."""
    r = np.asarray(replicates, dtype=float)
    if r.size == 0:
        raise DegeneracyError("no bootstrap replicates")
    f = float(np.mean(r - statistic <= statistic))
    return min(1.0, 2.0 * min(f, 1.0 - f))


@dataclass(frozen=True)
class TestReport:
    statistic: float
    replicates: np.ndarray
    p_symmetric: float
    p_equal_tailed: float = None
    discarded_count: int = 0
    config: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    @property
    def p_value(self):
        if self.config.get("pvalue_mode") == "equal-tailed" and self.p_equal_tailed is not None:
            return self.p_equal_tailed
        return self.p_symmetric

    def reject(self, level):
        return self.p_value < level

    def summary(self):
        r = self.replicates
        return {
            "count": int(r.size),
            "mean": float(r.mean()),
            "sd": float(r.std(ddof=1)) if r.size > 1 else 0.0,
            "quantiles": {str(q): float(v) for q, v in zip(SUMMARY_QUANTILES, np.quantile(r, SUMMARY_QUANTILES))},
        }

    def to_dict(self):
        return {
            "statistic": float(self.statistic),
            "replicates_summary": self.summary(),
            "p_symmetric": float(self.p_symmetric),
            "p_equal_tailed": None if self.p_equal_tailed is None else float(self.p_equal_tailed),
            "discarded_count": int(self.discarded_count),
            "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _run_chunk(d, statistic_fn, batch_fn, seed, start, stop):
    idx = np.stack([replicate_indices(seed, b, d.n) for b in range(start, stop)])
    if batch_fn is not None:
        return np.asarray(batch_fn(idx), dtype=float)
    out = np.empty(stop - start)
    for j in range(stop - start):
        try:
            out[j] = statistic_fn(resample(d, idx[j]))
        except DegeneracyError:
            out[j] = np.nan
    return out


def bootstrap_replicates(d, statistic_fn, B, seed, *, batch_fn=None, threads=1):
    """Raw replicate vector, NaN where a replicate was degenerate.

    Replicate ``b`` always uses stream ``(seed, b)``; chunks are assembled by
    replicate index, so the result does not depend on ``threads``.
    """
    if B < 1:
        raise ConfigError("bootstrap count B must be >= 1")
    bounds = [(s, min(s + CHUNK, B)) for s in range(0, B, CHUNK)]
    threads = resolve_threads(threads)
    if threads == 1 or len(bounds) == 1:
        parts = [_run_chunk(d, statistic_fn, batch_fn, seed, a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: _run_chunk(d, statistic_fn, batch_fn, seed, *ab), bounds))
    return np.concatenate(parts)


def assemble_report(statistic, raw, *, pvalue_mode="symmetric", config=None):
    raw = np.asarray(raw, dtype=float)
    keep = np.isfinite(raw)
    discarded = int(raw.size - keep.sum())
    if discarded > MAX_DISCARD_FRACTION * raw.size:
        raise DegeneracyError(
            f"{discarded} of {raw.size} bootstrap replicates were degenerate (cap is 1%)"
        )
    reps = raw[keep]
    reps.setflags(write=False)
    p_eq = equal_tailed_pvalue(statistic, reps) if pvalue_mode == "equal-tailed" else None
    return TestReport(
        statistic=float(statistic),
        replicates=reps,
        p_symmetric=symmetric_pvalue(statistic, reps),
        p_equal_tailed=p_eq,
        discarded_count=discarded,
        config=dict(config or {}),
    )


def bootstrap(d, statistic_fn, B, seed, *, batch_fn=None, pvalue_mode="symmetric", threads=None, config=None):
    """Pairwise bootstrap test of ``statistic_fn`` on ``d``.

    ``batch_fn``, if given, maps a (chunk, n) matrix of resample indices to the
    statistics of those resamples (NaN for degenerate ones) and replaces the
    per-replicate ``statistic_fn`` calls.
    """
    if pvalue_mode not in ("symmetric", "equal-tailed"):
        raise ConfigError(f"unknown p-value mode {pvalue_mode!r}")
    statistic = float(statistic_fn(d))
    raw = bootstrap_replicates(d, statistic_fn, B, seed, batch_fn=batch_fn, threads=threads)
    cfg = {"B": int(B), "seed": int(seed), "pvalue_mode": pvalue_mode}
    cfg.update(config or {})
    return assemble_report(statistic, raw, pvalue_mode=pvalue_mode, config=cfg)


@dataclass(frozen=True)
class WarpSpeedPool:
    """One (statistic, bootstrap statistic) pair per Monte Carlo iteration."""

    statistics: np.ndarray
    bootstrap_statistics: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.statistics, dtype=float)
        b = np.asarray(self.bootstrap_statistics, dtype=float)
        if s.shape != b.shape or s.ndim != 1:
            raise ValueError("statistics and bootstrap_statistics must be equal-length vectors")
        object.__setattr__(self, "statistics", s)
        object.__setattr__(self, "bootstrap_statistics", b)

    def __len__(self):
        return self.statistics.size


def warp_speed_pvalues(pool):
    """Symmetric p-value of every iteration against the pooled bootstrap draws.

    Each bootstrap draw is recentred at the statistic of the iteration it came
    from, ``T*_m' - T_m'``; iteration m then gets
    ``mean(|T*_m' - T_m'| > |T_m|)`` over all m'. Iterations with a failed
    bootstrap draw (NaN) contribute no draw to the pool.
    """
    if len(pool) == 0:
        raise DegeneracyError("warp-speed pool is empty")
    dev = np.abs(pool.bootstrap_statistics - pool.statistics)
    dev = np.sort(dev[np.isfinite(dev)])
    if dev.size == 0:
        raise DegeneracyError("warp-speed pool holds no finite bootstrap draws")
    thresh = np.abs(pool.statistics)
    exceed = dev.size - np.searchsorted(dev, thresh, side="right")
    p = exceed / dev.size
    p[~np.isfinite(pool.statistics)] = np.nan
    return p
