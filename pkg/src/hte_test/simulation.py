"""Data-generating processes, Monte Carlo size/power experiments and
analytical oracle checks."""

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bootstrap import (
    WarpSpeedPool,
    bootstrap_replicates,
    derive_seed,
    replicate_rng,
    resolve_threads,
    symmetric_pvalue,
    warp_speed_pvalues,
)
from .data import Dataset
from .errors import ConfigError, DegeneracyError, OracleFailure
from .kernels import KernelSpec, default_weights, silverman_bandwidths
from .linear import COND_MAX, _batch, linear_bootstrap_draw, linear_statistic, ols_fit, tsls_fit
from .np_test import (
    DiscreteDistribution,
    NpTestConfig,
    discrete_moment,
    discrete_npiv_oracle,
    np_bootstrap_draw,
    np_setup,
    np_statistic,
    np_test,
)
from .npiv import npiv_fit

DGPS = ("linear_sec26", "np_sec33", "example1", "example2", "example3", "example4")
LINEAR_DGPS = ("linear_sec26", "example1", "example2")
NP_DGPS = ("np_sec33", "example4")
ORACLE_SE_TOL = 4.0


def structural_np(z):
    return (1.0 + np.exp(-z)) ** -2


def generate(dgp, deviation, n, seed, *, latent=False):
    """Draw n observations from one of the simulation designs.

    ``deviation`` is rho (linear_sec26, example2-4), gamma (np_sec33) or alpha
    (example1). With ``latent=True`` a dict of unobserved draws is returned as
    well.
    """
    if dgp not in DGPS:
        raise ConfigError(f"unknown dgp {dgp!r}; choose from {', '.join(DGPS)}")
    n = int(n)
    if n < 1:
        raise ConfigError("n must be positive")
    rng = replicate_rng(seed, 0)
    a = float(deviation)
    ones = np.ones(n)
    if dgp == "linear_sec26":
        w2, e, x, z3 = rng.standard_normal((4, n))
        z2 = w2 + e + x
        y = (1 + a * z2) * (e + x)
        d = Dataset(y, np.column_stack([ones, z2, z3]), np.column_stack([ones, w2, z3]), x, k=1)
        extra = {"e": e}
    elif dgp == "np_sec33":
        x = rng.normal(-0.5, 1.0, n)
        w = rng.standard_normal(n)
        v = rng.standard_normal(n)
        z = 0.4 * w + 0.2 * v
        u = (v + x) * (1 + a * z)
        d = Dataset(structural_np(z) + u, z, w, x, k=0)
        extra = {"v": v, "u": u}
    elif dgp == "example1":
        w2 = (rng.random(n) < 0.5).astype(float)
        eps = rng.random(n)
        z2 = w2 * (eps >= 0.5) + (1 - w2) * ((eps >= 0.5) & (eps < 0.75))
        # Y = (alpha/4) Z2 + Z2 (1{eps >= 3/4} - 1/4) alpha
        y = a * z2 * (eps >= 0.75)
        x = rng.standard_normal(n)  # the design does not use X; independent filler
        d = Dataset(y, np.column_stack([ones, z2]), np.column_stack([ones, w2]), x, k=1)
        extra = {"eps": eps, "effect": a * (eps >= 0.75)}
    elif dgp == "example2":
        w, e, x = rng.standard_normal((3, n))
        z = w + w * e + a * w * x
        d = Dataset(z * (e + a * x), z, w, x, k=0)
        extra = {"e": e}
    elif dgp == "example3":
        e = rng.uniform(-1.0, 1.0, n)
        x = (rng.random(n) < 0.5).astype(float)
        w = (rng.random(n) < 0.5).astype(float)
        z = w * x * (e >= 0)
        # U(0) = rho X E, U(1) = 0, phi = 0
        d = Dataset((1 - z) * a * x * e, z, w, x, k=0)
        extra = {"e": e}
    else:  # example4
        w, e, x = rng.standard_normal((3, n))
        z = w + e + x
        d = Dataset(z * (e + a * x), z, w, x, k=0)
        extra = {"e": e}
    return (d, extra) if latent else d


def example3_distribution(rho):
    """Exact cell law of the binary design: cells (W, X, sign E), 1/8 each."""
    prob, z, w, x, ym = [], [], [], [], []
    for wv in (0.0, 1.0):
        for xv in (0.0, 1.0):
            for positive in (False, True):
                zv = wv * xv * positive
                e_mean = 0.5 if positive else -0.5  # E[E | sign] for E ~ U[-1, 1]
                prob.append(0.125)
                z.append(zv)
                w.append(wv)
                x.append(xv)
                ym.append((1 - zv) * rho * xv * e_mean)
    return DiscreteDistribution(prob, z, w, ym, x)


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class SimScenario:
    dgp: str
    deviation: float
    n: int
    mc_reps: int
    B: int = 1000
    warp_speed: bool = False
    c_h: float = 1.0
    c_lambda: float = 1.0
    levels: tuple = (0.05, 0.10)
    seed: int = 0

    def __post_init__(self):
        if self.dgp not in LINEAR_DGPS + NP_DGPS:
            raise ConfigError(f"dgp {self.dgp!r} cannot be used in a Monte Carlo experiment")
        if self.n < 10:
            raise ConfigError("n must be at least 10")
        if self.mc_reps < 1:
            raise ConfigError("mc_reps must be >= 1")
        if not self.warp_speed and self.B < 1:
            raise ConfigError("B must be >= 1")
        if not (self.c_h > 0 and self.c_lambda > 0):
            raise ConfigError("multipliers must be positive")
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))

    @property
    def test(self):
        return "linear" if self.dgp in LINEAR_DGPS else "nonparametric"

    def to_dict(self):
        out = asdict(self)
        out["levels"] = list(self.levels)
        out["test"] = self.test
        out["engine"] = "warp-speed" if self.warp_speed else "bootstrap"
        if self.warp_speed:
            out.pop("B")
        return out


@dataclass(frozen=True)
class SimResult:
    scenario: SimScenario
    rejection_rates: dict
    mc_se: dict
    valid_reps: int
    runtime_s: float
    statistics: np.ndarray = field(repr=False, default=None)
    pvalues: np.ndarray = field(repr=False, default=None)


def _np_config(scn):
    return NpTestConfig(B=scn.B, seed=0, c_h=scn.c_h, c_lambda=scn.c_lambda)


def _iteration(scn, m):
    """(statistic, second) for iteration m: the p-value under the full
    bootstrap, the single bootstrap draw under warp speed."""
    d = generate(scn.dgp, scn.deviation, scn.n, derive_seed(scn.seed, m, 0))
    boot_seed = derive_seed(scn.seed, m, 1)
    try:
        if scn.test == "linear":
            t = linear_statistic(d, tsls_fit(d))
            if scn.warp_speed:
                return t, linear_bootstrap_draw(d, boot_seed)
            raw = bootstrap_replicates(d, None, scn.B, boot_seed, batch_fn=_batch(d), threads=1)
            keep = raw[np.isfinite(raw)]
            if raw.size - keep.size > 0.01 * raw.size:
                return math.nan, math.nan
            return t, symmetric_pvalue(t, keep)
        if scn.warp_speed:
            setup = np_setup(d, _np_config(scn))
            t = np_statistic(d, setup.fit)
            try:
                tb = np_bootstrap_draw(d, setup, boot_seed)
            except DegeneracyError:
                tb = math.nan
            return t, tb
        cfg = NpTestConfig(B=scn.B, seed=boot_seed, c_h=scn.c_h, c_lambda=scn.c_lambda)
        rep = np_test(d, cfg, threads=1)
        return rep.statistic, rep.p_symmetric
    except DegeneracyError:
        return math.nan, math.nan


def _iteration_block(scn, start, stop):
    out = np.empty((stop - start, 2))
    for j, m in enumerate(range(start, stop)):
        out[j] = _iteration(scn, m)
    return out


def _init_worker():
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(1)
    except ImportError:  # pragma: no cover
        pass


def run_cell(scn, *, threads=None):
    """Run one Monte Carlo cell; iteration m owns streams keyed by (seed, m)."""
    t0 = time.perf_counter()
    threads = resolve_threads(threads)
    M = int(scn.mc_reps)
    if threads == 1:
        res = _iteration_block(scn, 0, M)
    else:
        size = max(1, math.ceil(M / (4 * threads)))
        bounds = [(s, min(s + size, M)) for s in range(0, M, size)]
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
            parts = list(pool.map(_iteration_block, [scn] * len(bounds), *zip(*bounds)))
        res = np.concatenate(parts)
    stats, second = res[:, 0], res[:, 1]
    if scn.warp_speed:
        pvals = warp_speed_pvalues(WarpSpeedPool(stats, second))
    else:
        pvals = second
    valid = np.isfinite(pvals)
    nv = int(valid.sum())
    if nv == 0:
        raise DegeneracyError("every Monte Carlo iteration failed")
    rates, ses = {}, {}
    for level in scn.levels:
        r = float(np.mean(pvals[valid] < level))
        rates[level] = r
        ses[level] = math.sqrt(r * (1 - r) / nv)
    return SimResult(scn, rates, ses, nv, time.perf_counter() - t0, stats, pvals)


def run_size_table(scenarios, *, threads=None):
    """Empirical size for every null scenario (deviation must be 0)."""
    out = []
    for scn in scenarios:
        if scn.deviation != 0:
            raise ConfigError("size tables need deviation = 0")
        out.append(run_cell(scn, threads=threads))
    return out


def run_power_curve(dgp, deviations, ns, mc_reps, *, B=1000, warp_speed=True, seed=0, levels=(0.05,),
                    c_h=1.0, c_lambda=1.0, threads=None):
    """Rejection rate for every (deviation, n) pair; the grid must include 0."""
    deviations = [float(v) for v in deviations]
    if 0.0 not in deviations:
        raise ConfigError("power-curve grid must include deviation 0")
    out = []
    for n in ns:
        for dev in deviations:
            scn = SimScenario(dgp, dev, int(n), int(mc_reps), B=B, warp_speed=warp_speed, c_h=c_h,
                              c_lambda=c_lambda, levels=tuple(levels), seed=seed)
            out.append(run_cell(scn, threads=threads))
    return out


TABLE_COLUMNS = ("dgp", "deviation", "n", "c_h", "c_lambda", "engine", "mc_reps", "valid_reps", "level",
                 "rejection_rate", "mc_se")
POWER_COLUMNS = ("dgp", "deviation", "n", "level", "rejection_rate", "mc_se")


def results_to_csv(results, columns=TABLE_COLUMNS, header=None):
    """CSV text; ``header`` (a dict) is written first as a ``# config:`` comment."""
    buf = io.StringIO()
    if header is not None:
        buf.write("# config: " + json.dumps(header, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for res in results:
        s = res.scenario
        for level in s.levels:
            row = {
                "dgp": s.dgp,
                "deviation": repr(float(s.deviation)),
                "n": s.n,
                "c_h": repr(float(s.c_h)),
                "c_lambda": repr(float(s.c_lambda)),
                "engine": "warp-speed" if s.warp_speed else f"bootstrap(B={s.B})",
                "mc_reps": s.mc_reps,
                "valid_reps": res.valid_reps,
                "level": repr(level),
                "rejection_rate": repr(res.rejection_rates[level]),
                "mc_se": repr(res.mc_se[level]),
            }
            writer.writerow([row[c] for c in columns])
    return buf.getvalue()


# --------------------------------------------------------------------------
# analytical oracles


@dataclass(frozen=True)
class OracleCheck:
    name: str
    estimate: float
    target: float
    se: float
    tolerance: float

    @property
    def passed(self):
        return abs(self.estimate - self.target) <= self.tolerance

    def to_dict(self):
        return {"name": self.name, "estimate": self.estimate, "target": self.target, "se": self.se,
                "tolerance": self.tolerance, "passed": self.passed}


@dataclass(frozen=True)
class OracleReport:
    example: str
    parameter: float
    n: int
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def raise_on_failure(self):
        bad = self.failures()
        if bad:
            names = ", ".join(f"{c.name} (estimate {c.estimate:.5g}, target {c.target:.5g})" for c in bad)
            raise OracleFailure(f"{self.example}: oracle failed for {names}")

    def to_dict(self):
        return {"example": self.example, "parameter": self.parameter, "n": self.n, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks]}


def _se_check(name, influence, estimate, target):
    se = float(np.std(influence, ddof=1) / math.sqrt(len(influence)))
    return OracleCheck(name, float(estimate), float(target), se, ORACLE_SE_TOL * se)


def _tsls_influence(d, fit):
    """Per-observation influence of the TSLS coefficients (rows = observations)."""
    n = d.n
    sww = d.w.T @ d.w / n
    amat = fit.gamma_hat.T @ sww @ fit.gamma_hat
    return (d.w * fit.residuals[:, None]) @ fit.gamma_hat @ np.linalg.inv(amat).T


def _ols_influence(y, z, coef):
    resid = y - z @ coef
    szz = z.T @ z / len(y)
    return (z * resid[:, None]) @ np.linalg.inv(szz).T


def example4_npiv_check(rho, n=4000, seed=0, central=0.8, tol=0.15):
    """NPIV at n points on the Example 4 design: the mean of phi_hat over the
    central share of Z should be close to the constant solution 1 + rho."""
    d = generate("example4", rho, n, seed)
    bw = silverman_bandwidths(d)
    pi, tau = default_weights(d)
    fit = npiv_fit(d, KernelSpec(), bw, pi, tau, "cv")
    z = d.z[:, 0]
    lo, hi = np.quantile(z, [(1 - central) / 2, (1 + central) / 2])
    inside = (z >= lo) & (z <= hi)
    est = float(fit.phi_hat[inside].mean())
    w = d.w[:, 0]
    moment = float(np.mean(fit.residuals * (w - w.mean()) * d.x))
    return (
        OracleCheck("npiv_phi_central_mean", est, 1 + rho, math.nan, tol),
        OracleCheck("npiv_residual_moment", moment, rho, math.nan, 0.1),
    )


def oracle_checks(example, parameter, n_large=10**6, seed=0, *, npiv_n=None):
    """Compare large-sample estimates with closed-form population values.

    Tolerances are 4 Monte Carlo standard errors (delta-method influence
    functions for estimated quantities); exact discrete quantities use 1e-12.
    """
    if n_large < 10**5:
        raise ConfigError("oracle checks need n_large >= 1e5")
    a = float(parameter)
    checks = []
    if example in ("example1", "1"):
        example = "example1"
        d, lat = generate("example1", a, n_large, seed, latent=True)
        fit = tsls_fit(d)
        checks.append(_se_check("tsls_slope", _tsls_influence(d, fit)[:, 1], fit.beta_tsls[1], a))
        coef = ols_fit(d.y, d.z)
        checks.append(_se_check("ols_slope", _ols_influence(d.y, d.z, coef)[:, 1], coef[1], a / 3))
        eff = lat["effect"]
        checks.append(_se_check("ate", eff - eff.mean(), eff.mean(), a / 4))
    elif example in ("example2", "2"):
        example = "example2"
        d = generate("example2", a, n_large, seed)
        fit = tsls_fit(d)
        checks.append(_se_check("tsls", _tsls_influence(d, fit)[:, 0], fit.beta_tsls[0], 1 + a * a))
        w, z = d.w[:, 0], d.z[:, 0]
        uwx = fit.residuals * w * d.x
        ratio = np.mean(z * w * d.x) / np.mean(z * w)
        infl = uwx - ratio * w * fit.residuals
        checks.append(_se_check("moment_UWX", infl, uwx.mean(), -a ** 3))
    elif example in ("example3", "3"):
        example = "example3"
        dist = example3_distribution(a)
        phi = discrete_npiv_oracle(dist)
        checks.append(OracleCheck("phi_at_1", phi[1.0], -a / 2, 0.0, 1e-12))
        checks.append(OracleCheck("moment_exact", discrete_moment(dist, phi), -a / 16, 0.0, 1e-12))
        d = generate("example3", a, n_large, seed)
        z, w = d.z[:, 0], d.w[:, 0]
        u = d.y - np.where(z == 1.0, phi[1.0], phi[0.0])
        terms = u * (w - w.mean()) * d.x
        checks.append(_se_check("moment_sample", terms, terms.mean(), -a / 16))
    elif example in ("example4", "4"):
        example = "example4"
        d = generate("example4", a, n_large, seed)
        w = d.w[:, 0]
        terms = (d.y - 1 - a) * (w - w.mean()) * d.x
        checks.append(_se_check("moment_UWX", terms, terms.mean(), a))
        if npiv_n:
            checks.extend(example4_npiv_check(a, npiv_n, derive_seed(seed, 1)))
    else:
        raise ConfigError(f"unknown oracle example {example!r}")
    return OracleReport(example, a, int(n_large), checks)
