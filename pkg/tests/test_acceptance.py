"""Exit criteria. Each test prints one ``ACCEPT <id> PASS|FAIL`` line.

Monte Carlo cells run at their full stated sizes, so this module takes tens of
minutes on one core. Select it alone with ``pytest -m acceptance``.
"""

import math
import os

import numpy as np
import pytest

from hte_test.bootstrap import resolve_threads
from hte_test.cli import run
from hte_test.data import ColumnSpec, Dataset, load_csv, read_columns
from hte_test.diagnostics import chi_squared_independence, ks_two_sample
from hte_test.kernels import Bandwidths, KernelSpec, WeightDensity, default_weights, silverman_bandwidths
from hte_test.linear import LinearTestConfig, linear_statistic, linear_test, tsls_fit
from hte_test.np_test import NpTestConfig, np_test
from hte_test.npiv import SOLVE_RTOL, build_matrices, tikhonov_solve
from hte_test.simulation import SimScenario, example4_npiv_check, generate, oracle_checks, run_cell

pytestmark = pytest.mark.acceptance

SEED = 1


@pytest.fixture
def emit(capsys):
    def _emit(name, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPT {name} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return _emit


def _within(value, target, tol):
    return abs(value - target) <= tol


# ---------------------------------------------------------------------------
# 1. linear size


@pytest.fixture(scope="module")
def linear_full_cell():
    scn = SimScenario("linear_sec26", 0.0, 500, 10_000, B=1000, seed=SEED)
    return run_cell(scn, threads=resolve_threads())


@pytest.fixture(scope="module")
def linear_warp_cell():
    scn = SimScenario("linear_sec26", 0.0, 500, 10_000, warp_speed=True, seed=SEED)
    return run_cell(scn, threads=resolve_threads())


def test_1_linear_size_full_bootstrap(linear_full_cell, emit):
    r = linear_full_cell.rejection_rates
    ok5 = emit("1a linear size n=500 5% (full bootstrap)", _within(r[0.05], 0.0506, 0.010),
               f"rate {r[0.05]:.4f}, target 0.0506 +/- 0.010, runtime {linear_full_cell.runtime_s:.0f}s")
    ok10 = emit("1b linear size n=500 10% (full bootstrap)", _within(r[0.10], 0.1038, 0.012),
                f"rate {r[0.10]:.4f}, target 0.1038 +/- 0.012")
    assert ok5 and ok10


def test_1_linear_size_fast_variant(linear_warp_cell, emit):
    r = linear_warp_cell.rejection_rates
    t = linear_warp_cell.runtime_s
    ok5 = emit("1c linear size n=500 5% (--fast)", _within(r[0.05], 0.0506, 0.012), f"rate {r[0.05]:.4f} +/- 0.012")
    ok10 = emit("1d linear size n=500 10% (--fast)", _within(r[0.10], 0.1038, 0.012), f"rate {r[0.10]:.4f} +/- 0.012")
    okt = emit("1e --fast runtime", t < 120, f"{t:.1f}s, target < 120s")
    assert ok5 and ok10 and okt


def test_1_engines_agree(linear_full_cell, linear_warp_cell, emit):
    gaps = {lv: abs(linear_full_cell.rejection_rates[lv] - linear_warp_cell.rejection_rates[lv]) for lv in (0.05, 0.10)}
    ok = emit("1f warp-speed vs full bootstrap", max(gaps.values()) <= 0.01,
              ", ".join(f"{lv:g}: gap {g:.4f}" for lv, g in gaps.items()) + " (<= 0.01)")
    assert ok


# ---------------------------------------------------------------------------
# 2. nonparametric size, warp speed


@pytest.mark.parametrize("n, t5, t10", [(100, 0.0642, 0.1250), (250, 0.0583, 0.1136)])
def test_2_np_size_warp_speed(n, t5, t10, emit):
    scn = SimScenario("np_sec33", 0.0, n, 10_000, warp_speed=True, seed=SEED)
    res = run_cell(scn, threads=resolve_threads())
    r = res.rejection_rates
    ok5 = emit(f"2 np size n={n} 5%", _within(r[0.05], t5, 0.015),
               f"rate {r[0.05]:.4f}, target {t5} +/- 0.015, valid {res.valid_reps}, runtime {res.runtime_s:.0f}s")
    ok10 = emit(f"2 np size n={n} 10%", _within(r[0.10], t10, 0.02), f"rate {r[0.10]:.4f}, target {t10} +/- 0.02")
    assert ok5 and ok10


# ---------------------------------------------------------------------------
# 3. Power monotonicity, warp speed, M = 1000


def _ordered(rates, ses, emit, label):
    grid = sorted(rates)
    ok = True
    for lo, hi in zip(grid[1:], grid[2:]):
        gap = rates[hi] - rates[lo]
        se = math.sqrt(ses[hi] ** 2 + ses[lo] ** 2)
        ok &= emit(f"3 {label} rate({hi:g}) > rate({lo:g}) by 3 SE", gap >= 3 * se and gap > 0,
                   f"{rates[hi]:.3f} vs {rates[lo]:.3f}, gap {gap:.4f}, 3 SE = {3 * se:.4f}")
    first = grid[1]
    ok &= emit(f"3 {label} rate({first:g}) > 0.05", rates[first] > 0.05, f"{rates[first]:.3f}")
    return ok


@pytest.mark.parametrize("dgp, n", [("linear_sec26", 1000), ("np_sec33", 500)])
def test_3_power_monotone(dgp, n, emit):
    rates, ses = {}, {}
    for dev in (0.0, 0.2, 0.5, 1.0):
        res = run_cell(SimScenario(dgp, dev, n, 1000, warp_speed=True, levels=(0.05,), seed=SEED),
                       threads=resolve_threads())
        rates[dev], ses[dev] = res.rejection_rates[0.05], res.mc_se[0.05]
    assert _ordered(rates, ses, emit, f"{dgp} n={n}")


# ---------------------------------------------------------------------------
# 4. Analytical oracles at n = 1e6


ORACLE_CASES = [("example1", a) for a in (1.0, 4.0)] + [
    (ex, r) for ex in ("example2", "example3", "example4") for r in (0.0, 0.5, 1.0)
]


@pytest.mark.parametrize("example, param", ORACLE_CASES)
def test_4_oracles(example, param, emit):
    rep = oracle_checks(example, param, 10**6, SEED)
    ok = True
    for c in rep.checks:
        ok &= emit(f"4 {example} param={param:g} {c.name}", c.passed,
                   f"estimate {c.estimate:.6g}, target {c.target:.6g}, tolerance {c.tolerance:.3g}")
    assert ok


@pytest.mark.parametrize("rho", [0.0, 0.5, 1.0])
def test_4_example4_npiv(rho, emit):
    phi_check, _ = example4_npiv_check(rho, 4000, SEED)
    ok = emit(f"4 example4 rho={rho:g} NPIV central phi_hat", phi_check.passed,
              f"mean over central 80% of Z {phi_check.estimate:.4f}, target {phi_check.target:.4f} +/- 0.15")
    assert ok


def test_4_linear_design_moment(emit):
    # T_n / sqrt(n) converges to E[U X (W2 - E W2)] = rho; target frozen from an
    # independent 1e7-draw simulation of the design
    rho = 1.0
    d = generate("linear_sec26", rho, 10**5, SEED)
    t = linear_statistic(d, tsls_fit(d)) / math.sqrt(d.n)
    ok = emit("4 linear design T_n/sqrt(n) at rho=1", abs(t - rho) < 0.05, f"{t:.4f}, target {rho} +/- 0.05")
    assert ok


# ---------------------------------------------------------------------------
# 5. Exact in-sample identities


def test_5_exact_identities(emit):
    rng = np.random.default_rng(SEED)
    worst_orth = worst_stat = 0.0
    for _ in range(200):
        n = int(rng.integers(20, 300))
        p = int(rng.integers(2, 6))
        w = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
        z = w @ rng.standard_normal((p, p)) + rng.standard_normal((n, p))
        z[:, 0] = 1.0
        y = z @ rng.standard_normal(p) + (1 + z[:, 1] ** 2) * rng.standard_normal(n)
        d = Dataset(y, z, w, np.ones(n), k=int(rng.integers(1, p)))
        fit = tsls_fit(d)
        u = fit.residuals
        scale = np.abs(w).T @ np.abs(u)
        worst_orth = max(worst_orth, float(np.max(np.abs(w.T @ u) / scale)))
        stat_scale = np.sum(np.abs(u * (d.w[:, d.k] - d.w[:, d.k].mean()))) / math.sqrt(n)
        worst_stat = max(worst_stat, abs(linear_statistic(d, fit)) / stat_scale)
    ok1 = emit("5a sum W_i U_i = 0 (just identified)", worst_orth <= 1e-8, f"worst relative {worst_orth:.2e}")
    ok2 = emit("5b T_n = 0 when X = 1", worst_stat <= 1e-8, f"worst relative {worst_stat:.2e}")
    assert ok1 and ok2


# ---------------------------------------------------------------------------
# 6. Tikhonov solver contract


def test_6_tikhonov_contract(emit):
    rng = np.random.default_rng(SEED)
    worst_res = worst_lin = worst_scale = 0.0
    for _ in range(200):
        n = 150
        w = rng.standard_normal(n)
        z = 0.5 * w + rng.standard_normal(n)
        y1, y2 = rng.standard_normal(n), rng.standard_normal(n)
        d = Dataset(y1, z, w, np.zeros(n))
        bw = silverman_bandwidths(d).scaled(float(rng.uniform(0.5, 2)))
        pi, tau = default_weights(d)
        mz, mw, r = build_matrices(d, KernelSpec(), bw, pi, tau)
        lam = float(10 ** rng.uniform(-5, 0))
        phi1 = tikhonov_solve(mz, mw, r, lam)
        rhs = mz @ r
        worst_res = max(worst_res, np.linalg.norm((lam * np.eye(n) + mz @ mw) @ phi1 - rhs) / np.linalg.norm(rhs))
        a, c = rng.uniform(-3, 3, 2)
        solve = lambda y: tikhonov_solve(mz, mw, mw @ y, lam)
        phi2 = solve(y2)
        combo = solve(a * y1 + c * y2)
        ref = a * phi1 + c * phi2
        worst_lin = max(worst_lin, np.max(np.abs(combo - ref)) / np.max(np.abs(ref)))
        s = float(10 ** rng.uniform(-3, 3))
        worst_scale = max(worst_scale, np.max(np.abs(solve(s * y1) - s * phi1)) / (s * np.max(np.abs(phi1))))
    ok1 = emit("6a linear-solve residual", worst_res <= SOLVE_RTOL, f"worst relative {worst_res:.2e} (<= 1e-8)")
    ok2 = emit("6b linearity in Y", worst_lin <= 1e-10, f"worst relative {worst_lin:.2e} (<= 1e-10)")
    ok3 = emit("6c Y-scale equivariance", worst_scale <= 1e-10, f"worst relative {worst_scale:.2e} (<= 1e-10)")

    # n = 3, entry by entry
    z3, w3 = [0.0, 0.5, 2.0], [1.0, -1.0, 0.0]
    kern = lambda u: math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    dens = lambda t, m, v: math.exp(-0.5 * (t - m) ** 2 / v) / math.sqrt(2 * math.pi * v)
    mz, mw, _ = build_matrices(Dataset([1.0, 2.0, -1.0], z3, w3, [0.0, 1.0, 1.0]), KernelSpec(),
                               Bandwidths(0.8, 1.5), WeightDensity(0.5, 3.0), WeightDensity(0.0, 2.0))
    hz = np.array([[kern((z3[i] - z3[j]) / 0.8) / (dens(z3[i], 0.5, 3.0) * 3 * 0.8) for j in range(3)]
                   for i in range(3)])
    hw = np.array([[kern((w3[i] - w3[j]) / 1.5) / (dens(w3[i], 0.0, 2.0) * 3 * 1.5) for j in range(3)]
                   for i in range(3)])
    err = max(np.max(np.abs(mz - hz) / np.abs(hz)), np.max(np.abs(mw - hw) / np.abs(hw)))
    ok4 = emit("6d hand-computed n=3 kernel matrices", err <= 1e-12, f"worst relative {err:.2e} (<= 1e-12)")
    assert ok1 and ok2 and ok3 and ok4


# ---------------------------------------------------------------------------
# 7. CLI determinism across --threads


def _save(path, cols, names):
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def test_7_cli_determinism(tmp_path, emit, capsys):
    d = generate("linear_sec26", 0.3, 300, SEED)
    lin = tmp_path / "lin.csv"
    _save(lin, [d.y, d.z[:, 1], d.z[:, 2], d.w[:, 1], d.x], ["y", "z2", "z3", "w2", "x"])
    e = generate("np_sec33", 0.3, 120, SEED)
    npc = tmp_path / "np.csv"
    _save(npc, [e.y, e.z[:, 0], e.w[:, 0], e.x, (e.x > -0.5).astype(float)], ["y", "z", "w", "x", "xb"])
    commands = {
        "test-linear": ["test-linear", "--data", str(lin), "--y", "y", "--z", "z2,z3", "--w", "w2,z3", "--x", "x",
                        "--k", "2", "--z-intercept", "--w-intercept", "--B", "999", "--seed", "7"],
        "test-np": ["test-np", "--data", str(npc), "--y", "y", "--z", "z", "--w", "w", "--x", "x", "--B", "300",
                    "--seed", "7"],
        "simulate-bootstrap": ["simulate", "--dgp", "linear_sec26", "--rho", "0", "--n", "100", "--reps", "40",
                               "--B", "99", "--seed", "3"],
        "simulate-warp": ["simulate", "--dgp", "np_sec33", "--gamma", "0,0.5", "--n", "60", "--reps", "30",
                          "--seed", "3"],
    }
    ok = True
    for name, argv in commands.items():
        outputs = []
        for threads in ("1", "3"):
            out = tmp_path / f"{name}-{threads}.out"
            assert run([*argv, "--threads", threads, "--out", str(out)]) == 0
            files = [out] + ([out.with_suffix(".json")] if argv[0] == "simulate" else [])
            outputs.append(b"".join(f.read_bytes() for f in files))
        ok &= emit(f"7 {name} byte-identical across --threads 1/3", outputs[0] == outputs[1],
                   f"{len(outputs[0])} bytes")
    outs = []
    for _ in range(2):
        out = tmp_path / "diag.json"
        assert run(["diagnose", "--data", str(npc), "--x", "xb", "--w", "w", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    ok &= emit("7 diagnose repeated", outs[0] == outs[1], f"{len(outs[0])} bytes")
    capsys.readouterr()
    assert ok


# ---------------------------------------------------------------------------
# 8. Optional external data


CARD = os.environ.get("HTE_TEST_CARD_CSV")
FISH = os.environ.get("HTE_TEST_FISH_CSV")


@pytest.mark.skipif(not CARD, reason="set HTE_TEST_CARD_CSV to a prepared Card NLS extract")
def test_8_card_returns_to_schooling(emit):
    z = ["education", "experience", "experience2", "smsa", "south", "ethnicity"]
    w = ["nearcollege", "age", "age2", "smsa", "south", "ethnicity"]
    specs = [ColumnSpec("outcome", "lwage"), ColumnSpec("covariate", "married")]
    specs += [ColumnSpec("treatment", c, True) for c in z] + [ColumnSpec("instrument", c, True) for c in w]
    d = load_csv(CARD, specs, k="nearcollege")
    rep = linear_test(d, LinearTestConfig(B=10_000, seed=SEED))
    x, w2 = read_columns(CARD, ["married", "nearcollege"])
    chi = chi_squared_independence(x, w2)
    emit("8 card chi-squared pre-test", True, f"p-value {chi.p_value:.3f} (reported 0.55, informational)")
    ok = emit("8 card linear test p-value", _within(rep.p_symmetric, 0.0965, 0.02),
              f"{rep.p_symmetric:.4f}, target 0.0965 +/- 0.02")
    assert ok


@pytest.mark.skipif(not FISH, reason="set HTE_TEST_FISH_CSV to a prepared Fulton fish market extract")
def test_8_fish_market_demand(emit):
    specs = [ColumnSpec("outcome", "qty"), ColumnSpec("treatment", "price"), ColumnSpec("instrument", "wind"),
             ColumnSpec("covariate", "weekday")]
    d = load_csv(FISH, specs, k=1)
    rep = np_test(d, NpTestConfig(B=1000, seed=SEED))
    ks = ks_two_sample(d.x, d.w[:, 0])
    emit("8 fish KS pre-test", True, f"p-value {ks.p_value:.3f} (reported 0.17, informational)")
    ok = emit("8 fish NP test p-value", _within(rep.p_symmetric, 0.0362, 0.02),
              f"{rep.p_symmetric:.4f}, target 0.0362 +/- 0.02")
    assert ok
