import json

import numpy as np
import pytest

from hte_test.bootstrap import (
    TestReport,
    WarpSpeedPool,
    assemble_report,
    bootstrap,
    derive_seed,
    equal_tailed_pvalue,
    replicate_indices,
    replicate_rng,
    resolve_threads,
    symmetric_pvalue,
    warp_speed_pvalues,
)
from hte_test.data import Dataset
from hte_test.errors import ConfigError, DegeneracyError


def _normal_data(n, seed):
    y = np.random.default_rng(seed).standard_normal(n)
    return Dataset(y, y, y, y)


def _mean(d):
    return float(d.y.mean())


def test_streams_are_keyed_by_seed_and_index():
    a = replicate_rng(5, 3).random(4)
    np.testing.assert_array_equal(a, replicate_rng(5, 3).random(4))
    assert not np.array_equal(a, replicate_rng(5, 4).random(4))
    assert not np.array_equal(a, replicate_rng(6, 3).random(4))
    idx = replicate_indices(1, 0, 50)
    assert idx.min() >= 0 and idx.max() < 50
    assert derive_seed(1, 2) == derive_seed(1, 2) != derive_seed(1, 3)


def test_constant_statistic_never_rejects_itself():
    rep = bootstrap(_normal_data(20, 0), lambda d: 3.0, 50, 1)
    assert rep.p_symmetric == 0.0
    assert np.all(rep.replicates == 3.0)


def test_single_replicate():
    rep = bootstrap(_normal_data(20, 0), _mean, 1, 1)
    assert rep.p_symmetric in (0.0, 1.0)


def test_pvalue_definitions():
    reps = np.array([0.0, 1.0, 2.0, 3.0, 4.5])
    # |T* - 1.5| = [1.5, 0.5, 0.5, 1.5, 3]: only 3 exceeds 1.5, the two 1.5s are ties
    assert symmetric_pvalue(1.5, reps) == pytest.approx(1 / 5)
    # centred replicates T* - T = [-1.5, -0.5, 0.5, 1.5, 3]; share <= 1.5 is 4/5
    assert equal_tailed_pvalue(1.5, reps) == pytest.approx(0.4)
    with pytest.raises(DegeneracyError):
        symmetric_pvalue(0.0, [])


def test_threads_do_not_change_replicates():
    d = _normal_data(40, 3)
    a = bootstrap(d, _mean, 600, 8, threads=1)
    b = bootstrap(d, _mean, 600, 8, threads=4)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    assert a.to_json() == b.to_json()


def test_discard_cap():
    calls = {"n": 0}

    def flaky(d):
        calls["n"] += 1
        # call 1 is the original sample; replicates are calls 2..201
        if calls["n"] % 100 == 0:
            raise DegeneracyError("boom")
        return float(d.y.mean())

    rep = bootstrap(_normal_data(30, 1), flaky, 200, 0, threads=1)
    assert rep.discarded_count == 2 and rep.replicates.size == 198
    with pytest.raises(DegeneracyError):
        assemble_report(0.0, np.r_[np.ones(97), np.nan, np.nan])


def test_report_json_layout():
    rep = bootstrap(_normal_data(30, 1), _mean, 100, 2, pvalue_mode="equal-tailed")
    doc = json.loads(rep.to_json())
    assert list(doc) == ["statistic", "replicates_summary", "p_symmetric", "p_equal_tailed", "discarded_count",
                         "config"]
    assert set(doc["replicates_summary"]) == {"count", "mean", "sd", "quantiles"}
    assert doc["replicates_summary"]["count"] == 100
    assert doc["config"]["pvalue_mode"] == "equal-tailed"
    assert isinstance(rep, TestReport)


def test_config_errors(monkeypatch):
    with pytest.raises(ConfigError):
        bootstrap(_normal_data(5, 0), _mean, 0, 0)
    with pytest.raises(ConfigError):
        bootstrap(_normal_data(5, 0), _mean, 5, 0, pvalue_mode="left")
    monkeypatch.setenv("HTE_TEST_THREADS", "3")
    assert resolve_threads() == 3
    monkeypatch.setenv("HTE_TEST_THREADS", "many")
    with pytest.raises(ConfigError):
        resolve_threads()
    assert resolve_threads(2) == 2


def test_warp_speed_pvalues():
    pool = WarpSpeedPool([1.0, -2.0, 0.5], [1.5, -1.0, 2.5])
    # recentred draws |T*_m - T_m| = [0.5, 1.0, 2.0]
    np.testing.assert_allclose(warp_speed_pvalues(pool), [1 / 3, 0.0, 2 / 3])
    same = WarpSpeedPool(np.full(4, 2.0), np.full(4, 2.0))
    np.testing.assert_array_equal(warp_speed_pvalues(same), 0.0)
    assert warp_speed_pvalues(WarpSpeedPool([0.3], [0.9]))[0] in (0.0, 1.0)
    with pytest.raises(DegeneracyError):
        warp_speed_pvalues(WarpSpeedPool([], []))
    p = warp_speed_pvalues(WarpSpeedPool([1.0, np.nan, 0.1], [1.2, 0.0, np.nan]))
    assert np.isnan(p[1]) and p[0] == 0.0 and p[2] == 1.0


@pytest.mark.slow
def test_mean_bootstrap_size():
    # bootstrap-for-the-mean validity: H0 mean = 0 is true, so the symmetric
    # p-value is close to uniform and rejects about 5% of the time
    reps, B, n = 2000, 2000, 200
    rejections = 0
    for r in range(reps):
        y = replicate_rng(10_000 + r, 0).standard_normal(n)
        d = Dataset(y, y, y, y)
        rep = bootstrap(d, _mean, B, r, batch_fn=lambda idx: y[idx].mean(axis=1), threads=1)
        rejections += rep.p_symmetric < 0.05
    assert 0.03 <= rejections / reps <= 0.07


def test_bootstrap_engine_matches_vectorised_mean():
    d = _normal_data(25, 4)
    rep = bootstrap(d, _mean, 300, 6, batch_fn=lambda idx: d.y[idx].mean(axis=1))
    slow = bootstrap(d, _mean, 300, 6)
    np.testing.assert_allclose(rep.replicates, slow.replicates, rtol=1e-14)
