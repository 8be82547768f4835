import io
import json
import math

import numpy as np
import pytest
from scipy import stats

from crtprune import harness as h
from crtprune.errors import ConfigError, EmptySample
from crtprune.streams import batch_sizes, stream


def test_empirical_laplace_constant_and_zero():
    est, se = h.empirical_laplace(np.full(10, 2.0), [0.0, 1.0])
    assert est == pytest.approx([1.0, math.exp(-2.0)])
    assert np.all(se < 1e-15)


def test_empirical_laplace_exponential():
    x = np.random.default_rng(0).exponential(1.0, 100_000)
    est, se = h.empirical_laplace(x, [0.5, 2.0])
    ref = np.array([1 / 1.5, 1 / 3.0])
    assert np.all(np.abs(est - ref) <= 4 * se)


def test_empirical_laplace_drops_infinite():
    x = np.array([1.0, np.inf, np.nan, 1.0])
    est, _ = h.empirical_laplace(x, [1.0])
    assert est[0] == pytest.approx(math.exp(-1))
    assert h.count_infinite(x) == 2
    with pytest.raises(EmptySample):
        h.empirical_laplace([np.inf], [1.0])


def test_se_check():
    assert h.se_check(1.0, 0.1, 1.2)[1]
    assert not h.se_check(1.0, 0.1, 1.4)[1]
    assert h.se_check(1.0, 0.0, 1.0) == (0.0, True)
    assert h.se_check(1.0, 0.0, 1.1)[1] is False


def test_ks_single_sample_threshold():
    stat, thr, ok = h.ks_test([0.5], stats.uniform.cdf)
    assert thr == pytest.approx(1.63)
    assert stat == pytest.approx(0.5) and ok


def test_ks_detects_shift():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(5000)
    assert h.ks_test(x, stats.norm.cdf)[2]
    assert not h.ks_test(x + 0.2, stats.norm.cdf)[2]
    with pytest.raises(EmptySample):
        h.ks_test([], stats.norm.cdf)


def test_ks_statistic_matches_scipy_and_handles_atoms():
    x = np.random.default_rng(2).random(500)
    assert h.ks_statistic(x, stats.uniform.cdf) == pytest.approx(
        stats.kstest(x, "uniform").statistic, abs=1e-14)
    # reference with an atom of 1/2 at 0, sample drawn from it
    cdf = lambda v: np.where(v < 0, 0.0, 0.5 + 0.5 * np.clip(v, 0, 1))
    y = np.concatenate([np.zeros(500), np.linspace(0.001, 1, 500)])
    assert h.ks_statistic(y, cdf) < 0.01


def test_ks_2samp():
    rng = np.random.default_rng(3)
    stat, thr, ok = h.ks_2samp_test(rng.random(400), rng.random(900))
    assert thr == pytest.approx(1.63 * math.sqrt(1300 / (400 * 900)))
    assert ok


def test_report_json_is_stable():
    r = h.ValidationReport("x", 1, "ref", float("inf"), 0.1, False, 3,
                           {"a": np.float64(1.5)}, {"v": np.array([1, 2])}, runtime=2.5)
    d = json.loads(r.to_json())
    assert "runtime" not in d and d["statistic"] == "inf" and d["details"]["v"] == [1, 2]
    assert json.loads(r.to_json(runtime=True))["runtime"] == 2.5
    buf = io.StringIO()
    h.write_jsonl([r, r], buf)
    assert buf.getvalue().count("\n") == 2


def test_config_validation():
    with pytest.raises(ConfigError):
        h.SimConfig(replicates=0)
    assert h.SimConfig(replicates=55).small == 5


def test_unknown_suite():
    with pytest.raises(ConfigError):
        h.run_suite("nope")


def test_streams_independent_and_reproducible():
    a = stream(42, "gw", 0).random(5)
    assert np.array_equal(a, stream(42, "gw", 0).random(5))
    assert not np.array_equal(a, stream(42, "gw", 1).random(5))
    assert not np.array_equal(a, stream(42, "crt", 0).random(5))
    assert batch_sizes(25, 10) == [10, 10, 5]


def _square(x):
    return x * x


def test_pmap_order():
    assert h.pmap(_square, range(6), workers=2) == [0, 1, 4, 9, 16, 25]


def test_small_suites_independent_of_workers():
    cfg = dict(replicates=2000, crt_trees=20, crt_grid=2 ** 9, crt_leaves=50, batch=500)
    out = []
    for w in (1, 2):
        buf = io.StringIO()
        reps = h.run_suite("gw", h.SimConfig(workers=w, **cfg))
        reps += h.run_suite("crt", h.SimConfig(workers=w, **cfg))
        h.write_jsonl(reps, buf)
        out.append(buf.getvalue())
    assert out[0] == out[1]
    assert len(out[0].splitlines()) >= 5


def test_mechanism_suite_passes():
    reps = h.run_suite("mechanism")
    assert reps and all(r.passed for r in reps)
    assert {r.criterion for r in reps} == {1}
