"""Statistical checks, reports and the suite runner."""

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ConfigError, EmptySample

KS_COEF = 1.63
SE_MULT = 3.0


@dataclass
class SimConfig:
    """Run settings. Reports depend on these and the code only."""

    master_seed: int = 42
    replicates: int = 100_000
    workers: int = 1
    se_mult: float = SE_MULT
    ks_coef: float = KS_COEF
    chi2_alpha: float = 0.01
    residual_tol: float = 1e-10
    mech_path: Optional[str] = None
    batch: int = 10_000
    crt_grid: int = 2 ** 14
    crt_leaves: int = 1000
    crt_trees: int = 2000

    def __post_init__(self):
        if self.replicates < 1 or self.workers < 1 or self.batch < 1:
            raise ConfigError("replicates, workers and batch must be positive")

    @property
    def small(self):
        """Sample size of the KS checks (a tenth of ``replicates``)."""
        return max(self.replicates // 10, 1)


@dataclass
class ValidationReport:
    test_id: str
    criterion: int
    reference: str
    statistic: float
    threshold: float
    passed: bool
    n: int
    reference_values: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    runtime: float = 0.0

    def to_json(self, runtime=False):
        d = asdict(self)
        if not runtime:
            d.pop("runtime")
        return json.dumps(_clean(d), sort_keys=True)


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


# --------------------------------------------------------------------------
# estimators and tests


def empirical_laplace(samples, lam_grid):
    """Mean of exp(-lam x) over the finite samples, with SE = std / sqrt(n).

    Infinite entries are dropped; use ``count_infinite`` to report them.
    """
    x = np.asarray(samples, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise EmptySample("no finite samples")
    lam = np.atleast_1d(np.asarray(lam_grid, dtype=float))
    e = np.exp(-np.outer(lam, x))
    est = e.mean(axis=1)
    se = e.std(axis=1, ddof=1) / math.sqrt(x.size) if x.size > 1 else np.zeros(lam.size)
    return est, se


def count_infinite(samples):
    return int(np.sum(~np.isfinite(np.asarray(samples, dtype=float))))


def mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def se_check(est, se, ref, mult=SE_MULT):
    """(|est - ref| / se, passed); exact agreement is required when se = 0."""
    dev = abs(est - ref)
    if se == 0:
        return (0.0 if dev <= 1e-12 else math.inf), dev <= 1e-12
    return dev / se, dev <= mult * se


def ks_test(samples, reference_cdf, coef=KS_COEF):
    """One-sample KS: (statistic, threshold coef / sqrt(n), passed)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise EmptySample("no samples")
    stat = ks_statistic(x, reference_cdf)
    thr = coef / math.sqrt(x.size)
    return stat, thr, stat <= thr


def ks_statistic(x, reference_cdf):
    """sup |F_n - F| compared at both sides of every sample value.

    Matches the usual statistic for continuous F and stays correct when
    the reference has atoms (F is evaluated just left of each value too).
    """
    u, counts = np.unique(np.asarray(x, dtype=float), return_counts=True)
    right = np.cumsum(counts) / counts.sum()
    left = right - counts / counts.sum()
    F = np.asarray(reference_cdf(u), dtype=float)
    F_left = np.asarray(reference_cdf(np.nextafter(u, -np.inf)), dtype=float)
    return float(max(np.max(np.abs(right - F)), np.max(np.abs(left - F_left))))


def ks_2samp_test(a, b, coef=KS_COEF):
    """Two-sample KS with threshold coef * sqrt((n + m) / (n m))."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    stat = float(stats.ks_2samp(a, b).statistic)
    thr = coef * math.sqrt((a.size + b.size) / (a.size * b.size))
    return stat, thr, stat <= thr


def pmap(fn, items, workers=1):
    """Order-preserving map, optionally over a process pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# suites

SUITE_NAMES = ("mechanism", "csbp", "mass", "gw", "crt")


def run_suite(suite_name, config=None):
    """Run the checks mapped to ``suite_name`` (or ``all``)."""
    from . import validation

    config = config or SimConfig()
    if suite_name == "all":
        names = SUITE_NAMES
    elif suite_name in SUITE_NAMES:
        names = (suite_name,)
    else:
        raise ConfigError(f"unknown suite {suite_name!r}")
    reports = []
    for name in names:
        for check in validation.SUITES[name]:
            t0 = time.perf_counter()
            out = check(config)
            dt = time.perf_counter() - t0
            for r in out:
                r.runtime = dt
            reports.extend(out)
    return reports


def write_jsonl(reports, fh, runtime=False):
    for r in reports:
        fh.write(r.to_json(runtime=runtime) + "\n")
