import math

import numpy as np
import pytest
from scipy import stats

from crtprune import csbp
from crtprune.errors import ConfigError, DomainError
from crtprune.mechanism import exp_jump_mechanism, quadratic_mechanism, shift, stable_mechanism


@pytest.mark.parametrize("a, lam", [(0.01, 0.1), (1.0, 1.0), (3.0, 50.0), (10.0, 0.01)])
def test_solve_u_quadratic(a, lam):
    m = quadratic_mechanism(0.5)
    assert csbp.solve_u(m, a, lam) == pytest.approx(lam / (1 + 0.5 * a * lam), rel=1e-10)


@pytest.mark.parametrize("a, lam", [(0.01, 0.1), (1.0, 1.0), (3.0, 50.0)])
def test_solve_u_stable(a, lam):
    m = stable_mechanism()
    assert csbp.solve_u(m, a, lam) == pytest.approx((lam ** -0.5 + 0.5 * a) ** -2, rel=1e-10)


def test_solve_u_drifted_quadratic():
    m = quadratic_mechanism(0.5, alpha=0.3)
    for a, lam in [(0.5, 2.0), (2.0, 0.3)]:
        assert csbp.solve_u(m, a, lam) == pytest.approx(
            float(csbp.quadratic_u(0.5, a, lam, 0.3)), rel=1e-10)


def test_flow_property_general():
    m = exp_jump_mechanism()
    lhs = csbp.solve_u(m, 1.7, 3.0)
    rhs = csbp.solve_u(m, 0.4, csbp.solve_u(m, 1.3, 3.0))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_solve_u_edge_cases():
    m = quadratic_mechanism()
    assert csbp.solve_u(m, 0.0, 2.0) == 2.0
    with pytest.raises(DomainError):
        csbp.solve_u(m, -1.0, 1.0)
    sup = shift(m, -1.0)  # q0 = 2
    with pytest.raises(DomainError):
        csbp.solve_u(sup, 1.0, 1.5)
    assert csbp.solve_u(sup, 50.0, 3.0) == pytest.approx(2.0, abs=1e-8)


def test_transition_sampler_matches_cdf():
    rng = np.random.default_rng(0)
    z = csbp.sample_quadratic_transition(0.5, 1.5, 0.7, rng, size=20000)
    ref = lambda x: csbp.quadratic_transition_cdf(0.5, 1.5, 0.7, x)
    d = stats.kstest(z[z > 0], lambda x: (ref(x) - ref(0.0)) / (1 - ref(0.0))).statistic
    assert d < 1.63 / math.sqrt((z > 0).sum())
    p0 = (z == 0).mean()
    assert abs(p0 - math.exp(-1.5 / 0.35)) < 4 * math.sqrt(p0 * (1 - p0) / z.size) + 1e-4


def test_euler_paths_against_exact_cdf():
    m = quadratic_mechanism(0.5)
    rng = np.random.default_rng(1)
    grid = np.linspace(0, 0.5, 101)
    paths = csbp.sample_general_paths(m, 1.0, grid, 5000, rng)
    exact = csbp.sample_quadratic_paths(m, 1.0, grid, 5000, rng)
    assert stats.ks_2samp(paths.values[:, -1], exact.values[:, -1]).pvalue > 1e-3


def test_grid_checks():
    m = quadratic_mechanism()
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        csbp.sample_quadratic_paths(m, 1.0, [0.0, 0.5], 3, rng)
    with pytest.raises(ConfigError):
        csbp.sample_quadratic_paths(m, 1.0, [0.1, 0.2], 3, rng)


def test_absorption_and_extinction_times():
    m = quadratic_mechanism(1.0)
    rng = np.random.default_rng(2)
    p = csbp.sample_quadratic_paths(m, 0.5, np.linspace(0, 2, 41), 2000, rng)
    v = p.values
    dead = v == 0
    # once zero, always zero
    assert np.all(dead[:, 1:] >= dead[:, :-1])
    ext = p.extinction_times
    assert np.all(np.isnan(ext) == ~p.extinct)


def test_girsanov_weight_trivial_and_domain():
    m = quadratic_mechanism()
    rng = np.random.default_rng(3)
    p = csbp.sample_quadratic_paths(m, 1.0, np.linspace(0, 1, 21), 10, rng)
    w, _ = csbp.girsanov_weights(p, m, 0.0)
    assert np.all(w == 1)
    with pytest.raises(DomainError):
        csbp.girsanov_weights(p, stable_mechanism(), -0.5)
    single = csbp.girsanov_weight(p.path(0), m, 0.3)
    assert single.value > 0


def test_martingale_mean_small():
    m = quadratic_mechanism(1.0)
    rng = np.random.default_rng(4)
    p = csbp.sample_quadratic_paths(m, 1.0, np.linspace(0, 1, 201), 20000, rng)
    w, _ = csbp.girsanov_weights(p, m, 1.0)
    assert abs(w.mean() - 1) < 4 * w.std() / math.sqrt(w.size)


def test_conditioned_on_extinction_is_subcritical():
    m = shift(quadratic_mechanism(0.5), -1.0)
    rng = np.random.default_rng(5)
    p = csbp.sample_paths_given_extinction(m, 1.0, np.linspace(0, 5, 101), 2000, rng)
    assert p.values[:, -1].mean() < 0.05


def test_laplace_helpers():
    m = quadratic_mechanism(0.5)
    assert csbp.total_mass_laplace(m, 2.0, 1.0) == pytest.approx(math.exp(-2 * math.sqrt(2)))
    assert csbp.extinction_prob(shift(m, -1.0), 1.0) == pytest.approx(math.exp(-2.0))
    assert csbp.laplace_Za(m, 1.0, 1.0, 2.0) == pytest.approx(math.exp(-1.0))
