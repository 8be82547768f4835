import math

import numpy as np
import pytest
from scipy import stats

from crtprune import massflow as mf
from crtprune.errors import DomainError
from crtprune.harness import ks_statistic
from crtprune.mechanism import (bar_theta, classify, eval_psi, exp_jump_mechanism,
                                log_mechanism, psi_inverse, quadratic_mechanism, shift,
                                stable_mechanism)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def finite_laplace(m, x, theta, lam):
    # E[exp(-lam sigma_theta); sigma_theta < inf] = exp(-x (psi^{-1}(lam + psi(theta)) - theta))
    return math.exp(-x * (psi_inverse(m, lam + eval_psi(m, theta)) - theta))


def test_tau_cdf_matches_samples(rng):
    x = mf.sample_tau(0.7, rng, 20000)
    assert ks_statistic(x, lambda v: mf.tau_cdf(0.7, v)) < 1.63 / math.sqrt(x.size)


def test_sigma0_quadratic_is_levy(rng):
    m = quadratic_mechanism(0.5)
    s = mf.sample_sigma0(m, 1.2, rng, 20000)
    assert stats.kstest(s, stats.levy(scale=1.44).cdf).statistic < 1.63 / math.sqrt(s.size)


def test_sigma0_general_laplace(rng):
    m = exp_jump_mechanism()
    s = mf.sample_sigma0(m, 0.8, rng, 4000)
    # no jump before the mass runs out: atom at x / d = 0.8 of mass e^{-0.8}
    p = (s == 0.8).mean()
    assert abs(p - math.exp(-0.8)) < 4 * math.sqrt(0.25 / s.size)
    assert s.min() == 0.8
    for lam in (0.5, 2.0):
        emp = np.exp(-lam * s).mean()
        assert abs(emp - math.exp(-0.8 * psi_inverse(m, lam))) < 4 / math.sqrt(s.size)


@pytest.mark.parametrize("theta", [-0.4, 0.3])
def test_sigma_theta_defective_law(rng, theta):
    m = quadratic_mechanism(0.5)
    x = 1.0
    s = mf.sample_sigma_theta(m, x, theta, rng, 20000)
    pf = math.exp(-x * (bar_theta(m, theta) - theta))
    assert abs(s.prob_finite - pf) < 4 * math.sqrt(pf * (1 - pf) / len(s)) + 1e-12
    v = np.where(s.finite, s.values, np.inf)
    for lam in (0.3, 1.0):
        emp = np.where(s.finite, np.exp(-lam * np.nan_to_num(v, posinf=0.0)), 0.0).mean()
        assert abs(emp - finite_laplace(m, x, theta, lam)) < 4 / math.sqrt(len(s))


def test_growth_quadratic_vs_laplace(rng):
    m = quadratic_mechanism(1.0)
    sig = np.full(20000, 0.8)
    g = mf.sample_growth(m, 0.5, -0.2, sig, rng)
    ref_pf = mf.prob_finite_given(m, 0.5, -0.2, 0.8)
    assert abs(g.prob_finite - ref_pf) < 4 * math.sqrt(ref_pf * (1 - ref_pf) / len(g))
    emp = np.where(g.finite, np.exp(-np.nan_to_num(g.values)), 0.0).mean()
    ref = mf.conditional_laplace_growth(m, 0.5, -0.2, 0.8, 1.0)
    assert abs(emp - ref) < 4 / math.sqrt(len(g))
    assert np.all(g.values[g.finite] >= 0.8)


def test_growth_general_vs_laplace(rng):
    m = exp_jump_mechanism()
    g = mf.sample_growth(m, 0.4, -0.3, np.full(300, 0.5), rng)
    ref = mf.conditional_laplace_growth(m, 0.4, -0.3, 0.5, 1.0)
    emp = np.where(g.finite, np.exp(-np.nan_to_num(g.values)), 0.0).mean()
    assert abs(emp - ref) < 4 / math.sqrt(len(g))


def test_growth_pair_order():
    with pytest.raises(DomainError):
        mf.prob_finite_given(quadratic_mechanism(), 0.1, 0.2, 1.0)


def test_law_of_A_survival():
    m = quadratic_mechanism(0.5)
    assert mf.law_of_A_survival(m, -0.7) == pytest.approx(1.4)
    assert mf.law_of_A_survival(m, 0.3) == 0.0
    lg = log_mechanism()
    c = classify(lg)
    assert mf.law_of_A_survival(lg, c.theta_inf) == pytest.approx(c.bar_theta_inf - c.theta_inf)
    with pytest.raises(DomainError):
        mf.law_of_A_survival(exp_jump_mechanism(), -1.5)


def test_density_of_A_integrates_to_survival():
    m = exp_jump_mechanism()
    from scipy.integrate import quad
    val, _ = quad(lambda r: mf.density_of_A(m, r), -0.6, 0.0)
    assert val == pytest.approx(mf.law_of_A_survival(m, -0.6), rel=1e-8)
    assert mf.density_of_A(quadratic_mechanism(), -0.3) == pytest.approx(2.0)


def test_A_given_sigma0_quadratic(rng):
    m = quadratic_mechanism(0.5)
    vals, atom = mf.sample_A_given_sigma0(m, 1.3, rng, 20000)
    assert not atom.any()
    d = ks_statistic(vals, lambda q: mf.A_cdf_given_sigma0(m, 1.3, q))
    assert d < 1.63 / math.sqrt(vals.size)


def test_A_given_sigma0_atom(rng):
    m = log_mechanism()
    c = classify(m)
    vals, atom = mf.sample_A_given_sigma0(m, 1.0, rng, 20000)
    p_atom = mf.A_cdf_given_sigma0(m, 1.0, c.theta_inf)[0]
    assert 0 < p_atom < 1
    assert abs(atom.mean() - p_atom) < 4 * math.sqrt(p_atom * (1 - p_atom) / atom.size)
    assert np.all(vals[~atom] > c.theta_inf)
    assert mf.A_cdf_given_sigma0(m, 1.0, c.theta_inf - 0.1)[0] == 0.0
    assert mf.sample_A_given_sigma0(m, 0.5, np.random.default_rng(0)) is not None


def test_sigmaA_exact_vs_inversion(rng):
    m = quadratic_mechanism(0.5)
    a = mf.sample_sigmaA_given_A(m, -1.0, rng, 5000, method="exact")
    b = mf.sample_sigmaA_given_A(m, -1.0, rng, 5000, method="inversion")
    assert stats.ks_2samp(a, b).pvalue > 1e-3
    # Gamma(1/2) with scale 1 / (beta theta^2)
    assert stats.kstest(a, stats.gamma(0.5, scale=2.0).cdf).pvalue > 1e-3


def test_sigmaA_laplace_matches_noyau():
    beta, th, lam = 0.7, -0.8, 1.3
    m = quadratic_mechanism(beta)
    assert mf.sigmaA_laplace(m, th, lam) == pytest.approx(
        mf.noyau_laplace(beta, th, 0.0, 0.0, lam, 0.0), rel=1e-12)


def test_sigma0_stable_laplace(rng):
    m = stable_mechanism()
    s = mf.sample_sigma0(m, 0.5, rng, 4000)
    emp = np.exp(-s).mean()
    assert abs(emp - math.exp(-0.5 * psi_inverse(m, 1.0))) < 4 / math.sqrt(s.size)


def test_sigma_star_general(rng):
    m = exp_jump_mechanism()
    s = mf.sample_sigma_star(m, 0.5, rng, 4000)
    # atom at 0 of mass psi'(0.5) / d
    p = (s == 0).mean()
    assert abs(p - m.dpsi(0.5)) < 4 * math.sqrt(0.25 / s.size)
    emp = np.exp(-s).mean()
    assert abs(emp - mf.sigma_star_laplace(m, 0.5, 1.0)) < 4 / math.sqrt(s.size)
    with pytest.raises(DomainError):
        mf.sample_sigma_star(m, 0.5, rng, 3, method="exact")


def test_trajectories_monotone(rng):
    m = quadratic_mechanism(0.5)
    tr = mf.sample_mass_trajectories(m, 1.0, np.linspace(-1, 1, 21), 2000, rng)
    both = tr.finite[:, 1:] & tr.finite[:, :-1]
    assert np.all(np.diff(tr.values, axis=1)[both] <= 0)
    # finite sets grow with theta
    assert np.all(tr.finite[:, 1:] >= tr.finite[:, :-1])
    # infinite below A, finite above
    exploded = np.isfinite(tr.A) & (tr.A > -1)
    for i in np.flatnonzero(exploded)[:50]:
        t = tr.trajectory(i)
        assert np.all(~t.finite[t.thetas < t.A])
        assert np.all(t.finite[t.thetas > t.A])
    pf = tr.finite[:, 0].mean()
    ref = math.exp(-2.0)
    assert abs(pf - ref) < 4 * math.sqrt(ref * (1 - ref) / len(tr))


def test_trajectory_A_law(rng):
    m = quadratic_mechanism(0.5)
    x = 1.0
    tr = mf.sample_mass_trajectories(m, x, np.linspace(-1, 1, 5), 20000, rng)
    A = tr.A[np.isfinite(tr.A)]
    # P_x(A <= q) = exp(-x (q_bar - q)) = exp(2 x q) on (-1, 0]
    A = A[A > -1]
    cdf = lambda q: (np.exp(2 * x * np.minimum(q, 0)) - math.exp(-2 * x)) / (1 - math.exp(-2 * x))
    assert ks_statistic(A, cdf) < 1.63 / math.sqrt(A.size)


def test_post_explosion(rng):
    m = quadratic_mechanism(0.5)
    tr = mf.sample_post_explosion(m, -0.5, [0.0, 0.5, 1.0], rng, 20000)
    assert tr.under_excursion
    v = tr.values
    assert np.all(np.diff(v, axis=1) < 0)
    emp = np.exp(-0.7 * v[:, 1] - 0.4 * v[:, 2]).mean()
    ref = mf.noyau_laplace(0.5, -0.5, 0.5, 0.5, 0.7, 0.4)
    assert abs(emp - ref) < 4 / math.sqrt(v.shape[0])
    with pytest.raises(DomainError):
        mf.sample_post_explosion(exp_jump_mechanism(), -0.5, [0.0], rng, 3)


def test_gA_window(rng):
    m = quadratic_mechanism(0.5)
    assert mf.gA_density(m, 0.4) == pytest.approx(2.0)
    u, rec = mf.sample_U_for_gA(m, rng, 5000, (0.0, 2.0))
    assert rec["mass"] == pytest.approx(4.0)
    assert stats.kstest(u, stats.uniform(0, 2).cdf).pvalue > 1e-3
    with pytest.raises(DomainError):
        mf.gA_density(log_mechanism(), 0.1)


def test_requires_critical():
    with pytest.raises(DomainError):
        mf.sample_sigma0(shift(quadratic_mechanism(), -1.0), 1.0, np.random.default_rng(0), 2)
