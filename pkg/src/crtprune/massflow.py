"""The decreasing total-mass process (sigma_theta), the explosion time A,
the size-biased mass sigma* and their laws.

Conventions: psi is critical; sigma_theta is the total mass of the tree
pruned at intensity theta, non-increasing in theta, infinite for theta < A.
Infinite values are carried by a boolean ``finite`` mask; the matching
entries of ``values`` are nan and never read.

Quadratic samplers are exact and rest on the stable-1/2 subordinator
tau_theta = theta^2 / G^2 (first passage of a standard Brownian motion).
General mechanisms go through ``inversion.LaplaceLaw``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import rootfind
from .errors import DegenerateWeights, DomainError, InversionError
from .inversion import LaplaceLaw
from .mechanism import (bar_theta, check_theta, classify, compound_poisson_part,
                        eval_dpsi, eval_psi, psi_inverse, psi_inverse_complex,
                        psi_inverse_vec)


# --------------------------------------------------------------------------
# stable 1/2 subordinator


def sample_tau(theta, rng, size=None):
    """tau_theta = theta^2 / G^2 with G standard normal."""
    g = rng.standard_normal(size)
    return np.asarray(theta, dtype=float) ** 2 / (g * g)


def tau_cdf(theta, x):
    """P(tau_theta <= x) = 2 (1 - Phi(theta / sqrt x))."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > 0, special.erfc(theta / np.sqrt(2 * np.maximum(x, 1e-300))), 0.0)


def _first_passage(level, drift, rng):
    """First passage time of B_t + drift t at ``level`` (drift >= 0)."""
    level = np.asarray(level, dtype=float)
    out = np.zeros(level.shape)
    pos = level > 0
    if drift > 0:
        out[pos] = rng.wald(level[pos] / drift, level[pos] ** 2)
    else:
        g = rng.standard_normal(int(pos.sum()))
        out[pos] = level[pos] ** 2 / (g * g)
    return out


@dataclass
class MassSamples:
    """Samples in (0, inf] with an explicit finite flag."""

    values: np.ndarray
    finite: np.ndarray

    def __len__(self):
        return self.values.size

    @property
    def prob_finite(self):
        return float(self.finite.mean())

    def finite_values(self):
        return self.values[self.finite]


def _check_quadratic_critical(m):
    return m.is_quadratic and m.alpha_tilde == 0


def _require_critical(m):
    c = classify(m)
    if c.criticality != "critical":
        raise DomainError("mass-flow laws need a critical mechanism")
    return c


def _in_theta(m, theta):
    c = classify(m)
    ti = c.theta_inf
    if ti is None:
        return theta >= 0
    return theta > ti or (theta == ti and bool(c.theta_inf_in_theta))


# --------------------------------------------------------------------------
# sigma_0 and the conditional growth laws


def _mass_law(m, x, theta, p):
    """LaplaceLaw of sigma_theta under P_x (finite part of mass p).

    With psi(r) = d r - rate + o(1) the mass is at least x / d and equals
    it (no jump before the mass runs out) with probability
    exp(-x ((psi(theta) + rate) / d - theta)); that case is inverted as
    sigma_theta - x / d with an atom at 0.
    """
    psq = eval_psi(m, theta)
    cp = compound_poisson_part(m)
    if cp is None:
        return LaplaceLaw(lambda z: np.exp(-x * (psi_inverse_complex(m, z + psq) - theta)),
                          p, scale=x * x)
    d, rate = cp
    w = math.exp(-x * ((psq + rate) / d - theta))
    return LaplaceLaw(
        lambda z: np.exp(-x * (psi_inverse_complex(m, z + psq) - z / d - theta)),
        p, scale=x / d, atoms=((0.0, w),), offset=x / d)


def _zero_atom(m, slope):
    # transforms psi'(.) / psi'(psi^{-1}(lam + .)) tend to slope / d
    cp = compound_poisson_part(m)
    return () if cp is None else ((0.0, slope / cp[0]),)


def sample_sigma0(m, x, rng, size=None):
    """Total mass sigma_0 under P_x, Laplace transform exp(-x psi^{-1}(lam)).

    Quadratic: the first passage time of Brownian motion at x / sqrt(2 beta).
    """
    _require_critical(m)
    n = 1 if size is None else size
    if x == 0:
        out = np.zeros(n)
    elif _check_quadratic_critical(m):
        out = sample_tau(x / math.sqrt(2 * m.beta), rng, n)
    else:
        out, _ = _mass_law(m, x, 0.0, 1.0).sample(rng, n)
    return float(out[0]) if size is None else out


def _growth_exponent(m, theta, q, lam):
    """psi_theta(psi_q^{-1}(lam)) written with psi only (lam may be complex)."""
    psq = eval_psi(m, q)
    lam = np.asarray(lam)
    if np.iscomplexobj(lam):
        r = psi_inverse_complex(m, lam + psq)
    else:
        r = psi_inverse_vec(m, lam + psq)
    return m.psi(theta - q + r) - eval_psi(m, theta)


def _check_pair(m, theta, q):
    _require_critical(m)
    if q > theta:
        raise DomainError("need q <= theta")
    for v in (theta, q):
        if not _in_theta(m, v):
            raise DomainError(f"{v!r} is outside Theta")


def prob_finite_given(m, theta, q, sigma_theta):
    """P(sigma_q < inf | sigma_theta) = exp(-sigma_theta psi_theta(q_bar - q))."""
    _check_pair(m, theta, q)
    d = bar_theta(m, q) - q
    return math.exp(-sigma_theta * (eval_psi(m, theta + d) - eval_psi(m, theta)))


def conditional_laplace_growth(m, theta, q, sigma_theta, lam):
    """E[exp(-lam sigma_q); sigma_q < inf | sigma_theta]."""
    _check_pair(m, theta, q)
    return math.exp(-sigma_theta * float(_growth_exponent(m, theta, q, float(lam))))


def sample_growth(m, theta, q, sigma_theta, rng):
    """Sample sigma_q given sigma_theta (vectorised over sigma_theta).

    Given sigma_theta, sigma_q - sigma_theta is a subordinator run for time
    sigma_theta with exponent psi_theta(psi_q^{-1}(lam)) - lam. In the
    quadratic case it is a first passage time of Brownian motion with drift
    sqrt(2 beta)|q| at level sqrt(2 beta)(theta - q) sigma_theta, killed
    with probability 1 - exp(-4 beta |q| (theta - q) sigma_theta) when q < 0.
    """
    _check_pair(m, theta, q)
    s = np.atleast_1d(np.asarray(sigma_theta, dtype=float))
    c = theta - q
    if c == 0:
        return MassSamples(s.copy(), np.ones(s.size, bool))
    if _check_quadratic_critical(m):
        b = m.beta
        finite = np.ones(s.size, bool)
        if q < 0:
            finite = rng.random(s.size) < np.exp(-4 * b * abs(q) * c * s)
        level = math.sqrt(2 * b) * c * s[finite]
        vals = np.full(s.size, np.nan)
        vals[finite] = s[finite] + _first_passage(level, math.sqrt(2 * b) * abs(q), rng)
        return MassSamples(vals, finite)
    return _sample_growth_general(m, theta, q, s, rng)


def _sample_growth_general(m, theta, q, s, rng):
    phi0 = float(_growth_exponent(m, theta, q, 0.0))
    cp = compound_poisson_part(m)
    # the increment is 0 with probability exp(-s c_inf) (no jump grafted)
    c_inf = None if cp is None else cp[0] * (theta - q) - eval_psi(m, theta) + eval_psi(m, q)
    vals = np.full(s.size, np.nan)
    finite = np.zeros(s.size, bool)
    for i, si in enumerate(s):
        p = math.exp(-si * phi0)
        if rng.random() >= p:
            continue
        law = LaplaceLaw(
            lambda z: np.exp(-si * (_growth_exponent(m, theta, q, z) - z)), p,
            scale=max(si, 1e-12),
            atoms=() if c_inf is None else ((0.0, math.exp(-si * c_inf)),))
        finite[i] = True
        vals[i] = si + law.sample_finite(rng.random(1))[0]
    return MassSamples(vals, finite)


def sample_sigma_theta(m, x, theta, rng, size):
    """sigma_theta under P_x (total mass for the mechanism psi_theta)."""
    _require_critical(m)
    if not _in_theta(m, theta):
        raise DomainError(f"{theta!r} is outside Theta")
    if _check_quadratic_critical(m):
        b = m.beta
        finite = np.ones(size, bool)
        if theta < 0:
            finite = rng.random(size) < math.exp(-2 * x * abs(theta))
        vals = np.full(size, np.nan)
        vals[finite] = _first_passage(np.full(int(finite.sum()), x / math.sqrt(2 * b)),
                                      math.sqrt(2 * b) * abs(theta), rng)
        return MassSamples(vals, finite)
    p = math.exp(-x * (bar_theta(m, theta) - theta))
    vals, finite = _mass_law(m, x, theta, p).sample(rng, size)
    return MassSamples(vals, finite)


# --------------------------------------------------------------------------
# explosion time A


def law_of_A_survival(m, theta):
    """N[A > theta] = theta_bar - theta (0 for theta >= 0)."""
    c = _require_critical(m)
    theta = float(theta)
    if theta >= 0:
        return 0.0
    ti = c.theta_inf
    if ti is not None and theta < ti:
        raise DomainError(f"{theta!r} lies below theta_inf")
    if ti is not None and theta == ti and not c.theta_inf_in_domain:
        return math.inf
    return bar_theta(m, theta) - theta


def density_of_A(m, r):
    """Density 1 - psi'(r) / psi'(r_bar) of A on (theta_inf, 0)."""
    c = _require_critical(m)
    if c.theta_inf_in_theta:
        raise DomainError("A has an atom at theta_inf for this mechanism")
    r = float(r)
    if not r < 0 or (c.theta_inf is not None and r <= c.theta_inf):
        raise DomainError("r must lie in (theta_inf, 0)")
    return 1.0 - eval_dpsi(m, r) / eval_dpsi(m, bar_theta(m, r))


class ThetaInfAtom:
    """Marker for A = theta_inf (an atom of A when theta_inf is in Theta)."""

    def __repr__(self):
        return "ThetaInfAtom"


THETA_INF_ATOM = ThetaInfAtom()


def sample_A_given_sigma0(m, sigma0, rng, size=None):
    """Sample A given sigma_0 by inverse CDF.

    P(A <= q | sigma_0) = exp(-sigma_0 psi(q_bar - q)) for q in (theta_inf, 0).
    With U uniform, d = psi^{-1}(-log(U) / sigma_0) and q solves
    q_bar - q = d. When d exceeds theta_bar_inf - theta_inf the draw is
    the atom at theta_inf.

    Returns ``(values, at_atom)``; ``values`` holds nan at the atom.
    """
    c = _require_critical(m)
    if not sigma0 > 0:
        raise DomainError("sigma0 must be positive")
    n = 1 if size is None else size
    u = 1.0 - rng.random(n)  # in (0, 1]
    d = np.asarray(psi_inverse_vec(m, -np.log(u) / sigma0))
    at_atom = np.zeros(n, bool)
    if c.theta_inf_in_theta:
        dsup = c.bar_theta_inf - c.theta_inf
        at_atom = d >= dsup
    dd = np.where(at_atom, 0.0, d)
    if m.is_quadratic:
        q = -0.5 * dd
    else:
        # q_bar = t solves psi(t) = psi(t - d); increasing in t by convexity
        ti = c.theta_inf if c.theta_inf is not None else -math.inf
        t_lo = np.maximum(0.0, dd + ti)
        t = rootfind.bisect_vec(lambda t: m.psi(t) - m.psi(t - dd), np.zeros(n), t_lo, dd)
        q = t - dd
    q = np.where(dd == 0, -0.0, q)
    vals = np.where(at_atom, np.nan, q)
    if size is None:
        return THETA_INF_ATOM if at_atom[0] else float(vals[0])
    return vals, at_atom


def A_cdf_given_sigma0(m, sigma0, q):
    """exp(-sigma_0 psi(q_bar - q)), scalar root-finding per point."""
    c = classify(m)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    out = np.empty(q.size)
    for i, qi in enumerate(q):
        if qi >= 0:
            out[i] = 1.0
        elif c.theta_inf is not None and qi <= c.theta_inf:
            # below theta_inf only the atom (if any) is left
            atom = (qi == c.theta_inf and c.theta_inf_in_theta)
            out[i] = math.exp(-sigma0 * eval_psi(m, c.bar_theta_inf - c.theta_inf)) if atom else 0.0
        else:
            out[i] = math.exp(-sigma0 * eval_psi(m, bar_theta(m, qi) - qi))
    return out


# --------------------------------------------------------------------------
# sigma_A and sigma*


def sigmaA_laplace(m, theta, lam):
    """E[exp(-lam sigma_A) | A = theta] = psi'(theta_bar) / psi'(psi^{-1}(lam + psi(theta)))."""
    c = _require_critical(m)
    theta = float(theta)
    if not theta < 0 or not (c.theta_inf is None or theta > c.theta_inf):
        raise DomainError("theta must lie in (theta_inf, 0)")
    tb = bar_theta(m, theta)
    if lam == 0:
        return 1.0
    return eval_dpsi(m, tb) / eval_dpsi(m, psi_inverse(m, lam + eval_psi(m, theta)))


def _sigmaA_law(m, theta):
    tb = bar_theta(m, theta)
    num = eval_dpsi(m, tb)
    shift_ = eval_psi(m, theta)
    return LaplaceLaw(lambda z: num / m.dpsi(psi_inverse_complex(m, z + shift_)),
                      1.0, scale=1.0 / max(num * num, 1e-12), atoms=_zero_atom(m, num))


def sample_sigmaA_given_A(m, theta, rng, size, method="auto"):
    """sigma_A given A = theta < 0.

    ``method`` is "exact" (quadratic only: G^2 / (2 beta theta^2), that is
    1 / (2 beta tau_|theta|)), "inversion" (numeric inversion of
    ``sigmaA_laplace``) or "auto" (exact when available).
    """
    _require_critical(m)
    if not theta < 0:
        raise DomainError("theta must be negative")
    quad = _check_quadratic_critical(m)
    if method == "auto":
        method = "exact" if quad else "inversion"
    if method == "exact":
        if not quad:
            raise DomainError("exact sampler needs the quadratic mechanism")
        return 1.0 / (2 * m.beta * sample_tau(abs(theta), rng, size))
    if method != "inversion":
        raise ValueError(f"unknown method {method!r}")
    vals, _ = _sigmaA_law(m, theta).sample(rng, size)
    return vals


def sample_sigma_star(m, theta, rng, size, method="auto"):
    """Size-biased mass sigma*_theta for theta > 0.

    Quadratic: 1 / (2 beta tau_theta). Otherwise numeric inversion of
    psi'(theta) / psi'(psi^{-1}(lam + psi(theta))).
    """
    _require_critical(m)
    if not theta > 0:
        raise DomainError("theta must be positive")
    quad = _check_quadratic_critical(m)
    if method == "auto":
        method = "exact" if quad else "inversion"
    if method == "exact":
        if not quad:
            raise DomainError("exact sampler needs the quadratic mechanism")
        return 1.0 / (2 * m.beta * sample_tau(theta, rng, size))
    num = eval_dpsi(m, theta)
    shift_ = eval_psi(m, theta)
    law = LaplaceLaw(lambda z: num / m.dpsi(psi_inverse_complex(m, z + shift_)),
                     1.0, scale=1.0 / max(num * num, 1e-12), atoms=_zero_atom(m, num))
    vals, _ = law.sample(rng, size)
    return vals


def sigma_star_laplace(m, theta, lam):
    """psi'(theta) / psi'(psi^{-1}(lam + psi(theta)))."""
    return eval_dpsi(m, theta) / eval_dpsi(m, psi_inverse(m, lam + eval_psi(m, theta)))


def sigmaA_atom_laplace(m, lam):
    """Laplace transform of sigma_A on the event A = theta_inf (analytic only).

    Equals psi^{-1}(lam + psi(theta_inf)) - theta_bar_inf scaled as the
    N-measure of {A = theta_inf, exp(-lam sigma_A)}; no sampler exists for
    this infinite-measure atom.
    """
    c = _require_critical(m)
    if not c.theta_inf_in_theta:
        raise DomainError("A has no atom at theta_inf for this mechanism")
    return psi_inverse(m, lam + eval_psi(m, c.theta_inf)) - c.bar_theta_inf


# --------------------------------------------------------------------------
# trajectories


@dataclass
class MassTrajectory:
    thetas: np.ndarray
    sigmas: np.ndarray
    finite: np.ndarray
    A: float
    under_excursion: bool = False


@dataclass
class MassTrajectories:
    """Batch of trajectories on a common increasing theta grid."""

    thetas: np.ndarray
    values: np.ndarray   # (n, len(thetas)), nan where infinite
    finite: np.ndarray   # (n, len(thetas))
    A: np.ndarray        # explosion times (-inf if never infinite on the grid)
    under_excursion: bool = False

    def __len__(self):
        return self.values.shape[0]

    def trajectory(self, i):
        return MassTrajectory(self.thetas, self.values[i], self.finite[i],
                              float(self.A[i]), self.under_excursion)


def sample_mass_trajectories(m, x, thetas, n, rng):
    """(sigma_theta) on an increasing grid under P_x.

    sigma at the largest theta is drawn first; the grid is then walked
    downwards with ``sample_growth``. Once a value is infinite all smaller
    thetas are infinite. For a path that becomes infinite between two
    grid points, A is drawn exactly from its conditional law on that cell:
    P(A <= q | sigma_right) = exp(-sigma_right psi_right(q_bar - q)),
    restricted to q > theta_left.
    """
    _require_critical(m)
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 1 or np.any(np.diff(thetas) <= 0):
        raise DomainError("theta grid must be increasing")
    K = thetas.size
    vals = np.full((n, K), np.nan)
    fin = np.zeros((n, K), bool)
    top = sample_sigma_theta(m, x, thetas[-1], rng, n)
    vals[:, -1], fin[:, -1] = top.values, top.finite
    A = np.full(n, -np.inf)
    for k in range(K - 1, 0, -1):
        alive = fin[:, k]
        if not alive.any():
            break
        g = sample_growth(m, thetas[k], thetas[k - 1], vals[alive, k], rng)
        vals[alive, k - 1] = g.values
        fin[alive, k - 1] = g.finite
        died = np.flatnonzero(alive)[~g.finite]
        for i in died:
            A[i] = _sample_A_in_cell(m, thetas[k - 1], thetas[k], vals[i, k], rng)
    # never finite on the grid: A above the top of the grid
    A[~fin[:, -1]] = np.inf
    return MassTrajectories(thetas, vals, fin, A)


def _sample_A_in_cell(m, left, right, sigma_right, rng):
    """Draw A in (left, right] given sigma_right and sigma_left = inf."""
    if right >= 0 and left >= 0:
        raise DomainError("explosion cannot happen at non-negative theta")
    F = lambda q: math.exp(-sigma_right * (eval_psi(m, right + bar_theta(m, q) - q)
                                           - eval_psi(m, right)))
    F_left = F(left)
    u = F_left + (1.0 - F_left) * rng.random()
    hi = min(right, 0.0)
    if F(hi) <= u:
        return hi
    return rootfind.brent(lambda q: F(q) - u, left, hi)


def sample_post_explosion(m, A, s_grid, rng, n):
    """(sigma_{A+s}, s in s_grid) given A, quadratic mechanism.

    1 / (2 beta sigma_{A+s}) = tau_|A| + tau'_s where tau' is an independent
    stable-1/2 subordinator, sampled through independent increments.
    """
    _require_critical(m)
    if not _check_quadratic_critical(m):
        raise DomainError("post-explosion sampler needs the quadratic mechanism")
    if not A < 0:
        raise DomainError("A must be negative")
    s = np.asarray(s_grid, dtype=float)
    if s.ndim != 1 or s[0] < 0 or np.any(np.diff(s) <= 0):
        raise DomainError("s_grid must be increasing and non-negative")
    V = sample_tau(abs(A), rng, n)
    steps = np.diff(np.concatenate([[0.0], s]))
    incr = np.zeros((n, s.size))
    pos = steps > 0
    incr[:, pos] = sample_tau(steps[pos], rng, (n, int(pos.sum())))
    tau = V[:, None] + np.cumsum(incr, axis=1)
    vals = 1.0 / (2 * m.beta * tau)
    return MassTrajectories(A + s, vals, np.ones(vals.shape, bool),
                            np.full(n, float(A)), under_excursion=True)


def noyau_laplace(beta, theta, s, t, lam, kappa):
    """N[exp(-lam sigma_{A+s} - kappa sigma_{A+s+t}) | A = theta], quadratic."""
    h = abs(theta) + s
    b1 = math.sqrt(beta * h * h)
    b2 = math.sqrt(lam + beta * h * h)
    bt = math.sqrt(beta * t * t)
    return b1 / b2 * (bt + b2) / math.sqrt(kappa + (bt + b2) ** 2)


# --------------------------------------------------------------------------
# explosion-time window variable and Girsanov reweighting


def gA_density(m, r):
    """Unnormalised density 1 - psi'(r) / psi'(r_check) on (0, theta_bar_inf)."""
    c = _require_critical(m)
    if c.theta_inf_in_theta:
        raise DomainError("density undefined when theta_inf lies in Theta")
    return 1.0 - eval_dpsi(m, r) / eval_dpsi(m, check_theta(m, r))


def sample_U_for_gA(m, rng, size, window):
    """Sample U on the window (a, b] from the density restricted there.

    The density on (0, theta_bar_inf) need not be normalisable (it is the
    constant 2 in the quadratic case), so sampling is always restricted to
    a user window. Returns (samples, record) where the record documents
    the window and its unnormalised mass.
    """
    c = _require_critical(m)
    if c.theta_inf_in_theta:
        raise DomainError("density undefined when theta_inf lies in Theta")
    a, b = map(float, window)
    if not 0 <= a < b or (c.bar_theta_inf is not None and b >= c.bar_theta_inf):
        raise DomainError("window must satisfy 0 <= a < b < theta_bar_inf")
    grid = np.linspace(a, b, 513)
    inner = np.maximum(grid, 1e-12 * max(b, 1.0))
    dens = np.array([gA_density(m, r) for r in inner])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    u = rng.random(size) * cum[-1]
    out = np.interp(u, cum, grid)
    record = {"window": [a, b], "mass": float(cum[-1]), "restricted": True}
    return out, record


def girsanov_mass_reweight(samples, x, m, q, F=None, min_ess=100.0):
    """Estimate E^{psi_q}_x[F(sigma)] from samples of sigma under P^psi_x.

    Weights exp(q x - psi(q) sigma) on {sigma < inf}. Returns
    (estimate, standard error, effective sample size).
    """
    q = float(q)
    psq = eval_psi(m, q)
    if not (q > 0 and psq >= 0):
        raise DomainError("need q > 0 with psi(q) >= 0")
    v = np.where(samples.finite, samples.values, 0.0)
    w = np.where(samples.finite, np.exp(q * x - psq * v), 0.0)
    f = np.ones_like(v) if F is None else np.where(samples.finite, F(v), 0.0)
    ess = w.sum() ** 2 / max((w * w).sum(), 1e-300)
    if ess < min_ess:
        raise DegenerateWeights(f"effective sample size {ess:.1f} < {min_ess}")
    y = w * f
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(y.size)), float(ess)
