"""Laplace functionals, Girsanov weights and path samplers for the CSBP Z.

Z is the continuous-state branching process with mechanism psi started at
x; E_x[exp(-lam Z_a)] = exp(-x u(a, lam)) with
int_{u(a, lam)}^{lam} dr / psi(r) = a.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ConvergenceError, DomainError
from .mechanism import _quad, classify, psi_inverse, shift

DEFAULT_EPS = 1e-4
_trapezoid = getattr(np, "trapezoid", None) or np.trapz
MAX_STEP = 0.1


# --------------------------------------------------------------------------
# analytic side


def _u_setup(m, lam):
    c = classify(m)
    if c.criticality == "super":
        if lam <= c.q0:
            raise DomainError("u(a, lam) needs lam > q0 for a super-critical mechanism")
        return c.q0
    return 0.0


def _segment(h, lo, hi):
    """int_lo^hi h; Simpson on very short pieces where quad is unreliable."""
    if hi - lo < 1e-6:
        return (hi - lo) * (h(lo) + 4 * h(0.5 * (lo + hi)) + h(hi)) / 6
    return _quad(h, lo, hi)


def solve_u(m, a, lam):
    """u(a, lam), the solution of int_u^lam dr / psi(r) = a.

    Works in the variable s = log(u - q0): the integral is accumulated
    by adaptive quadrature while a safeguarded Newton iteration on s
    (whose derivative is known exactly) locates the root.
    """
    a, lam = float(a), float(lam)
    if a < 0:
        raise DomainError("a must be non-negative")
    if not lam > 0:
        raise DomainError("lam must be positive")
    if a == 0:
        return lam
    q0 = _u_setup(m, lam)
    if q0 > 0:
        # near q0, psi(q0 + e) cancels; trapezoid on psi' is O(e^3) accurate
        d0 = float(m.dpsi(q0))

        def h(v):
            e = math.exp(v)
            if e < 1e-4 * q0:
                return 2.0 / (d0 + float(m.dpsi(q0 + e)))
            return e / m.psi(q0 + e)
    else:
        h = lambda v: math.exp(v) / m.psi(q0 + math.exp(v))
    top = math.log(lam - q0)
    # walk down until int_s^top h >= a
    s_hi, I_hi = top, 0.0
    step = 1.0
    while True:
        s_lo = s_hi - step
        if s_lo < -740.0:
            raise ConvergenceError("u(a, lam) underflows")
        I_lo = I_hi + _segment(h, s_lo, s_hi)
        if I_lo >= a:
            break
        s_hi, I_hi = s_lo, I_lo
        step *= 2.0
    # I(s) decreases in s with dI/ds = -h(s); I(s_lo) >= a > I(s_hi)
    s, I_s = s_hi, I_hi
    for _ in range(100):
        s_new = s - (a - I_s) / h(s)
        if not s_lo < s_new < s_hi:
            s_new = 0.5 * (s_lo + s_hi)
        # integrate from the closer known end
        if abs(s_new - s_hi) <= abs(s_new - s_lo):
            I_new = I_hi + _segment(h, s_new, s_hi)
        else:
            I_new = I_lo - _segment(h, s_lo, s_new)
        if I_new >= a:
            s_lo, I_lo = s_new, I_new
        else:
            s_hi, I_hi = s_new, I_new
        s, I_s = s_new, I_new
        if abs(I_new - a) <= 1e-14 * a or s_hi - s_lo <= 1e-15 * max(1.0, abs(s)):
            return q0 + math.exp(s)
    raise ConvergenceError("Newton iteration for u(a, lam) did not converge")


def quadratic_u(beta, a, lam, alpha=0.0):
    """Closed form u(a, lam) for psi = alpha lam + beta lam^2."""
    a = np.asarray(a, dtype=float)
    lam = np.asarray(lam, dtype=float)
    k = _k_t(beta, a, alpha)
    return lam * np.exp(-alpha * a) / (1 + lam * k)


def laplace_Za(m, x, a, lam):
    """E_x[exp(-lam Z_a)] = exp(-x u(a, lam))."""
    if x == 0:
        return 1.0
    return math.exp(-x * solve_u(m, a, lam))


def extinction_prob(m, x):
    """P_x(Z_inf = 0) = exp(-x q0)."""
    c = classify(m)
    if c.conservative is False:
        raise DomainError("extinction probability needs a conservative mechanism")
    return math.exp(-x * c.q0)


def total_mass_laplace(m, x, lam):
    """E_x[exp(-lam sigma)] = exp(-x psi^{-1}(lam)), sigma = int Z."""
    if lam < 0:
        raise DomainError("lam must be non-negative")
    return math.exp(-x * psi_inverse(m, lam))


# --------------------------------------------------------------------------
# exact quadratic sampler


def _k_t(beta, t, alpha):
    t = np.asarray(t, dtype=float)
    if alpha == 0:
        return beta * t
    return beta * -np.expm1(-alpha * t) / alpha


def sample_quadratic_transition(beta, x, t, rng, size=None, alpha=0.0):
    """Exact draw of Z_t given Z_0 = x for psi = alpha lam + beta lam^2.

    N ~ Poisson(x e^{-alpha t} / k_t) and Z_t is a sum of N exponentials of
    mean k_t, where k_t = beta t when alpha = 0. The Laplace transform is
    exp(-x u(t, lam)) with u from ``quadratic_u``.
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    if not t > 0:
        raise DomainError("t must be positive")
    x = np.asarray(x, dtype=float)
    if size is not None:
        x = np.broadcast_to(x, size)
    k = float(_k_t(beta, t, alpha))
    n = rng.poisson(x * math.exp(-alpha * t) / k)
    z = rng.gamma(n, k)
    return z if z.ndim else float(z)


def quadratic_transition_cdf(beta, x, t, z, alpha=0.0):
    """CDF of Z_t for the quadratic mechanism (Poisson mixture of Gammas)."""
    from scipy import stats

    z = np.asarray(z, dtype=float)
    k = float(_k_t(beta, t, alpha))
    mu = x * math.exp(-alpha * t) / k
    nmax = int(mu + 12 * math.sqrt(mu) + 30)
    ns = np.arange(1, nmax + 1)
    w = stats.poisson.pmf(ns, mu)
    out = math.exp(-mu) + np.sum(
        w * stats.gamma.cdf(z[..., None], ns, scale=k), axis=-1)
    return np.where(z < 0, 0.0, np.minimum(out, 1.0))


# --------------------------------------------------------------------------
# paths


@dataclass
class CsbpPath:
    """One sampled path on a time grid."""

    grid: np.ndarray
    values: np.ndarray
    x0: float
    extinct_at: Optional[float] = None
    exploded: bool = False


@dataclass
class CsbpPaths:
    """A batch of paths sharing one grid; ``values`` has shape (n, len(grid))."""

    grid: np.ndarray
    values: np.ndarray
    x0: float
    method: str

    def __len__(self):
        return self.values.shape[0]

    @property
    def extinct(self):
        return self.values[:, -1] == 0

    @property
    def extinction_times(self):
        """First grid time at which each path is 0 (nan if never)."""
        zero = self.values == 0
        hit = zero.any(axis=1)
        idx = zero.argmax(axis=1)
        return np.where(hit, self.grid[idx], np.nan)

    def path(self, i):
        ext = self.extinction_times[i]
        return CsbpPath(self.grid, self.values[i], self.x0,
                        None if np.isnan(ext) else float(ext), False)


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ConfigError("grid must be increasing and start at 0")
    if np.max(np.diff(grid)) > MAX_STEP:
        raise ConfigError(f"grid step must not exceed {MAX_STEP}")
    return grid


def sample_quadratic_paths(m, x, grid, n, rng):
    """Exact paths of the quadratic CSBP on a grid (chained transitions)."""
    if not m.is_quadratic:
        raise DomainError("exact paths need pi = 0")
    grid = _check_grid(grid)
    out = np.empty((n, grid.size))
    z = np.full(n, float(x))
    out[:, 0] = z
    for i, h in enumerate(np.diff(grid), start=1):
        z = sample_quadratic_transition(m.beta, z, h, rng, alpha=m.alpha_tilde)
        out[:, i] = z
    return CsbpPaths(grid, out, float(x), "exact")


def sample_general_paths(m, x, grid, n, rng, eps=DEFAULT_EPS):
    """Euler / compound-Poisson paths for a general conservative mechanism.

    Each step adds the drift -(alpha_tilde + int_{(eps,1]} l pi) Z h, a
    Gaussian increment of variance 2 beta Z h and the sum of
    Poisson(Z h pi((eps, inf))) jumps larger than eps. Negative values are
    set to 0, which is absorbing.
    """
    if not 0 < eps <= 1:
        raise ConfigError("eps must lie in (0, 1]")
    if classify(m).conservative is False:
        raise DomainError("Euler paths need a conservative mechanism")
    grid = _check_grid(grid)
    drift = -(m.alpha_tilde + m.pi.compensator(eps))
    rate = m.pi.jump_rate(eps)
    out = np.empty((n, grid.size))
    z = np.full(n, float(x))
    out[:, 0] = z
    for i, h in enumerate(np.diff(grid), start=1):
        alive = z > 0
        za = z[alive]
        step = za + drift * za * h
        if m.beta > 0:
            step += np.sqrt(2 * m.beta * za * h) * rng.standard_normal(za.size)
        if rate > 0:
            k = rng.poisson(za * h * rate)
            step += m.pi.sample_jump_sums(eps, k, rng)
        z = np.zeros(n)
        z[alive] = np.maximum(step, 0.0)
        out[:, i] = z
    return CsbpPaths(grid, out, float(x), "euler")


def sample_general_path(m, x, grid, rng, eps=DEFAULT_EPS):
    """Single Euler path (see ``sample_general_paths``)."""
    return sample_general_paths(m, x, grid, 1, rng, eps).path(0)


def sample_paths_given_extinction(m, x, grid, n, rng, eps=DEFAULT_EPS):
    """Paths of a super-critical CSBP conditioned on extinction.

    Conditioned on extinction the process is the CSBP with mechanism
    psi_{q0}, which is sub-critical, so no explosive path is simulated.
    """
    m0 = shift(m, classify(m).q0)
    if m0.is_quadratic:
        return sample_quadratic_paths(m0, x, grid, n, rng)
    return sample_general_paths(m0, x, grid, n, rng, eps)


# --------------------------------------------------------------------------
# Girsanov martingale


@dataclass
class GirsanovWeight:
    q: float
    value: float
    integral_term: float


def _check_q(m, q):
    if q >= 0:
        return
    if not m.in_domain(q):
        raise DomainError(f"q={q!r} fails the exponential moment condition")
    if q == m.theta_inf and shift(m, q).alpha == -math.inf:
        raise DomainError(f"q={q!r} fails the exponential moment condition")


def girsanov_weights(paths, m, q):
    """M_a = exp(q x - q Z_a - psi(q) int_0^a Z) at the last grid time.

    Returns (values, integrals), vectorised over a CsbpPaths batch.
    """
    q = float(q)
    _check_q(m, q)
    integ = _trapezoid(paths.values, paths.grid, axis=1)
    if q == 0:
        return np.ones(len(paths)), integ
    psq = m.psi(q)
    val = np.exp(q * paths.x0 - q * paths.values[:, -1] - psq * integ)
    return val, integ


def girsanov_weight(path, m, q):
    """GirsanovWeight of a single path."""
    batch = CsbpPaths(path.grid, np.asarray(path.values)[None, :], path.x0, "single")
    val, integ = girsanov_weights(batch, m, q)
    return GirsanovWeight(float(q), float(val[0]), float(integ[0]))
