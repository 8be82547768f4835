"""Branching mechanisms: evaluation, shifts, roots, the domain Theta and
classification.

A mechanism is

    psi(lam) = alpha_tilde * lam + beta * lam**2
               + int pi(dl) [exp(-lam * l) - 1 + lam * l * 1{l <= 1}]

and the shift by theta is psi_theta(lam) = psi(lam + theta) - psi(theta).
Every jump measure carries a ``tilt`` t, meaning the measure
exp(-t * l) pi0(dl), so that shifting only adds to the tilt and the group
law of shifts holds up to rounding.
"""

import configparser
import functools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import integrate, special

from . import rootfind
from .errors import ConfigError, ConvergenceError, DomainError, IntegrationError

QUAD_TOL = 1e-12
CRITICAL_TOL = 1e-12
EULER_GAMMA = np.euler_gamma


def _quad(f, a, b, **kw):
    """scipy quad with the package tolerance; raises IntegrationError."""
    kw.setdefault("epsabs", QUAD_TOL)
    kw.setdefault("epsrel", QUAD_TOL)
    kw.setdefault("limit", 200)
    with np.errstate(all="ignore"):
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(f, a, b, **kw)
            except integrate.IntegrationWarning as exc:
                # retry with a looser relative tolerance before giving up
                kw["epsrel"] = 1e-10
                try:
                    val, err = integrate.quad(f, a, b, **kw)
                except integrate.IntegrationWarning:
                    raise IntegrationError(str(exc)) from exc
    if not math.isfinite(val):
        raise IntegrationError("quadrature returned a non-finite value")
    return val


def _wrap(x, out):
    """Return a Python scalar when the input was scalar."""
    if np.ndim(x) == 0:
        out = np.asarray(out).item()
    return out


def _upper_gamma(s, x):
    """Upper incomplete gamma Gamma(s, x) for x > 0 and any real s > -3."""
    if s > 0:
        return special.gammaincc(s, x) * special.gamma(s)
    if s == 0:
        return special.exp1(x)
    return (_upper_gamma(s + 1, x) - x ** s * math.exp(-x)) / s


def _ein(x):
    """Entire exponential integral Ein(x) = int_0^x (1 - e^{-u}) / u du."""
    x = float(x)
    if x == 0:
        return 0.0
    if abs(x) < 0.5:
        term, total, k = x, 0.0, 1
        while True:
            if k > 1:
                term *= -x / k
            add = term / k
            total += add
            if abs(add) < 1e-18 * abs(total):
                return total
            k += 1
    return EULER_GAMMA + math.log(abs(x)) - special.expi(-x)


# --------------------------------------------------------------------------
# jump measures


@dataclass(frozen=True)
class LevyMeasure:
    """Jump measure of a mechanism, tilted by exp(-tilt * l).

    Subclasses implement the compensated Laplace exponent

        J(lam) = int pi(dl) [exp(-lam l) - 1 + lam l 1{l <= 1}]

    together with the quantities the samplers and classification need.
    ``exponent`` accepts real or complex scalars and arrays.
    """

    kind = "abstract"

    def tilted(self, theta):
        return replace(self, tilt=self.tilt + theta)

    @property
    def is_zero(self):
        return False

    # theta_inf of the measure and whether it belongs to Theta'
    @property
    def theta_inf(self):
        raise NotImplementedError

    @property
    def theta_inf_included(self):
        raise NotImplementedError

    def slope_at_zero(self):
        """J'(0+) = -int_{(1,inf)} l pi(dl); may be -inf."""
        raise NotImplementedError

    def conservative_if_singular(self):
        """Answer for conservativity when J'(0+) = -inf (None if unknown)."""
        return None

    def drift_correction(self, theta):
        """int_{(0,1]} l (1 - exp(-theta l)) pi(dl)."""
        raise NotImplementedError

    # pi has finite total mass (a compound Poisson jump part)
    finite_mass = False

    # J(lam) = nonlinear(lam) + linear_coef * lam; keeping the linear part
    # apart lets the mechanism add it to alpha_tilde before multiplying
    linear_coef = 0.0

    def nonlinear(self, lam):
        raise NotImplementedError

    def nonlinear_scalar(self, x):
        """Fast path of ``nonlinear`` for a real Python float."""
        return float(self.nonlinear(x))

    def nonlinear_prime(self, lam):
        raise NotImplementedError

    def exponent(self, lam):
        z = np.asarray(lam)
        return _wrap(lam, np.asarray(self.nonlinear(z)) + self.linear_coef * z)

    def exponent_prime(self, lam):
        z = np.asarray(lam)
        return _wrap(lam, np.asarray(self.nonlinear_prime(z)) + self.linear_coef)

    def jump_rate(self, eps):
        """pi((eps, inf))."""
        raise NotImplementedError

    def compensator(self, eps):
        """int_{(eps, 1]} l pi(dl)."""
        raise NotImplementedError

    def sample_jumps(self, eps, size, rng):
        """iid jumps from pi restricted to (eps, inf), normalised."""
        raise NotImplementedError

    def sample_jump_sums(self, eps, counts, rng):
        """Sum of counts[i] iid jumps for every i."""
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        if total == 0:
            return np.zeros(counts.shape)
        jumps = self.sample_jumps(eps, total, rng)
        owner = np.repeat(np.arange(counts.size), counts.ravel())
        return np.bincount(owner, weights=jumps,
                           minlength=counts.size).reshape(counts.shape)

    def params(self):
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroMeasure(LevyMeasure):
    """No jumps."""

    tilt: float = 0.0
    kind = "zero"

    @property
    def is_zero(self):
        return True

    theta_inf = -math.inf
    theta_inf_included = False

    def slope_at_zero(self):
        return 0.0

    def drift_correction(self, theta):
        return 0.0

    def nonlinear(self, lam):
        return _wrap(lam, np.zeros_like(np.asarray(lam) * 1.0))

    nonlinear_prime = nonlinear

    def nonlinear_scalar(self, x):
        return 0.0

    def jump_rate(self, eps):
        return 0.0

    def compensator(self, eps):
        return 0.0

    def sample_jumps(self, eps, size, rng):
        return np.zeros(size)

    def params(self):
        return {}


@dataclass(frozen=True)
class StableMeasure(LevyMeasure):
    """Density C l^{-1-a} e^{-tilt l} with C = c a (a-1) / Gamma(2-a).

    With zero tilt and drift ``c a / Gamma(2-a)`` this gives psi = c u^a.
    """

    c: float
    a: float
    tilt: float = 0.0
    kind = "stable"

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError("stable measure needs c > 0")
        if not 1 < self.a < 2:
            raise ConfigError("stable index must lie in (1, 2)")
        if self.tilt < 0:
            raise DomainError("stable measure cannot be tilted below 0")

    @property
    def density_const(self):
        return self.c * self.a * (self.a - 1) / special.gamma(2 - self.a)

    @property
    def big_jump_mean(self):
        """int_{(1,inf)} l pi0(dl) for the untilted measure."""
        return self.c * self.a / special.gamma(2 - self.a)

    @property
    def theta_inf(self):
        return 0.0 - self.tilt

    theta_inf_included = True

    def _corr0(self, s):
        # int_0^1 l (1 - e^{-s l}) C l^{-1-a} dl, algebraic weight at 0
        if s == 0:
            return 0.0
        f = lambda l: -np.expm1(-s * l) / l if l > 0 else s
        return self.density_const * _quad(f, 0.0, 1.0, weight="alg",
                                          wvar=(1 - self.a, 0.0))

    def drift_correction(self, theta):
        return self._corr0(self.tilt + theta) - self._corr0(self.tilt)

    @functools.cached_property
    def linear_coef(self):
        return -(self.big_jump_mean + self._corr0(self.tilt))

    def nonlinear(self, lam):
        z = np.asarray(lam)
        t, a = self.tilt, self.a
        with np.errstate(invalid="ignore", divide="ignore"):
            if t == 0:
                out = self.c * z ** a
            else:
                # c ((z + t)^a - t^a) without cancellation
                out = self.c * t ** a * np.expm1(a * np.log1p(z / t))
        return _wrap(lam, np.where(z == 0, 0.0, out))

    def nonlinear_scalar(self, x):
        t, a = self.tilt, self.a
        if x == 0:
            return 0.0
        if t == 0:
            return self.c * x ** a
        return self.c * t ** a * math.expm1(a * math.log1p(x / t))

    def nonlinear_prime(self, lam):
        z = np.asarray(lam)
        with np.errstate(divide="ignore"):
            out = self.c * self.a * (z + self.tilt) ** (self.a - 1)
        return _wrap(lam, out)

    def slope_at_zero(self):
        return self.linear_coef + float(self.nonlinear_prime(0.0))

    def jump_rate(self, eps):
        C, a, t = self.density_const, self.a, self.tilt
        if t == 0:
            return C * eps ** (-a) / a
        return C * t ** a * _upper_gamma(-a, t * eps)

    def compensator(self, eps):
        if eps >= 1:
            return 0.0
        C, a, t = self.density_const, self.a, self.tilt
        if t == 0:
            return C * (eps ** (1 - a) - 1) / (a - 1)
        return C * t ** (a - 1) * (_upper_gamma(1 - a, t * eps)
                                   - _upper_gamma(1 - a, t))

    def sample_jumps(self, eps, size, rng):
        return _pareto_rejection(eps, self.a, self.tilt, size, rng)

    def params(self):
        return {"c": self.c, "a": self.a, "tilt": self.tilt}


@dataclass(frozen=True)
class NeveuMeasure(LevyMeasure):
    """Density c l^{-2} e^{-tilt l}; the untilted case gives c u log u."""

    c: float = 1.0
    tilt: float = 0.0
    kind = "neveu"

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError("neveu measure needs c > 0")
        if self.tilt < 0:
            raise DomainError("neveu measure cannot be tilted below 0")

    @property
    def theta_inf(self):
        return 0.0 - self.tilt

    theta_inf_included = True

    def conservative_if_singular(self):
        # psi ~ c u log u near 0 and int du / (u |log u|) diverges
        return True

    def drift_correction(self, theta):
        return self.c * (_ein(self.tilt + theta) - _ein(self.tilt))

    @property
    def linear_coef(self):
        if self.tilt == 0:
            return self.c * (EULER_GAMMA - 1)
        return -self.c * float(special.exp1(self.tilt))

    def nonlinear(self, lam):
        z = np.asarray(lam)
        t = self.tilt
        with np.errstate(invalid="ignore", divide="ignore"):
            if t == 0:
                out = z * np.log(z)
            else:
                out = t * _xlog1p_minus(z / t)
        return _wrap(lam, np.where(z == 0, 0.0, self.c * out))

    def nonlinear_prime(self, lam):
        z = np.asarray(lam)
        t = self.tilt
        with np.errstate(divide="ignore"):
            out = np.log(z) + 1 if t == 0 else np.log1p(z / t)
        return _wrap(lam, self.c * out)

    def slope_at_zero(self):
        if self.tilt == 0:
            return -math.inf
        return self.linear_coef

    def jump_rate(self, eps):
        t = self.tilt
        if t == 0:
            return self.c / eps
        return self.c * t * _upper_gamma(-1, t * eps)

    def compensator(self, eps):
        if eps >= 1:
            return 0.0
        t = self.tilt
        if t == 0:
            return -self.c * math.log(eps)
        return self.c * (special.exp1(t * eps) - special.exp1(t))

    def sample_jumps(self, eps, size, rng):
        return _pareto_rejection(eps, 1.0, self.tilt, size, rng)

    def params(self):
        return {"c": self.c, "tilt": self.tilt}


def _xlog1p_minus(y):
    """(1 + y) log(1 + y) - y, with a series near 0 and the value 1 at y = -1."""
    y = np.asarray(y)
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = (1 + y) * np.log1p(y) - y
    series = np.zeros_like(y * 1.0)
    pw = y * y
    for k in range(2, 20):
        series = series + (-1) ** k * pw / (k * (k - 1))
        pw = pw * y
    out = np.where(np.abs(y) < 0.1, series, direct)
    return np.where(y == -1, 1.0, out)


def _pareto_rejection(eps, index, tilt, size, rng):
    """Sample l > eps with density prop. to l^{-1-index} e^{-tilt l}."""
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = size - filled
        batch = max(16, int(need * 1.2) + 16)
        ell = eps * rng.random(batch) ** (-1.0 / index)
        if tilt > 0:
            ell = ell[rng.random(batch) < np.exp(-tilt * (ell - eps))]
        take = min(need, ell.size)
        out[filled:filled + take] = ell[:take]
        filled += take
    return out


@dataclass(frozen=True)
class ExpMeasure(LevyMeasure):
    """Density exp(-(1 + tilt) l) dl."""

    tilt: float = 0.0
    kind = "exp"
    finite_mass = True

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError("exponential measure needs 1 + tilt > 0")

    @property
    def rate(self):
        return 1.0 + self.tilt

    @property
    def theta_inf(self):
        return -self.rate

    theta_inf_included = False

    @staticmethod
    def _m1(r):
        # int_0^1 l e^{-r l} dl
        return -(math.expm1(-r) + r * math.exp(-r)) / (r * r)

    def drift_correction(self, theta):
        return self._m1(self.rate) - self._m1(self.rate + theta)

    @property
    def linear_coef(self):
        r = self.rate
        return -(1 + r) * math.exp(-r) / (r * r)

    def nonlinear(self, lam):
        z = np.asarray(lam)
        r = self.rate
        return _wrap(lam, z * z / (r * r * (r + z)))

    def nonlinear_scalar(self, x):
        r = self.rate
        return x * x / (r * r * (r + x))

    def nonlinear_prime(self, lam):
        z = np.asarray(lam)
        r = self.rate
        return _wrap(lam, z * (2 * r + z) / (r * r * (r + z) ** 2))

    def slope_at_zero(self):
        return self.linear_coef

    def jump_rate(self, eps):
        return math.exp(-self.rate * eps) / self.rate

    def compensator(self, eps):
        if eps >= 1:
            return 0.0
        r = self.rate
        G = lambda x: (1 + r * x) * math.exp(-r * x) / (r * r)
        return G(eps) - G(1.0)

    def sample_jumps(self, eps, size, rng):
        return eps + rng.exponential(1.0 / self.rate, size)

    def sample_jump_sums(self, eps, counts, rng):
        counts = np.asarray(counts)
        return counts * eps + rng.gamma(counts, 1.0 / self.rate)

    def params(self):
        return {"tilt": self.tilt}


@dataclass(frozen=True)
class AtomsMeasure(LevyMeasure):
    """Finite sum of point masses m_i at positions l_i."""

    positions: tuple
    masses: tuple
    tilt: float = 0.0
    kind = "atoms"
    finite_mass = True

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        mas = np.asarray(self.masses, dtype=float)
        if pos.ndim != 1 or pos.shape != mas.shape or pos.size == 0:
            raise ConfigError("atoms need matching non-empty position/mass lists")
        if np.any(pos <= 0) or np.any(mas <= 0):
            raise ConfigError("atom positions and masses must be positive")
        object.__setattr__(self, "positions", tuple(pos.tolist()))
        object.__setattr__(self, "masses", tuple(mas.tolist()))

    @property
    def _pos(self):
        return np.asarray(self.positions)

    @property
    def _w(self):
        return np.asarray(self.masses) * np.exp(-self.tilt * self._pos)

    theta_inf = -math.inf
    theta_inf_included = False

    def drift_correction(self, theta):
        l, w = self._pos, self._w
        small = l <= 1
        return float(np.sum(w[small] * l[small] * -np.expm1(-theta * l[small])))

    @property
    def linear_coef(self):
        l, w = self._pos, self._w
        return -float(np.sum(w[l > 1] * l[l > 1]))

    def nonlinear(self, lam):
        z = np.asarray(lam)[..., None]
        l, w = self._pos, self._w
        return _wrap(lam, np.sum(w * (np.expm1(-z * l) + z * l), axis=-1))

    def nonlinear_prime(self, lam):
        z = np.asarray(lam)[..., None]
        l, w = self._pos, self._w
        return _wrap(lam, np.sum(w * l * -np.expm1(-z * l), axis=-1))

    def slope_at_zero(self):
        return self.linear_coef

    def jump_rate(self, eps):
        return float(self._w[self._pos > eps].sum())

    def compensator(self, eps):
        l, w = self._pos, self._w
        sel = (l > eps) & (l <= 1)
        return float(np.sum(w[sel] * l[sel]))

    def sample_jumps(self, eps, size, rng):
        l, w = self._pos, self._w
        sel = l > eps
        p = w[sel] / w[sel].sum()
        return rng.choice(l[sel], size=size, p=p)

    def params(self):
        return {"positions": list(self.positions), "masses": list(self.masses),
                "tilt": self.tilt}


@dataclass(frozen=True)
class TabulatedMeasure(LevyMeasure):
    """Piecewise-linear density on a grid, zero outside it.

    Real scalar evaluation uses adaptive quadrature split at 1; complex
    or array evaluation uses a composite Gauss-Legendre rule on the grid.
    """

    ell: tuple
    density: tuple
    rule: str = "linear"
    tilt: float = 0.0
    kind = "tabulated"

    def __post_init__(self):
        ell = np.asarray(self.ell, dtype=float)
        dens = np.asarray(self.density, dtype=float)
        if ell.ndim != 1 or ell.shape != dens.shape or ell.size < 2:
            raise ConfigError("tabulated density needs matching grids of size >= 2")
        if np.any(ell <= 0) or np.any(np.diff(ell) <= 0):
            raise ConfigError("tabulated grid must be positive and increasing")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ConfigError("tabulated density must be finite and non-negative")
        if self.rule != "linear":
            raise ConfigError(f"unknown integration rule {self.rule!r}")
        object.__setattr__(self, "ell", tuple(ell.tolist()))
        object.__setattr__(self, "density", tuple(dens.tolist()))

    def _dens(self, l):
        l = np.asarray(l, dtype=float)
        d = np.interp(l, self.ell, self.density, left=0.0, right=0.0)
        return d * np.exp(-self.tilt * l)

    @property
    def _truncated(self):
        return self.density[-1] > 0

    @property
    def theta_inf(self):
        # a table that is positive at its last knot says nothing about the tail
        return None if self._truncated else -math.inf

    theta_inf_included = False

    @functools.cached_property
    def _knots(self):
        k = np.asarray(self.ell)
        if k[0] < 1 < k[-1]:
            k = np.sort(np.append(k, 1.0))
        return k

    @functools.cached_property
    def _gl(self):
        x, w = np.polynomial.legendre.leggauss(16)
        k = self._knots
        lo, hi = k[:-1, None], k[1:, None]
        nodes = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
        weights = (0.5 * (hi - lo) * w).ravel()
        return nodes, weights * self._dens(nodes)

    def _split_quad(self, g):
        lo, hi = self.ell[0], self.ell[-1]
        pts = list(self.ell[1:-1])
        total = 0.0
        for a, b in ((lo, min(hi, 1.0)), (max(lo, 1.0), hi)):
            if b > a:
                inner = [p for p in pts if a < p < b]
                total += _quad(lambda l: g(l) * self._dens(l), a, b,
                               points=inner or None)
        return total

    def exponent(self, lam):
        z = np.asarray(lam)
        if np.iscomplexobj(z) or z.ndim > 0:
            l, w = self._gl
            zz = z[..., None]
            out = np.sum(w * (np.expm1(-zz * l) + zz * l * (l <= 1)), axis=-1)
            return _wrap(lam, out)
        lam = float(lam)
        if lam == 0:
            return 0.0
        return self._split_quad(lambda l: math.expm1(-lam * l) + lam * l * (l <= 1))

    def exponent_prime(self, lam):
        z = np.asarray(lam)
        if np.iscomplexobj(z):
            l, w = self._gl
            zz = z[..., None]
            return _wrap(lam, np.sum(w * l * ((l <= 1) - np.exp(-zz * l)), axis=-1))
        # central differences, step 1e-6 max(1, |lam|)
        h = 1e-6 * np.maximum(1.0, np.abs(z))
        out = (np.vectorize(self.exponent)(z + h)
               - np.vectorize(self.exponent)(z - h)) / (2 * h)
        return _wrap(lam, out)

    @functools.cached_property
    def linear_coef(self):
        if self.ell[-1] <= 1:
            return 0.0
        return -self._split_quad(lambda l: l * (l > 1))

    def slope_at_zero(self):
        return self.linear_coef

    def nonlinear(self, lam):
        z = np.asarray(lam)
        return _wrap(lam, np.asarray(self.exponent(lam)) - self.linear_coef * z)

    def nonlinear_prime(self, lam):
        return _wrap(lam, np.asarray(self.exponent_prime(lam)) - self.linear_coef)

    def drift_correction(self, theta):
        return self._split_quad(lambda l: l * -math.expm1(-theta * l) * (l <= 1))

    @functools.cached_property
    def _fine(self):
        # fine tabulation of the tilted density for sampling
        k = self._knots
        grid = np.unique(np.concatenate(
            [np.linspace(a, b, 65) for a, b in zip(k[:-1], k[1:])]))
        return grid, self._dens(grid)

    def _restricted_cdf(self, eps):
        grid, dens = self._fine
        if eps > grid[0]:
            grid = np.concatenate([[eps], grid[grid > eps]])
            dens = self._dens(grid)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1])
                                               * np.diff(grid))])
        return grid, dens, cum

    def jump_rate(self, eps):
        if eps >= self.ell[-1]:
            return 0.0
        return self._split_quad(lambda l: float(l > eps))

    def compensator(self, eps):
        if eps >= 1:
            return 0.0
        return self._split_quad(lambda l: l * (eps < l <= 1))

    def sample_jumps(self, eps, size, rng):
        grid, dens, cum = self._restricted_cdf(eps)
        u = rng.random(size) * cum[-1]
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, grid.size - 2)
        # invert the trapezoid piece exactly (linear density on the cell)
        d0, d1 = dens[i], dens[i + 1]
        h = grid[i + 1] - grid[i]
        r = u - cum[i]
        slope = (d1 - d0) / h
        with np.errstate(invalid="ignore", divide="ignore"):
            x_lin = np.where(np.abs(slope) > 1e-300,
                             (-d0 + np.sqrt(np.maximum(d0 * d0 + 2 * slope * r, 0)))
                             / np.where(slope == 0, 1, slope),
                             r / np.where(d0 > 0, d0, 1))
        return grid[i] + np.clip(x_lin, 0, h)

    def params(self):
        return {"ell": list(self.ell), "density": list(self.density),
                "rule": self.rule, "tilt": self.tilt}


# --------------------------------------------------------------------------
# mechanisms


@dataclass(frozen=True)
class BranchingMechanism:
    """psi with drift ``alpha_tilde``, Brownian coefficient ``beta`` and
    jump measure ``pi``."""

    alpha_tilde: float
    beta: float
    pi: LevyMeasure = field(default_factory=ZeroMeasure)

    def __post_init__(self):
        object.__setattr__(self, "alpha_tilde", float(self.alpha_tilde))
        object.__setattr__(self, "beta", float(self.beta))
        if not self.beta >= 0:
            raise ConfigError("beta must be non-negative")
        if self.beta == 0 and self.pi.is_zero:
            raise ConfigError("need beta > 0 or a non-zero jump measure")

    @property
    def is_quadratic(self):
        """True when pi = 0, so psi = alpha_tilde lam + beta lam^2."""
        return self.pi.is_zero

    def psi(self, lam):
        """psi(lam) without domain checks; accepts complex arrays."""
        if type(lam) is float:
            if lam == 0:
                return 0.0
            return ((self.alpha_tilde + self.pi.linear_coef) * lam
                    + self.beta * lam * lam + self.pi.nonlinear_scalar(lam))
        z = np.asarray(lam)
        lin = self.alpha_tilde + self.pi.linear_coef
        out = lin * z + self.beta * z * z + np.asarray(self.pi.nonlinear(z))
        out = np.where(z == 0, 0.0, out)
        return _wrap(lam, out)

    def dpsi(self, lam):
        z = np.asarray(lam)
        lin = self.alpha_tilde + self.pi.linear_coef
        out = lin + 2 * self.beta * z + np.asarray(self.pi.nonlinear_prime(z))
        return _wrap(lam, out)

    @property
    def alpha(self):
        """psi'(0+), possibly -inf."""
        lin = self.alpha_tilde + self.pi.linear_coef
        return lin + (self.pi.slope_at_zero() - self.pi.linear_coef)

    @property
    def theta_inf(self):
        """Infimum of Theta' (None when a tabulated tail is undetermined)."""
        return self.pi.theta_inf

    @property
    def theta_inf_included(self):
        return self.pi.theta_inf_included

    def in_domain(self, theta):
        """Whether theta lies in Theta'."""
        ti = self.theta_inf
        if ti is None:
            return theta >= 0
        return theta > ti or (theta == ti and self.theta_inf_included)

    def describe(self):
        return {"alpha_tilde": self.alpha_tilde, "beta": self.beta,
                "pi": {"kind": self.pi.kind, **self.pi.params()}}


def compound_poisson_part(m):
    """(d, rate) with psi(lam) = d lam - int (1 - e^{-lam l}) pi(dl), or None.

    Only defined for beta = 0 and a jump measure of finite mass ``rate``;
    such mechanisms give total masses with atoms.
    """
    if m.beta > 0 or not m.pi.finite_mass:
        return None
    return m.alpha_tilde + m.pi.compensator(0.0), m.pi.jump_rate(0.0)


def quadratic_mechanism(beta=0.5, alpha=0.0):
    """psi(u) = alpha u + beta u^2."""
    return BranchingMechanism(alpha, beta)


def stable_mechanism(c=1.0, a=1.5):
    """psi(u) = c u^a with a in (1, 2)."""
    pi = StableMeasure(c, a)
    return BranchingMechanism(pi.big_jump_mean, 0.0, pi)


def log_mechanism():
    """psi(u) = (u + 1/e) log(u + 1/e) + 1/e, a tilted Neveu mechanism."""
    t = math.exp(-1.0)
    return BranchingMechanism(float(special.exp1(t)), 0.0, NeveuMeasure(1.0, t))


def exp_jump_mechanism():
    """psi(u) = u - 1 + 1/(1 + u): drift 2/e and jump density e^{-l}."""
    return BranchingMechanism(2.0 / math.e, 0.0, ExpMeasure())


PRESETS = {
    "quadratic": quadratic_mechanism,
    "stable": stable_mechanism,
    "log": log_mechanism,
    "exp-jumps": exp_jump_mechanism,
}


# --------------------------------------------------------------------------
# operations


def _check_domain(m, lam):
    if not m.in_domain(lam):
        raise DomainError(f"{lam!r} lies below the domain boundary {m.theta_inf!r}")


def eval_psi(m, lam):
    """psi(lam) with a domain check; psi(0) = 0 exactly."""
    lam = float(lam)
    if lam == 0:
        return 0.0
    if lam < 0:
        _check_domain(m, lam)
    val = m.psi(lam)
    if not math.isfinite(val):
        raise IntegrationError(f"psi({lam!r}) is not finite")
    return float(val)


def eval_dpsi(m, lam):
    lam = float(lam)
    if lam < 0:
        _check_domain(m, lam)
    if lam == 0:
        return m.alpha
    return float(m.dpsi(lam))


def shift(m, theta):
    """The mechanism psi_theta(lam) = psi(lam + theta) - psi(theta)."""
    theta = float(theta)
    if theta == 0:
        return m
    _check_domain(m, theta)
    alpha = m.alpha_tilde + 2 * m.beta * theta + m.pi.drift_correction(theta)
    pi = m.pi if m.pi.is_zero else m.pi.tilted(theta)
    return BranchingMechanism(alpha, m.beta, pi)


def _conservative(m):
    """psi'(0+) > -inf implies conservative; otherwise ask the family,
    then fall back on the decay of u / |psi(u)| along log u."""
    if m.alpha > -math.inf:
        return True
    known = m.pi.conservative_if_singular()
    if known is not None:
        return known
    h = lambda s: math.exp(s) / abs(m.psi(math.exp(s)))
    s1, s2 = math.log(1e-150), math.log(1e-300)
    ratio = (h(s2) * abs(s2)) / (h(s1) * abs(s1))
    if ratio >= 0.5:
        return True
    if ratio < 1e-3:
        return False
    return None


@dataclass(frozen=True)
class MechanismClassification:
    """Criticality, roots and the domain Theta of a mechanism.

    ``None`` in a field means the numeric test was inconclusive.
    """

    criticality: str
    alpha: float
    q0: float
    qstar: float
    conservative: Optional[bool]
    theta_inf: Optional[float]
    theta_inf_in_domain: Optional[bool]
    theta_inf_in_theta: Optional[bool]
    bar_theta_inf: Optional[float]

    def to_json(self):
        def enc(v):
            if v is None:
                return "undetermined"
            if isinstance(v, float) and not math.isfinite(v):
                return "inf" if v > 0 else "-inf"
            return v
        return {k: enc(v) for k, v in self.__dict__.items()}


@functools.lru_cache(maxsize=512)
def classify(m):
    """Classify m: criticality, q0, q*, theta_inf and bar theta_inf."""
    alpha = m.alpha
    if abs(alpha) <= CRITICAL_TOL:
        crit = "critical"
    else:
        crit = "sub" if alpha > 0 else "super"
    q0 = qstar = 0.0
    if crit == "super":
        lo = 1e-300 if alpha == -math.inf else 0.0
        hi = rootfind.expand_up(lambda q: m.dpsi(q), 0.0, 1.0)
        qstar = rootfind.brent(lambda q: m.dpsi(q), lo, hi)
        hi = rootfind.expand_up(lambda q: m.psi(q), 0.0, 2 * qstar)
        q0 = rootfind.brent(lambda q: m.psi(q), qstar, hi)
    ti = m.theta_inf
    in_dom = None if ti is None else (m.theta_inf_included if ti > -math.inf else False)
    in_theta = None
    if in_dom is False:
        in_theta = False
    elif in_dom:
        in_theta = _conservative(shift(m, ti)) if ti != 0 else _conservative(m)
    bar_inf = None
    if crit == "critical":
        if ti is None:
            bar_inf = None
        elif ti == -math.inf or not in_dom:
            bar_inf = math.inf
        else:
            bar_inf = psi_inverse(m, eval_psi(m, ti), _cls=(crit, q0, qstar))
    return MechanismClassification(crit, float(alpha), q0, qstar, _conservative(m),
                                   ti, in_dom, in_theta, bar_inf)


def psi_inverse(m, lam, _cls=None):
    """Largest r >= 0 with psi(r) = lam."""
    lam = float(lam)
    if lam < 0:
        raise DomainError("psi_inverse needs lam >= 0")
    if _cls is None:
        c = classify(m)
        crit, q0, qstar = c.criticality, c.q0, c.qstar
    else:
        crit, q0, qstar = _cls
    if lam == 0:
        return q0
    if m.is_quadratic:
        return _quadratic_inverse(m.alpha_tilde, m.beta, lam)
    lo = qstar
    hi = rootfind.expand_up(lambda r: m.psi(r), lam, max(2 * lo, 1.0))
    return rootfind.brent(lambda r: m.psi(r) - lam, lo, hi)


def _quadratic_inverse(a, b, lam):
    """Largest root of a r + b r^2 = lam, written to avoid cancellation."""
    lam = np.asarray(lam, dtype=float)
    disc = np.sqrt(a * a + 4 * b * lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        if a >= 0:
            r = np.where(lam == 0, 0.0, 2 * lam / (a + disc))
        else:
            r = (disc - a) / (2 * b)
    return _wrap(lam, r)


def psi_inverse_vec(m, lam):
    """Vectorised psi_inverse by bisection (closed form when pi = 0)."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("psi_inverse needs lam >= 0")
    if m.is_quadratic:
        return _quadratic_inverse(m.alpha_tilde, m.beta, lam)
    c = classify(m)
    top = float(lam.max()) if lam.size else 0.0
    hi = rootfind.expand_up(lambda r: m.psi(r), top, max(2 * c.qstar, 1.0))
    out = rootfind.bisect_vec(lambda r: m.psi(r), lam, c.qstar, hi)
    return np.where(lam == 0, c.q0, out)


def _require_critical(m):
    c = classify(m)
    if c.criticality != "critical":
        raise DomainError("operation requires a critical mechanism")
    return c


def bar_theta(m, theta):
    """The non-negative theta_bar with psi(theta_bar) = psi(theta)."""
    _require_critical(m)
    theta = float(theta)
    if theta >= 0:
        return theta
    if theta > -1e-15:
        # psi is even to second order at a critical 0; the odd correction is below eps
        return -theta
    return psi_inverse(m, eval_psi(m, theta))


def check_theta(m, r):
    """The negative r_check with psi(r_check) = psi(r), for 0 < r < bar theta_inf."""
    c = _require_critical(m)
    r = float(r)
    if r == 0:
        return -0.0
    if r < 0:
        raise DomainError("check_theta needs r > 0")
    if c.bar_theta_inf is None:
        raise DomainError("bar theta_inf is undetermined for this mechanism")
    if r >= c.bar_theta_inf:
        raise DomainError(f"r={r!r} is not below bar theta_inf={c.bar_theta_inf!r}")
    y = m.psi(r)
    f = lambda q: m.psi(q) - y
    ti = c.theta_inf
    if ti == -math.inf:
        lo = -max(r, 1.0)
        for _ in range(rootfind.MAX_EXPANSIONS):
            if f(lo) >= 0:
                break
            lo *= 2
        else:
            raise ConvergenceError("could not bracket the negative root")
    elif c.theta_inf_in_domain:
        lo = ti
    else:
        lo = ti / 2
        for _ in range(rootfind.MAX_EXPANSIONS):
            if f(lo) >= 0:
                break
            lo = ti + (lo - ti) / 2
        else:
            raise ConvergenceError("could not bracket the negative root")
    # psi is decreasing on (theta_inf, 0]; f(lo) >= 0 >= f(0)
    return rootfind.brent(f, lo, 0.0)


# --------------------------------------------------------------------------
# mechanism files

_MEASURES = {
    "zero": ZeroMeasure,
    "stable": StableMeasure,
    "neveu": NeveuMeasure,
    "exp": ExpMeasure,
    "atoms": AtomsMeasure,
    "tabulated": TabulatedMeasure,
}


def _parse_params(text):
    """Parse ``k=v, k=v`` where a value may be a space separated list."""
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"bad pi.params entry {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        vals = v.split()
        try:
            nums = [float(x) for x in vals]
        except ValueError:
            out[k] = v
            continue
        out[k] = nums if len(nums) > 1 or k in ("positions", "masses", "ell", "density") else nums[0]
    return out


def mechanism_from_mapping(d):
    """Build a mechanism from the key-value fields of a mechanism file."""
    if "preset" in d:
        name = d["preset"].strip()
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}")
        kw = _parse_params(d.get("preset.params", ""))
        return PRESETS[name](**kw)
    try:
        alpha = float(d["alpha_tilde"])
        beta = float(d["beta"])
    except KeyError as exc:
        raise ConfigError(f"missing field {exc.args[0]}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kind = d.get("pi.kind", "zero").strip()
    if kind not in _MEASURES:
        raise ConfigError(f"unknown pi.kind {kind!r}")
    params = _parse_params(d.get("pi.params", ""))
    for key in ("positions", "masses", "ell", "density"):
        if key in params:
            params[key] = tuple(params[key])
    try:
        pi = _MEASURES[kind](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind}: {exc}") from None
    return BranchingMechanism(alpha, beta, pi)


def load_mechanism(spec):
    """Load a mechanism from a file path or a preset name."""
    if spec in PRESETS:
        return PRESETS[spec]()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(spec) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read mechanism file {spec!r}: {exc}") from None
    if not any(line.lstrip().startswith("[") for line in text.splitlines()):
        text = "[mechanism]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    section = parser[parser.sections()[0]]
    return mechanism_from_mapping(dict(section))


def dump_mechanism(m):
    """Mechanism file text for m (round-trips through load_mechanism)."""
    lines = [f"alpha_tilde = {m.alpha_tilde!r}", f"beta = {m.beta!r}",
             f"pi.kind = {m.pi.kind}"]
    parts = []
    for k, v in m.pi.params().items():
        if isinstance(v, (list, tuple)):
            v = " ".join(repr(float(x)) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        parts.append(f"{k}={v}")
    lines.append("pi.params = " + ", ".join(parts))
    return "\n".join(lines) + "\n"


def psi_inverse_complex(m, w, steps=32, tol=1e-10):
    """Analytic continuation of psi^{-1} to complex arguments.

    Starts from the real root at |w| and follows the arc |w| e^{i tau arg w}
    with a few Newton iterations per step. Used by Laplace inversion, whose
    contour never crosses the negative real axis.
    """
    w = np.asarray(w, dtype=complex)
    if m.is_quadratic:
        a, b = m.alpha_tilde, m.beta
        return (np.sqrt(a * a + 4 * b * w) - a) / (2 * b)
    mod, arg = np.abs(w), np.angle(w)
    r = np.asarray(psi_inverse_vec(m, mod), dtype=complex)
    for tau in np.linspace(0, 1, steps + 1)[1:]:
        target = mod * np.exp(1j * tau * arg)
        for _ in range(4):
            r = r - (m.psi(r) - target) / m.dpsi(r)
    for _ in range(50):
        step = (m.psi(r) - w) / m.dpsi(r)
        r = r - step
        if np.all(np.abs(step) <= 1e-15 * (1 + np.abs(r))):
            break
    resid = np.abs(m.psi(r) - w)
    if not np.all(resid <= tol * (1 + np.abs(w))):
        raise ConvergenceError("complex continuation of psi^{-1} failed")
    return r
