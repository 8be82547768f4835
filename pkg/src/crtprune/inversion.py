"""Sampling from laws known only through their Laplace transform.

The CDF is recovered on a logarithmic grid by the fixed Talbot contour
applied to F(s) / s, fitted with a monotone cubic (PCHIP) in log x, and
sampled by inverse CDF. Defective laws (mass at +inf) are handled with an
explicit finite flag. Before samples are released the fitted law must
reproduce the target transform to within ``CHECK_TOL``.
"""

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InversionError

TALBOT_M = 24
CHECK_TOL = 1e-3


def talbot_nodes(t, M=TALBOT_M):
    """Nodes s and weights w with f(t) ~ Re(sum_k w_k F(s_k)).

    Shapes are (len(t), M).
    """
    t = np.asarray(t, dtype=float)[..., None]
    theta = np.arange(M) * np.pi / M
    r = 2.0 * M / (5.0 * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = 1.0 / np.tan(theta[1:])
        sk = theta[1:] * (cot + 1j)
        sig = theta[1:] + (theta[1:] * cot - 1) * cot
    s = np.concatenate([np.ones_like(r, dtype=complex), r * sk], axis=-1)
    s[..., 0] = r[..., 0]
    w = np.empty(s.shape, dtype=complex)
    w[..., 0] = 0.5 * np.exp(r[..., 0] * t[..., 0])
    w[..., 1:] = np.exp(t * s[..., 1:]) * (1 + 1j * sig)
    return s, w * (r / M)


def talbot_cdf(laplace, x, M=TALBOT_M):
    """CDF at points x > 0 of the (possibly defective) law with transform F."""
    s, w = talbot_nodes(x, M)
    vals = np.asarray(laplace(s)) / s
    return np.real(np.sum(w * vals, axis=-1))


class LaplaceLaw:
    """Numerically inverted law on [0, inf] with a mass at +inf.

    Parameters
    ----------
    laplace : callable
        Vectorised complex-capable F(s) = E[exp(-s X); X < inf].
    p_finite : float
        F(0), the probability that X is finite.
    scale : float
        Rough scale of X used to start the grid search.
    atoms : sequence of (location, mass)
        Known point masses of X - offset, unconditional (their total is
        part of ``p_finite``). They are removed before the inversion.
    offset : float
        ``laplace`` is the transform of X - offset; samples are shifted
        back. Used for laws supported on [offset, inf].
    """

    def __init__(self, laplace, p_finite, scale=1.0, npts=400, M=TALBOT_M, atoms=(), offset=0.0):
        if not 0 < p_finite <= 1 + 1e-12:
            raise InversionError("law has no finite mass to invert")
        self.p_finite = min(float(p_finite), 1.0)
        self.atoms = [(float(a), float(w)) for a, w in atoms if w > 0]
        self.p_cont = self.p_finite - sum(w for _, w in self.atoms)
        if self.p_cont < -1e-12:
            raise InversionError("atom masses exceed the finite mass")
        self.M = M
        self.offset = float(offset)
        self.x = self.cdf = None
        if self.p_cont <= 1e-12 * self.p_finite:
            self.p_cont = 0.0
            return
        if self.atoms:
            locs = np.array([a for a, _ in self.atoms])
            ws = np.array([w for _, w in self.atoms])
            self.laplace = lambda z: (np.asarray(laplace(z))
                                      - np.sum(ws * np.exp(-np.asarray(z)[..., None] * locs), axis=-1))
        else:
            self.laplace = laplace
        lo, hi = self._range(scale)
        x = np.geomspace(lo, hi, npts)
        cdf = talbot_cdf(self.laplace, x, M) / self.p_cont
        if not np.all(np.isfinite(cdf)):
            raise InversionError("non-finite CDF values from the contour")
        if np.any(np.diff(cdf) < -1e-6) or cdf[0] > 1e-3 or cdf[-1] < 1 - 1e-3:
            raise InversionError("inverted CDF is not a distribution function")
        cdf = np.clip(np.maximum.accumulate(cdf), 0.0, 1.0)
        self.x, self.cdf = x, cdf
        keep = np.concatenate([[True], np.diff(cdf) > 1e-15])
        self._inv = PchipInterpolator(cdf[keep], np.log(x[keep]))
        self._fwd = PchipInterpolator(np.log(x), cdf)
        self._check()

    def _range(self, scale):
        # widen a log window until the CDF runs from ~0 to ~1
        f = lambda v: talbot_cdf(self.laplace, np.array([v]), self.M)[0] / self.p_cont
        lo = hi = float(scale)
        # with atoms the remainder has a positive density at 0 and the
        # contour noise (~1e-5) swamps smaller CDF values
        floor = 1e-4 if self.atoms else 1e-8
        for _ in range(60):
            if f(lo) <= floor:
                break
            lo /= 10
        else:
            raise InversionError("could not find the lower end of the support")
        for _ in range(60):
            if f(hi) >= 1 - 1e-8:
                break
            hi *= 10
        else:
            raise InversionError("could not find the upper end of the support")
        return lo, hi

    def cdf_at(self, x):
        """CDF of X given X finite."""
        x = np.asarray(x, dtype=float)
        x = x - self.offset
        out = np.zeros(x.shape)
        for a, w in self.atoms:
            out = out + np.where(x >= a, w, 0.0)
        if self.p_cont > 0:
            out = out + self.p_cont * self._cont_cdf(x)
        return np.clip(out / self.p_finite, 0.0, 1.0)

    def _cont_cdf(self, x):
        out = np.where(x <= self.x[0], 0.0,
                       np.where(x >= self.x[-1], 1.0,
                                self._fwd(np.log(np.clip(x, self.x[0], self.x[-1])))))
        return np.clip(out, 0.0, 1.0)

    def _check(self):
        # Laplace transform of the fitted law against the target
        mids = np.sqrt(self.x[1:] * self.x[:-1])
        dF = np.diff(self.cdf)
        med = float(np.exp(self._inv(0.5)))
        for lam in (0.1 / med, 1.0 / med, 10.0 / med):
            fitted = self.p_cont * (self.cdf[0] + np.sum(np.exp(-lam * mids) * dF))
            target = float(np.real(self.laplace(np.array([lam + 0j]))[0]))
            if abs(fitted - target) > CHECK_TOL:
                raise InversionError(
                    f"self-consistency failed at lam={lam:.3g}: {fitted:.6g} vs {target:.6g}")

    def sample_finite(self, u):
        """Draws of X given X finite, one per uniform in u."""
        u = np.asarray(u, dtype=float)
        out = np.full(u.shape, np.nan)
        lo = 0.0
        for a, w in self.atoms:
            hi = lo + w / self.p_finite
            out[(u >= lo) & (u < hi)] = a
            lo = hi
        rest = u >= lo
        if self.p_cont > 0:
            v = np.clip((u[rest] - lo) / (1.0 - lo), 0.0, 1.0)
            out[rest] = self._cont_inverse(v)
        else:
            out[rest] = self.atoms[-1][0]
        return out + self.offset

    def _cont_inverse(self, u):
        c0 = self.cdf[self.cdf > 0][0] if np.any(self.cdf > 0) else 1.0
        inner = np.exp(self._inv(np.clip(u, self.cdf[0], self.cdf[-1])))
        # thin lower tail below the grid: power-law extrapolation (linear
        # when atoms signal a positive density at 0)
        low = u < c0
        k = 1 if self.atoms else 2
        out = np.where(low, self.x[0] * np.maximum(u / c0, 1e-300) ** k, inner)
        return out

    def sample(self, rng, size):
        """Return (values, finite) arrays; values are nan where not finite."""
        finite = rng.random(size) < self.p_finite
        vals = np.full(size, np.nan)
        vals[finite] = self.sample_finite(rng.random(int(finite.sum())))
        return vals, finite
