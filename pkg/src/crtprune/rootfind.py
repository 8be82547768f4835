"""Bracketing and root-finding helpers for monotone scalar functions."""

import math

import numpy as np
from scipy import optimize

from .errors import ConvergenceError

MAX_ITER = 200
# doubling schedule for bracket expansion: at most this many doublings
MAX_EXPANSIONS = 1100


def brent(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps):
    """Brent's hybrid bisection/secant method on a sign-changing bracket."""
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise ConvergenceError(f"no sign change on [{lo!r}, {hi!r}]")
    try:
        root, info = optimize.brentq(f, lo, hi, xtol=xtol, rtol=rtol,
                                     maxiter=MAX_ITER, full_output=True,
                                     disp=False)
    except (ValueError, RuntimeError) as exc:
        raise ConvergenceError(str(exc)) from exc
    if not info.converged:
        raise ConvergenceError(f"brentq did not converge: {info.flag}")
    return root


def expand_up(f, target, start):
    """Return hi >= start with f(hi) >= target for increasing f, by doubling."""
    hi = max(start, 1.0)
    for _ in range(MAX_EXPANSIONS):
        v = f(hi)
        if v >= target:
            return hi
        hi *= 2.0
        if not math.isfinite(hi):
            break
    raise ConvergenceError(f"could not bracket level {target!r} from above")


def bisect_vec(f, target, lo, hi, increasing=True, iters=MAX_ITER):
    """Vectorised bisection solving f(x) = target elementwise on [lo, hi].

    ``lo`` and ``hi`` must already bracket each root. Iteration stops once
    all intervals have collapsed to adjacent floats.
    """
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        done = (mid <= lo) | (mid >= hi)
        if np.all(done):
            break
        val = f(mid)
        below = val < target if increasing else val > target
        lo = np.where(below & ~done, mid, lo)
        hi = np.where(~below & ~done, mid, hi)
    return 0.5 * (lo + hi)
