"""Brownian CRT fragmentation: excursion trees, Poisson cuts on the skeleton
and the root fragment.

The tree is coded by g = 2e for a normalised excursion e. Cuts fall on
the skeleton as a Poisson measure with intensity (length) x (dtheta), so
the root fragment at level theta has mass 1 / (1 + tau_theta) with tau_theta
the 1/2-stable subordinator, P(tau_theta <= x) = erfc(theta / sqrt(2x)).

Leaves are sorted by time. Leaf k owns the segment (b_k, H_k] of heights
on its root path, where H_k = g(t_k) and b_k = min g on [t_{k-1}, t_k]
(b_0 = 0). The segment hangs off the segment of par(k), the previous leaf
with a strictly smaller b.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .errors import ConfigError, DegenerateError
from .kernels import path_min_clocks, previous_smaller

MIN_GRID = 2 ** 8
HCAP = 8.0


# --------------------------------------------------------------------------
# excursions


@dataclass
class GridExcursion:
    """e(k/n), k = 0..n, of a normalised Brownian excursion."""

    n: int
    values: np.ndarray
    normalized: bool = True

    def at(self, t):
        """Linear interpolation of e at times ``t`` in [0, 1]."""
        return np.interp(t, np.linspace(0.0, 1.0, self.n + 1), self.values)


def sample_excursion(n, rng, max_tries=100):
    """Normalised excursion on the grid k/n by the Vervaat transform.

    A bridge b_k = W_k - (k/n) W_n is built from n Gaussian steps of
    variance 1/n, and cyclically shifted to start at its argmin over
    k = 0..n-1: e_j = b_{(k*+j) mod n} - b_{k*}, e_n = 0. A draw with a
    zero in the open interior (tied minimum) is rejected.
    """
    n = int(n)
    if n < MIN_GRID or n & (n - 1):
        raise ConfigError(f"grid size must be a power of two >= {MIN_GRID}")
    for _ in range(max_tries):
        w = np.concatenate(([0.0], np.cumsum(rng.standard_normal(n)) / math.sqrt(n)))
        bridge = w[:n] - np.arange(n) / n * w[n]
        k = int(np.argmin(bridge))
        e = np.empty(n + 1)
        e[:n] = np.roll(bridge, -k) - bridge[k]
        e[n] = 0.0
        if np.all(e[1:n] > 0):
            return GridExcursion(n, e)
    raise DegenerateError("could not draw an excursion with positive interior")


def coarsen(exc, n):
    """The same excursion read on the coarser grid k/n."""
    if n > exc.n or exc.n % n:
        raise ConfigError("target grid must divide the excursion grid")
    return GridExcursion(n, exc.values[:: exc.n // n].copy(), exc.normalized)


# --------------------------------------------------------------------------
# range minima


class SparseTable:
    """Static range-minimum structure over an array (O(n log n) build)."""

    def __init__(self, a):
        a = np.asarray(a, dtype=float)
        self.levels = [a]
        j = 1
        while 2 * j <= a.size:
            prev = self.levels[-1]
            self.levels.append(np.minimum(prev[:-j], prev[j:]))
            j *= 2

    def query(self, lo, hi):
        """min a[lo..hi] (inclusive), vectorised; +inf where lo > hi."""
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        ok = hi >= lo
        span = np.where(ok, hi - lo + 1, 1)
        k = np.floor(np.log2(span)).astype(np.int64)
        out = np.full(lo.shape, np.inf)
        for lev in np.unique(k[ok]):
            sel = ok & (k == lev)
            arr = self.levels[lev]
            out[sel] = np.minimum(arr[lo[sel]], arr[hi[sel] - (1 << lev) + 1])
        return out


# --------------------------------------------------------------------------
# spanned trees


@dataclass
class SpannedTree:
    """Tree spanned by the root and m leaves of the CRT coded by 2e.

    Cut points are stored per leaf segment, sorted by height, together with
    the running minimum of their clocks (``cut_ptr`` indexes leaf k's block).
    """

    leaf_times: np.ndarray
    heights: np.ndarray      # H_k = 2 e(t_k)
    branch: np.ndarray       # b_k
    parent: np.ndarray       # par(k), -1 for the first leaf
    cut_ptr: np.ndarray
    cut_height: np.ndarray
    cut_clock: np.ndarray
    cut_prefix_min: np.ndarray
    theta_max: float
    _g: np.ndarray = None
    _rmq: SparseTable = None

    @property
    def m(self):
        return self.heights.size

    def min_between(self, s, t):
        """min of g = 2e over [s, t] (s <= t)."""
        n = self._g.size - 1
        lo = np.floor(np.asarray(s) * n).astype(np.int64) + 1
        hi = np.ceil(np.asarray(t) * n).astype(np.int64) - 1
        grid = np.linspace(0.0, 1.0, n + 1)
        ends = np.minimum(np.interp(s, grid, self._g), np.interp(t, grid, self._g))
        return np.minimum(ends, self._rmq.query(lo, hi))

    def distance(self, i, j):
        """d_g between leaves i and j (sorted labels)."""
        s, t = sorted((self.leaf_times[i], self.leaf_times[j]))
        return float(self.heights[i] + self.heights[j] - 2 * self.min_between(s, t))

    def branch_points(self):
        """Heights of the m - 1 branch points (one per leaf after the first)."""
        return self.branch[1:].copy()

    def edge_lengths(self):
        """Lengths of the 2m - 1 edges: each leaf segment split at the points
        where later segments attach."""
        out = []
        for k in range(self.m):
            cuts = np.sort(self.branch[self.parent == k])
            pts = np.concatenate(([self.branch[k]], cuts, [self.heights[k]]))
            out.append(np.diff(pts))
        return np.concatenate(out)

    def path_min_clocks(self):
        """Smallest cut clock on each leaf's root path."""
        return path_min_clocks(self.branch, self.heights, self.parent, self.cut_ptr,
                               self.cut_height, self.cut_prefix_min)


def _leaf_geometry(exc, times):
    n = exc.n
    g = 2.0 * exc.values
    rmq = SparseTable(g)
    grid = np.linspace(0.0, 1.0, n + 1)
    H = np.interp(times, grid, g)
    b = np.empty_like(H)
    b[0] = 0.0
    lo = np.floor(times[:-1] * n).astype(np.int64) + 1
    hi = np.ceil(times[1:] * n).astype(np.int64) - 1
    b[1:] = np.minimum(np.minimum(H[:-1], H[1:]), rmq.query(lo, hi))
    return g, rmq, H, b


def _pack_cuts(m, leaf, height, clock, b, H):
    keep = (height > b[leaf]) & (height <= H[leaf])
    leaf, height, clock = leaf[keep], height[keep], clock[keep]
    order = np.lexsort((height, leaf))
    leaf, height, clock = leaf[order], height[order], clock[order]
    ptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.bincount(leaf, minlength=m), out=ptr[1:])
    # segmented running minimum, exact: offset integer clock ranks per block
    if not clock.size:
        return ptr, height, clock, clock.copy()
    by_clock = np.argsort(clock, kind="stable")
    rank = np.empty(clock.size, dtype=np.int64)
    rank[by_clock] = np.arange(clock.size)
    span = clock.size
    pmin_rank = np.minimum.accumulate(rank - leaf * span) + leaf * span
    return ptr, height, clock, clock[by_clock[pmin_rank]]


def build_spanned_tree(exc, m, rng, leaf_times=None, theta_max=None,
                       cut_rate=1.0, hcap=HCAP):
    """Spanned tree of ``m`` uniform leaves with Poisson cut clocks.

    With ``theta_max=None`` each edge gets one clock Exp(rate * length),
    which is all the path minima need. With a finite ``theta_max`` the cuts
    are a Poisson field on height x [0, theta_max] drawn per leaf over
    [0, hcap] before the grid enters, so trees built from coarsened copies
    of one excursion share their leaves and cuts.
    """
    if m < 2:
        raise ConfigError("need at least two leaves")
    if leaf_times is None:
        leaf_times = rng.random(m)
    raw = np.asarray(leaf_times, dtype=float)
    if raw.size != m:
        raise ConfigError("leaf_times must have length m")
    order = np.argsort(raw, kind="stable")
    times = raw[order]
    if np.any(np.diff(times) == 0):
        raise DegenerateError("two leaf times coincide; resample")
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)

    g, rmq, H, b = _leaf_geometry(exc, times)
    par = previous_smaller(b)

    if theta_max is None:
        lengths_by_leaf = []
        leaf, height, clock = [], [], []
        for k in range(m):
            att = np.sort(b[par == k])
            pts = np.concatenate(([b[k]], att, [H[k]]))
            lens = np.diff(pts)
            pos = lens > 0
            mid = 0.5 * (pts[:-1] + pts[1:])[pos]
            leaf.append(np.full(mid.size, k))
            height.append(mid)
            lengths_by_leaf.append(lens[pos])
        leaf = np.concatenate(leaf)
        height = np.concatenate(height)
        clock = rng.exponential(1.0, leaf.size) / (cut_rate * np.concatenate(lengths_by_leaf))
        theta_max = math.inf
    else:
        lam = cut_rate * hcap * theta_max
        counts = rng.poisson(lam, m)
        leaf = rank[np.repeat(np.arange(m), counts)]
        height = rng.uniform(0.0, hcap, leaf.size)
        clock = rng.uniform(0.0, theta_max, leaf.size)
        tall = np.flatnonzero(H > hcap)
        if tall.size:
            extra = rng.poisson(cut_rate * (H[tall] - hcap) * theta_max)
            leaf = np.concatenate((leaf, np.repeat(tall, extra)))
            height = np.concatenate((height, hcap + rng.random(extra.sum()) * np.repeat(H[tall] - hcap, extra)))
            clock = np.concatenate((clock, rng.uniform(0.0, theta_max, extra.sum())))
    ptr, ch, cc, pmin = _pack_cuts(m, leaf, height, clock, b, H)
    return SpannedTree(times, H, b, par, ptr, ch, cc, pmin, float(theta_max), g, rmq)


def tagged_fragment_process(tree, theta_grid):
    """Fraction of leaves whose root path carries no cut with clock <= theta."""
    theta_grid = np.asarray(theta_grid, dtype=float)
    if np.any(theta_grid > tree.theta_max):
        raise ConfigError("theta beyond the range of drawn cuts")
    c = tree.path_min_clocks()
    return np.mean(c[None, :] > theta_grid[:, None], axis=1)


def fragment_reference_cdf(theta, y):
    """P(1 / (1 + tau_theta) <= y) = erf(theta / sqrt(2 (1/y - 1)))."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        x = 1.0 / y - 1.0
        out = special.erf(theta / np.sqrt(2.0 * x))
    return np.where(y <= 0, 0.0, np.where(y >= 1, 1.0, out))


def coupled_fragments(n_grids, m, thetas, rng, cut_rate=1.0, hcap=HCAP):
    """Root-fragment fractions of one tree read on several grid sizes.

    One excursion is drawn on the finest grid and coarsened; leaves and
    cuts are shared. Returns an array of shape (len(n_grids), len(thetas)).
    """
    n_grids = [int(n) for n in n_grids]
    thetas = np.asarray(thetas, dtype=float)
    fine = sample_excursion(max(n_grids), rng)
    times = rng.random(m)
    out = np.empty((len(n_grids), thetas.size))
    cut_state = rng.bit_generator.state
    for i, n in enumerate(n_grids):
        rng.bit_generator.state = cut_state
        tree = build_spanned_tree(coarsen(fine, n), m, rng, leaf_times=times,
                                  theta_max=float(thetas.max()), cut_rate=cut_rate, hcap=hcap)
        out[i] = tagged_fragment_process(tree, thetas)
    return out


@lru_cache(maxsize=4)
def _legendre(nodes):
    return np.polynomial.legendre.leggauss(nodes)


def fraction_reference_cdf(theta, m, nodes=4000):
    """P(K <= k), k = 0..m, for the connected leaf count K.

    Given the tree and its cuts the m leaves are independent with law mu,
    so K ~ Binomial(m, Y) with Y = 1 / (1 + tau_theta); writing
    tau_theta = theta^2 / G^2 with G half-normal gives
    P(K <= k) = E[BinomCDF(k; m, G^2 / (G^2 + theta^2))].
    """
    x, w = _legendre(nodes)
    top = 12.0
    g = 0.5 * top * (x + 1.0)
    wg = 0.5 * top * w * 2.0 * stats.norm.pdf(g)
    y = g * g / (g * g + theta * theta)
    k = np.arange(m + 1)
    cdf = wg @ stats.binom.cdf(k[None, :], m, y[:, None])
    return np.minimum(cdf / wg.sum(), 1.0)


def ks_discrete(fractions, ref_cdf):
    """Sup distance between the ECDF of fractions k/m and a CDF on 0..m."""
    m = ref_cdf.size - 1
    k = np.rint(np.asarray(fractions) * m).astype(np.int64)
    ecdf = np.cumsum(np.bincount(k, minlength=m + 1)) / k.size
    return float(np.max(np.abs(ecdf - ref_cdf)))
