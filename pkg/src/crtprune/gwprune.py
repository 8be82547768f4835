"""Galton-Watson trees with exponential mark clocks on nodes and edges, the
pruned tree process and the discrete special Markov property.

A node is kept at level theta when its parent is kept, the edge above it
has clock > theta and the parent's node clock is > theta. The root is
always kept. With edge clocks Exp(rate) a child survives with probability
p = exp(-rate * theta), and the kept tree is again Galton-Watson with
generating function f(1 - p + p s).
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import special, stats

from .errors import ConfigError, SizeError

DEPTH_CAP = 30
NODE_BUDGET = 10_000_000


def offspring_law(law, param=None):
    """Probability vector for a named family or an explicit vector.

    ``binary-critical``: p0 = p2 = 1/2. ``geometric``: p_k = (1 - s) s^k,
    truncated where the tail drops below 1e-16 and renormalised.
    """
    if isinstance(law, str):
        if law == "binary-critical":
            return np.array([0.5, 0.0, 0.5])
        if law == "geometric":
            s = 0.5 if param is None else float(param)
            if not 0 <= s < 1:
                raise ConfigError("geometric parameter must lie in [0, 1)")
            kmax = 1 if s == 0 else int(math.ceil(math.log(1e-16) / math.log(s))) + 1
            p = (1 - s) * s ** np.arange(kmax + 1)
            return p / p.sum()
        raise ConfigError(f"unknown offspring law {law!r}")
    p = np.asarray(law, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
        raise ConfigError("offspring law must be a probability vector")
    return p


def pgf(law, s):
    """Generating function f(s) = sum_k p_k s^k."""
    return np.polynomial.polynomial.polyval(s, law)


def thinned_offspring_law(law, p, node_keep=1.0):
    """Law of the kept children: f_p(s) = f(1 - p + p s).

    ``node_keep`` is the probability that the parent is not node-marked;
    a marked parent keeps no children.
    """
    law = offspring_law(law)
    if not 0 <= p <= 1:
        raise ConfigError("retention p must lie in [0, 1]")
    K = law.size
    k = np.arange(K)[:, None]
    j = np.arange(K)[None, :]
    binom = np.where(j <= k, special.comb(k, j) * p ** j * (1 - p) ** np.maximum(k - j, 0), 0.0)
    out = law @ binom
    out = node_keep * out
    out[0] += 1 - node_keep
    return out


def extinction_probability(law, depth=None):
    """Smallest root of f(s) = s, or P(extinct by ``depth``) = f^depth(0)."""
    law = offspring_law(law)
    if depth is None:
        # iteration converges only like 1/n at criticality
        if law.size > 1 and law[1] == 1.0:
            return 0.0
        if law @ np.arange(law.size) <= 1.0 + 1e-12:
            return 1.0
    s = 0.0
    for _ in range(depth if depth is not None else 100000):
        s_new = pgf(law, s)
        if depth is None and abs(s_new - s) < 1e-15:
            return float(s_new)
        s = s_new
    return float(s)


# --------------------------------------------------------------------------
# trees


@dataclass
class MarkedGWTree:
    """A forest stored as flat arrays in generation order.

    Parents always precede children. ``tree_id`` tells which tree of the
    forest a node belongs to; a single tree has all ids 0.
    """

    parent: np.ndarray       # -1 for roots
    depth: np.ndarray
    offspring: np.ndarray    # recorded children (0 at the depth cap)
    tree_id: np.ndarray
    node_size: np.ndarray    # Delta, 0 means never marked
    node_clock: np.ndarray   # Exp(Delta), inf when Delta = 0
    edge_clock: np.ndarray   # Exp(edge rate) for the edge above, inf at roots
    depth_cap: int
    truncated: np.ndarray    # per tree: a node at the cap has children, P = 1 - f^(cap+1)(0)

    @property
    def n_trees(self):
        return self.truncated.size

    def __len__(self):
        return self.parent.size


@dataclass
class PrunedForestStat:
    theta: float
    root_component_size: int
    total_progeny: int


def _node_sizes(node_size, n, rng):
    if node_size is None:
        return np.zeros(n)
    if callable(node_size):
        return np.asarray(node_size(rng, n), dtype=float)
    return np.full(n, float(node_size))


def sample_gw_forest(law, n_trees, rng, depth_cap=DEPTH_CAP, edge_rate=1.0,
                     node_size=None, budget=NODE_BUDGET):
    """Sample ``n_trees`` independent marked GW trees, generation by generation.

    ``edge_rate`` is 2 beta times the edge length; ``node_size`` is None
    (all Delta = 0), a constant or a callable ``(rng, n) -> sizes``.
    """
    law = offspring_law(law)
    cum = np.cumsum(law)
    parents = [np.full(n_trees, -1, dtype=np.int64)]
    tids = [np.arange(n_trees, dtype=np.int64)]
    counts = []
    total = n_trees
    gen_start = 0
    truncated = np.zeros(n_trees, bool)
    for d in range(depth_cap + 1):
        size = parents[-1].size
        k = np.searchsorted(cum, rng.random(size), side="right")
        k = np.minimum(k, law.size - 1)
        if d == depth_cap:
            truncated[tids[-1][k > 0]] = True
            counts.append(np.zeros(size, dtype=np.int64))
            break
        counts.append(k)
        nxt = int(k.sum())
        if nxt == 0:
            break
        total += nxt
        if total > budget:
            raise SizeError(f"node budget {budget} exceeded")
        idx = np.arange(gen_start, gen_start + size)
        parents.append(np.repeat(idx, k))
        tids.append(np.repeat(tids[-1], k))
        gen_start += size
    parent = np.concatenate(parents)
    n = parent.size
    depth = np.concatenate([np.full(p.size, d) for d, p in enumerate(parents)])
    sizes = _node_sizes(node_size, n, rng)
    with np.errstate(divide="ignore"):
        node_clock = np.where(sizes > 0, rng.exponential(1.0, n) / np.where(sizes > 0, sizes, 1), np.inf)
    edge_clock = rng.exponential(1.0 / edge_rate, n)
    edge_clock[parent < 0] = np.inf
    return MarkedGWTree(parent, depth, np.concatenate(counts), np.concatenate(tids),
                        sizes, node_clock, edge_clock, depth_cap, truncated)


def sample_gw(law, rng, depth_cap=DEPTH_CAP, **kw):
    """A single marked GW tree."""
    return sample_gw_forest(law, 1, rng, depth_cap=depth_cap, **kw)


def kept_mask(tree, theta):
    """Nodes of the root components at level theta."""
    keep = np.ones(len(tree), bool)
    child = tree.parent >= 0
    ok = (tree.edge_clock > theta)
    par = tree.parent
    # parents precede children, so a single ordered sweep per generation
    for d in range(1, int(tree.depth.max()) + 1 if len(tree) else 0):
        sel = np.flatnonzero(tree.depth == d)
        p = par[sel]
        keep[sel] = keep[p] & ok[sel] & (tree.node_clock[p] > theta)
    keep[~child] = True
    return keep


def component_sizes(tree, theta):
    """Root component size of every tree at level theta."""
    return np.bincount(tree.tree_id[kept_mask(tree, theta)], minlength=tree.n_trees)


def total_progeny(tree):
    return np.bincount(tree.tree_id, minlength=tree.n_trees)


def prune_at(tree, theta):
    """PrunedForestStat for a single tree (tree 0 of the forest)."""
    if theta < 0:
        raise ConfigError("theta must be non-negative")
    sizes = component_sizes(tree, theta)
    return PrunedForestStat(float(theta), int(sizes[0]), int(total_progeny(tree)[0]))


# --------------------------------------------------------------------------
# special Markov property


def _enumerate_trees(law, depth):
    """All plane trees of depth <= ``depth`` with their exact probabilities.

    Trees are nested tuples of children; nodes at the cap are leaves.
    """
    if depth == 0:
        return {(): Fraction(1)}
    sub = _enumerate_trees(law, depth - 1)
    out = {}
    for k, pk in enumerate(law):
        if pk == 0:
            continue
        level = {(): pk}
        for _ in range(k):
            nxt = {}
            for tup, pr in level.items():
                for t, q in sub.items():
                    key = tup + (t,)
                    nxt[key] = nxt.get(key, 0) + pr * q
            level = nxt
        for key, pr in level.items():
            out[key] = out.get(key, 0) + pr
    return out


def _prune_tree(tree, p):
    """Law of the kept plane tree when each edge survives with probability p."""
    level = {(): Fraction(1)}
    for child in tree:
        sub = _prune_tree(child, p)
        nxt = {}
        for tup, pr in level.items():
            nxt[tup] = nxt.get(tup, 0) + pr * (1 - p)
            for t, q in sub.items():
                key = tup + (t,)
                nxt[key] = nxt.get(key, 0) + pr * p * q
        level = nxt
    return level


def enumeration_tv(law, p, depth=3):
    """Exact total variation between pruned-GW and thinned-GW laws on
    plane trees of depth <= ``depth`` (rational arithmetic)."""
    law = offspring_law(law)
    if law.size > 3:
        raise ConfigError("exact enumeration is limited to at most 2 children")
    fl = [Fraction(float(x)) for x in law]
    fp = Fraction(float(p))
    pruned = {}
    for t, pr in _enumerate_trees(fl, depth).items():
        for s, q in _prune_tree(t, fp).items():
            pruned[s] = pruned.get(s, 0) + pr * q
    K = len(fl)
    thin = [sum(fl[k] * math.comb(k, j) * fp ** j * (1 - fp) ** (k - j)
                for k in range(j, K)) for j in range(K)]
    direct = _enumerate_trees(thin, depth)
    keys = set(pruned) | set(direct)
    tv = sum(abs(pruned.get(k, 0) - direct.get(k, 0)) for k in keys) / 2
    return float(tv), len(keys)


def chi_square_two_sample(a, b, min_expected=5.0):
    """Chi-square homogeneity test of two integer samples.

    Bins are merged from the right until every expected count is at least
    ``min_expected``. Returns (statistic, dof, p-value).
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    top = int(max(a.max(), b.max())) + 1
    ca = np.bincount(a, minlength=top).astype(float)
    cb = np.bincount(b, minlength=top).astype(float)
    tot = ca + cb
    keep = tot > 0
    ca, cb, tot = ca[keep], cb[keep], tot[keep]
    na, nb = ca.sum(), cb.sum()
    bins_a, bins_b = [], []
    acc_a = acc_b = 0.0
    for x, y in zip(ca, cb):
        acc_a += x
        acc_b += y
        # smallest expected count of the merged bin
        if (acc_a + acc_b) * min(na, nb) / (na + nb) >= min_expected:
            bins_a.append(acc_a)
            bins_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a + acc_b > 0:
        if bins_a:
            bins_a[-1] += acc_a
            bins_b[-1] += acc_b
        else:
            bins_a.append(acc_a)
            bins_b.append(acc_b)
    table = np.array([bins_a, bins_b])
    if table.shape[1] < 2:
        return 0.0, 0, 1.0
    stat, pval, dof, _ = stats.chi2_contingency(table, correction=False)
    return float(stat), int(dof), float(pval)


@dataclass
class SpecialMarkovReport:
    law: list
    p: float
    theta: float
    n: int
    chi2: float
    dof: int
    p_value: float
    tv_depth3: Optional[float]
    passed: bool
    alpha: float = 0.01


def special_markov_check(law, p, n, rng, depth_cap=DEPTH_CAP, edge_rate=1.0,
                         alpha=0.01, tv_tol=1e-12):
    """Pruned GW tree versus a GW tree with the thinned law.

    Compares total-progeny histograms of the root component (pruned at
    theta = -log(p) / edge_rate) and of direct thinned-law trees with a
    chi-square test, and computes the exact depth <= 3 enumeration TV.
    """
    law = offspring_law(law)
    if not 0 < p <= 1:
        raise ConfigError("retention p must lie in (0, 1]")
    theta = -math.log(p) / edge_rate
    forest = sample_gw_forest(law, n, rng, depth_cap=depth_cap, edge_rate=edge_rate)
    pruned = component_sizes(forest, theta)
    direct = total_progeny(sample_gw_forest(thinned_offspring_law(law, p), n, rng,
                                            depth_cap=depth_cap))
    chi2, dof, pval = chi_square_two_sample(pruned, direct)
    tv = None
    if law.size <= 3:
        tv, _ = enumeration_tv(law, p)
    passed = pval > alpha and (tv is None or tv <= tv_tol)
    return SpecialMarkovReport(law.tolist(), float(p), theta, int(n), chi2, dof,
                               pval, tv, bool(passed), alpha)
