import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from crtprune import _kernels_py, crtfrag as cf
from crtprune.errors import ConfigError, DegenerateError
from crtprune.harness import ks_statistic

try:
    from crtprune import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


@pytest.fixture(scope="module")
def exc():
    return cf.sample_excursion(2 ** 10, np.random.default_rng(0))


def test_excursion_shape(exc):
    v = exc.values
    assert v[0] == 0 and v[-1] == 0
    assert np.all(v[1:-1] > 0)
    assert exc.at(0.0) == 0 and exc.at([0.5]).shape == (1,)
    with pytest.raises(ConfigError):
        cf.sample_excursion(1000, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        cf.sample_excursion(128, np.random.default_rng(0))


def test_excursion_mean_max():
    # E max e = sqrt(pi / 2); the grid maximum is biased low by O(n^{-1/2})
    rng = np.random.default_rng(1)
    mx = np.array([cf.sample_excursion(2 ** 12, rng).values.max() for _ in range(800)])
    se = mx.std() / math.sqrt(mx.size)
    assert abs(mx.mean() - math.sqrt(math.pi / 2)) < 4 * se + 0.02


def test_coarsen(exc):
    c = cf.coarsen(exc, 2 ** 8)
    assert c.n == 256 and np.array_equal(c.values, exc.values[::4])
    with pytest.raises(ConfigError):
        cf.coarsen(exc, 2 ** 11)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.data())
def test_sparse_table(a, data):
    t = cf.SparseTable(a)
    lo = data.draw(st.integers(0, len(a) - 1))
    hi = data.draw(st.integers(0, len(a) - 1))
    got = t.query(np.array([lo]), np.array([hi]))[0]
    assert got == (min(a[lo:hi + 1]) if lo <= hi else math.inf)


def brute_min(exc, s, t):
    # g = 2e on [s, t], piecewise linear: grid points inside plus endpoints
    grid = np.linspace(0, 1, exc.n + 1)
    inside = (grid > s) & (grid < t)
    pts = np.concatenate(([s, t], grid[inside]))
    return 2 * exc.at(pts).min()


def test_distance_two_leaves(exc):
    rng = np.random.default_rng(2)
    tree = cf.build_spanned_tree(exc, 2, rng, leaf_times=[0.7, 0.2])
    s, t = tree.leaf_times
    want = tree.heights[0] + tree.heights[1] - 2 * brute_min(exc, s, t)
    assert tree.distance(0, 1) == pytest.approx(want, abs=1e-12)
    assert tree.heights[0] == pytest.approx(2 * exc.at(0.2))


def test_four_point_condition(exc):
    rng = np.random.default_rng(3)
    tree = cf.build_spanned_tree(exc, 12, rng)
    for i, j, k, l in itertools.combinations(range(12), 4):
        d = tree.distance
        sums = sorted([d(i, j) + d(k, l), d(i, k) + d(j, l), d(i, l) + d(j, k)])
        assert sums[2] - sums[1] <= 1e-10


def test_tree_shape(exc):
    rng = np.random.default_rng(4)
    m = 40
    tree = cf.build_spanned_tree(exc, m, rng)
    e = tree.edge_lengths()
    assert e.size == 2 * m - 1
    assert np.all(e >= 0)
    total = tree.heights[0] + np.sum(tree.heights[1:] - tree.branch[1:])
    assert e.sum() == pytest.approx(total, rel=1e-12)
    assert tree.parent[0] == -1
    assert np.all(tree.parent[1:] < np.arange(1, m))
    assert np.all(tree.branch[tree.parent[1:]] < tree.branch[1:])
    assert tree.branch_points().size == m - 1


def test_three_leaves_binary(exc):
    rng = np.random.default_rng(5)
    tree = cf.build_spanned_tree(exc, 3, rng)
    assert tree.edge_lengths().size == 5
    assert np.all(tree.edge_lengths() > 0)


def brute_path_min(tree):
    out = np.full(tree.m, np.inf)
    for j in range(tree.m):
        lo, hi = tree.cut_ptr[j], tree.cut_ptr[j + 1]
        for h, c in zip(tree.cut_height[lo:hi], tree.cut_clock[lo:hi]):
            for k in range(tree.m):
                a, b = sorted((tree.leaf_times[j], tree.leaf_times[k]))
                if h <= tree.min_between(a, b):
                    out[k] = min(out[k], c)
    return out


@pytest.mark.parametrize("theta_max", [None, 2.0])
def test_path_min_clocks_oracle(exc, theta_max):
    rng = np.random.default_rng(6)
    tree = cf.build_spanned_tree(exc, 25, rng, theta_max=theta_max)
    assert np.array_equal(tree.path_min_clocks(), brute_path_min(tree))


@pytest.mark.skipif(_kernels_c is None, reason="compiled kernels not built")
def test_backends_agree(exc):
    rng = np.random.default_rng(7)
    tree = cf.build_spanned_tree(exc, 300, rng, theta_max=3.0)
    b = np.ascontiguousarray(tree.branch)
    assert np.array_equal(_kernels_c.previous_smaller(b), _kernels_py.previous_smaller(b))
    args = (b, tree.heights, tree.parent, tree.cut_ptr, tree.cut_height, tree.cut_prefix_min)
    assert np.array_equal(_kernels_c.path_min_clocks(*args), _kernels_py.path_min_clocks(*args))


def test_previous_smaller_small():
    b = np.array([0.0, 0.5, 0.3, 0.3, 0.7, 0.1])
    assert _kernels_py.previous_smaller(b).tolist() == [-1, 0, 0, 0, 3, 0]


def test_duplicate_leaf_times(exc):
    with pytest.raises(DegenerateError):
        cf.build_spanned_tree(exc, 3, np.random.default_rng(0), leaf_times=[0.1, 0.5, 0.1])
    with pytest.raises(ConfigError):
        cf.build_spanned_tree(exc, 1, np.random.default_rng(0))


def test_tagged_fragment(exc):
    rng = np.random.default_rng(8)
    tree = cf.build_spanned_tree(exc, 200, rng, theta_max=3.0)
    fr = cf.tagged_fragment_process(tree, np.linspace(0, 3, 31))
    assert fr[0] == 1.0
    assert np.all(np.diff(fr) <= 0)
    with pytest.raises(ConfigError):
        cf.tagged_fragment_process(tree, [4.0])


def test_reference_cdf_matches_subordinator():
    rng = np.random.default_rng(9)
    g = rng.standard_normal(50000)
    y = 1.0 / (1.0 + 1.3 ** 2 / g ** 2)
    assert ks_statistic(y, lambda v: cf.fragment_reference_cdf(1.3, v)) < 1.63 / math.sqrt(y.size)
    assert cf.fragment_reference_cdf(1.0, 0.0) == 0.0
    assert cf.fragment_reference_cdf(1.0, 1.0) == 1.0


def test_fraction_reference_cdf():
    c = cf.fraction_reference_cdf(0.8, 1)
    # K ~ Bernoulli(Y): P(K = 0) = 1 - E[Y]
    g = stats.halfnorm()
    ey = g.expect(lambda x: x * x / (x * x + 0.64))
    assert c[0] == pytest.approx(1 - ey, abs=1e-8)
    c = cf.fraction_reference_cdf(0.8, 50)
    assert c[-1] == pytest.approx(1.0) and np.all(np.diff(c) >= -1e-12)
    assert cf.ks_discrete([1.0, 1.0], c) == pytest.approx(c[-2])


def test_coupled_fragments():
    rng = np.random.default_rng(10)
    out = cf.coupled_fragments([2 ** 8, 2 ** 10], 300, [0.5, 1.0], rng)
    assert out.shape == (2, 2)
    assert np.all(out[:, 0] >= out[:, 1])
    # shared leaves and cuts: the two grids see nearly the same tree
    assert np.all(np.abs(out[0] - out[1]) < 0.2)


def test_fragment_law_small_run():
    rng = np.random.default_rng(11)
    th = 1.0
    fr = np.array([cf.tagged_fragment_process(
        cf.build_spanned_tree(cf.sample_excursion(2 ** 10, rng), 400, rng, theta_max=th),
        [th])[0] for _ in range(300)])
    ref = cf.fraction_reference_cdf(th, 400)
    assert cf.ks_discrete(fr, ref) < 1.63 / math.sqrt(fr.size) + 0.01
