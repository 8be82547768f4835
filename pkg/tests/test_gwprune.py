import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crtprune import gwprune as gw
from crtprune.errors import ConfigError, SizeError


def test_offspring_law_families():
    assert np.allclose(gw.offspring_law("binary-critical"), [0.5, 0, 0.5])
    g = gw.offspring_law("geometric", 0.5)
    assert g.sum() == pytest.approx(1.0)
    assert g[:3] == pytest.approx([0.5, 0.25, 0.125], rel=1e-12)
    with pytest.raises(ConfigError):
        gw.offspring_law("poisson")
    with pytest.raises(ConfigError):
        gw.offspring_law([0.5, 0.6])
    with pytest.raises(ConfigError):
        gw.offspring_law("geometric", 1.0)


def test_catalan_progeny_probabilities():
    rng = np.random.default_rng(0)
    n = 200_000
    f = gw.sample_gw_forest("binary-critical", n, rng, depth_cap=40)
    tot = gw.total_progeny(f)
    for size, p in [(1, 1 / 2), (3, 1 / 8), (5, 1 / 16)]:
        est = np.mean(tot == size)
        assert abs(est - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_single_child_law_is_a_path():
    rng = np.random.default_rng(1)
    t = gw.sample_gw([0.0, 1.0], rng, depth_cap=12)
    assert len(t) == 13
    assert np.array_equal(t.parent, np.arange(-1, 12))
    assert t.truncated[0]
    assert t.offspring[-1] == 0


def test_depth_cap_and_truncation_rate():
    rng = np.random.default_rng(2)
    law = gw.offspring_law("binary-critical")
    cap = 5
    f = gw.sample_gw_forest(law, 50_000, rng, depth_cap=cap)
    assert f.depth.max() <= cap
    p = 1 - gw.extinction_probability(law, depth=cap + 1)
    assert abs(f.truncated.mean() - p) < 4 * math.sqrt(p * (1 - p) / f.n_trees)


def test_thinned_binary_formula():
    q = np.array([0.2, 0.3, 0.5])
    p = 0.7
    want = [q[0] + q[1] * (1 - p) + q[2] * (1 - p) ** 2,
            q[1] * p + 2 * q[2] * p * (1 - p),
            q[2] * p * p]
    assert np.allclose(gw.thinned_offspring_law(q, p), want, atol=1e-15)
    assert np.allclose(gw.thinned_offspring_law(q, 0.0), [1, 0, 0])
    assert np.allclose(gw.thinned_offspring_law(q, 1.0), q)
    assert np.allclose(gw.thinned_offspring_law(q, 1.0, node_keep=0.0), [1, 0, 0])
    with pytest.raises(ConfigError):
        gw.thinned_offspring_law(q, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_thinning_is_a_semigroup(w, p1, p2, s):
    law = np.asarray(w) / sum(w)
    a = gw.thinned_offspring_law(gw.thinned_offspring_law(law, p1), p2)
    b = gw.thinned_offspring_law(law, p1 * p2)
    assert np.allclose(a, b, atol=1e-12)
    # generating function identity f_p(s) = f(1 - p + p s)
    assert gw.pgf(gw.thinned_offspring_law(law, p1), s) == pytest.approx(
        gw.pgf(law, 1 - p1 + p1 * s), abs=1e-12)


def test_extinction_probability():
    assert gw.extinction_probability([0.25, 0.25, 0.5]) == pytest.approx(0.5, abs=1e-12)
    assert gw.extinction_probability("geometric") == 1.0
    assert gw.extinction_probability([0.0, 1.0]) == 0.0
    assert gw.extinction_probability([0.3, 0.2, 0.5], depth=1) == pytest.approx(0.3)


def test_pruning_extremes_and_monotone():
    rng = np.random.default_rng(3)
    f = gw.sample_gw_forest("binary-critical", 2000, rng, depth_cap=25, node_size=0.5)
    tot = gw.total_progeny(f)
    assert np.array_equal(gw.component_sizes(f, 0.0), tot)
    assert np.all(gw.component_sizes(f, 1e9) == 1)
    prev = tot
    for th in np.linspace(0.0, 3.0, 13):
        cur = gw.component_sizes(f, th)
        assert np.all(cur <= prev)
        prev = cur
    kept = gw.kept_mask(f, 0.7)
    # a kept non-root node has a kept parent
    child = f.parent >= 0
    assert np.all(kept[f.parent[child & kept]])


def test_prune_at_single_tree():
    rng = np.random.default_rng(4)
    t = gw.sample_gw("binary-critical", rng, depth_cap=20)
    s = gw.prune_at(t, 0.0)
    assert s.root_component_size == s.total_progeny == len(t)
    with pytest.raises(ConfigError):
        gw.prune_at(t, -1.0)


def test_node_mark_frequency():
    rng = np.random.default_rng(5)
    delta, theta = 0.8, 0.6
    f = gw.sample_gw_forest([0.5, 0.0, 0.5], 20000, rng, depth_cap=15, node_size=delta)
    freq = np.mean(f.node_clock <= theta)
    p = 1 - math.exp(-theta * delta)
    assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / len(f))
    # a marked root loses all of its children
    marked_roots = np.flatnonzero((f.parent < 0) & (f.node_clock <= theta))
    sizes = gw.component_sizes(f, theta)
    assert np.all(sizes[f.tree_id[marked_roots]] == 1)


def test_node_marks_thin_like_node_keep():
    rng = np.random.default_rng(6)
    law = gw.offspring_law([0.3, 0.4, 0.3])
    delta, theta = 0.5, 0.4
    f = gw.sample_gw_forest(law, 40000, rng, depth_cap=1, node_size=delta, edge_rate=1.0)
    kept = gw.component_sizes(f, theta) - 1
    ref = gw.thinned_offspring_law(law, math.exp(-theta), node_keep=math.exp(-theta * delta))
    emp = np.bincount(kept, minlength=3) / kept.size
    assert np.allclose(emp, ref, atol=4 * math.sqrt(0.25 / kept.size))


def test_budget():
    with pytest.raises(SizeError):
        gw.sample_gw_forest([0.1, 0.0, 0.9], 10, np.random.default_rng(0), budget=1000)


def test_enumeration_tv_zero():
    tv, count = gw.enumeration_tv("binary-critical", 0.8)
    assert tv == 0.0 and count > 10
    tv, _ = gw.enumeration_tv([0.3, 0.4, 0.3], 0.6)
    assert tv == 0.0
    with pytest.raises(ConfigError):
        gw.enumeration_tv([0.25, 0.25, 0.25, 0.25], 0.5)


def test_chi_square_two_sample():
    rng = np.random.default_rng(7)
    a = rng.poisson(3.0, 5000)
    b = rng.poisson(3.0, 5000)
    _, dof, p = gw.chi_square_two_sample(a, b)
    assert dof > 3 and p > 1e-4
    _, _, p = gw.chi_square_two_sample(a, rng.poisson(3.5, 5000))
    assert p < 1e-6
    assert gw.chi_square_two_sample([1, 1], [1, 1]) == (0.0, 0, 1.0)


def test_special_markov_check():
    rng = np.random.default_rng(8)
    r = gw.special_markov_check("binary-critical", 0.8, 20000, rng, depth_cap=30)
    assert r.passed and r.tv_depth3 == 0.0
    assert r.theta == pytest.approx(-math.log(0.8))
    r = gw.special_markov_check("geometric", 0.7, 5000, rng, depth_cap=30)
    assert r.tv_depth3 is None
    assert r.p_value > 1e-4
