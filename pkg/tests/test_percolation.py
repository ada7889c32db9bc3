import csv
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcmlab.environment import BoxSpec, ConductanceLaw, sample_environment, uniform_field
from rcmlab.errors import DomainError, PreconditionError
from rcmlab.paths import subgraph_energy
from rcmlab.percolation import (build_Dn, build_Dn_at, build_hole_map, cluster_density, clusters,
                                edge_boundary_ratio, hole_cell_radius, is_b_sparse, threshold_open)
from rcmlab.traps import ThresholdFamily, bad_edge_census


def law(g=0.2):
    return ConductanceLaw.polynomial(g)


# ---------------------------------------------------------------- threshold

def test_threshold_strict():
    env = uniform_field(BoxSpec(2, 3))
    valid = env.valid_mask()
    assert np.all(threshold_open(env, 0.5)[valid])
    assert not np.any(threshold_open(env, 1.0))
    with pytest.raises(DomainError):
        threshold_open(env, 0.0)


def test_open_fraction_binomial():
    L = law(0.2)
    xi = L.inverse_cdf(0.1)
    env = sample_environment(BoxSpec(2, 353, 1), L, 3)
    oe = threshold_open(env, xi)[env.valid_mask()]
    N = oe.size
    assert N >= 10 ** 6
    assert abs(oe.mean() - 0.9) <= 4 * math.sqrt(0.09 / N)


# ---------------------------------------------------------------- clusters

def hand_fixture():
    """5 x 5 box: a 14-site component, a 3-site component, 8 isolated sites."""
    oe = np.zeros((2, 5, 5), dtype=bool)
    for i in range(2):
        oe[1, i, 0:4] = True       # rows 0 and 1, all five sites
    oe[1, 2, 0:3] = True           # row 2, sites 0..3
    oe[0, 0, 0] = oe[0, 1, 0] = True  # column links (0,0)-(1,0)-(2,0)
    oe[1, 4, 0:2] = True           # row 4, sites 0..2
    return oe


def test_hand_fixture_labels():
    lab = clusters(hand_fixture(), 2)
    expected = np.array([
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 1],
        [2, 3, 4, 5, 6],
        [7, 7, 7, 8, 9],
    ])
    np.testing.assert_array_equal(lab.label, expected)
    assert lab.sizes.tolist() == [14, 1, 1, 1, 1, 1, 1, 3, 1, 1]
    assert lab.giant_id == 0
    assert cluster_density(lab) == 14 / 25
    holes = {tuple(h) for h in lab.holes()}
    assert len(holes) == 11 and (0, 2) in holes and (2, -2) in holes


def test_all_open_and_all_closed():
    env = uniform_field(BoxSpec(2, 3, 1))
    lab = clusters(threshold_open(env, 0.5), 3)
    assert len(lab.sizes) == 1 and cluster_density(lab) == 1.0
    lab = clusters(threshold_open(env, 2.0), 3)
    assert len(lab.sizes) == lab.label.size
    assert cluster_density(lab) == 1 / 49
    assert lab.label_at((-3, -3)) == lab.giant_id


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 0.9))
def test_labels_iff_connected(seed, p):
    oe = np.random.default_rng(seed).random((2, 7, 7)) < p
    lab = clusters(oe, 2)
    assert lab.sizes.sum() == 49
    # BFS from every site
    L = lab.label
    for s in np.ndindex(7, 7):
        seen = {s}
        q = deque([s])
        while q:
            x = q.popleft()
            for j in range(2):
                for sg in (1, -1):
                    y = list(x)
                    y[j] += sg
                    y = tuple(y)
                    if not all(0 <= c < 7 for c in y) or y in seen:
                        continue
                    lo = x if sg == 1 else y
                    if lo[j] < 6 and lab.open_edges[(j,) + lo]:
                        seen.add(y)
                        q.append(y)
        same = {t for t in np.ndindex(7, 7) if L[t] == L[s]}
        assert same == seen


def test_giant_tie_break_lexicographic():
    oe = np.zeros((2, 5, 5), dtype=bool)
    oe[1, 0, 0] = True  # (0,0)-(0,1)
    oe[1, 4, 3] = True  # (4,3)-(4,4)
    lab = clusters(oe, 2)
    assert lab.giant_id == lab.label[0, 0]


def test_labels_export_csv(tmp_path):
    lab = clusters(hand_fixture(), 2)
    p = tmp_path / "labels.csv"
    lab.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["x1", "x2", "label"]
    assert rows[1] == ["-2", "-2", "0"] and rows[-1] == ["2", "2", "9"]


def test_hole_components_cover_complement():
    lab = clusters(hand_fixture(), 2)
    hc = lab.hole_components()
    assert np.all((hc >= 0) == ~lab.giant_mask())
    # sites (3,0..4), (4,3..4), (2,4) form one nearest-neighbour hole component with (4,0..2)
    assert len(set(hc[hc >= 0].tolist())) == 1


# ---------------------------------------------------------------- density and hole map

def test_density_high_p():
    L = law(0.2)
    xi = L.inverse_cdf(0.1)
    ok = 0
    for s in range(20):
        lab = clusters(threshold_open(sample_environment(BoxSpec(2, 64, 5), L, s), xi), 64)
        ok += cluster_density(lab) >= 0.8
        hm = build_hole_map(lab, 64)
        assert hm.is_injective() and hm.max_l1_distance <= 2 * 2 * math.log(64) ** 3
        assert hm.validate()
        g = lab.giant_mask()
        for t in hm.images:
            assert g[tuple(np.asarray(t) + lab.radius)]
    assert ok >= 19


def test_hole_map_empty_and_single():
    env = uniform_field(BoxSpec(2, 8, 2))
    lab = clusters(threshold_open(env, 0.5), 8)
    hm = build_hole_map(lab, 8)
    assert len(hm) == 0 and hm.max_l1_distance == 0
    trap = {((2, 3), (3, 3)): 0.1, ((2, 3), (1, 3)): 0.1, ((2, 3), (2, 4)): 0.1, ((2, 3), (2, 2)): 0.1}
    lab = clusters(threshold_open(env.with_edges(trap), 0.5), 8)
    hm = build_hole_map(lab, 8)
    assert [tuple(s) for s in hm.sources] == [(2, 3)]
    # nearest giant sites are the four neighbours; lexicographic first is (1, 3)
    assert [tuple(t) for t in hm.images] == [(1, 3)]
    assert hm.max_l1_distance == 1


def test_hole_map_csv(tmp_path):
    env = uniform_field(BoxSpec(2, 8, 2))
    trap = {((0, 0), (1, 0)): 0.1, ((0, 0), (-1, 0)): 0.1, ((0, 0), (0, 1)): 0.1, ((0, 0), (0, -1)): 0.1}
    hm = build_hole_map(clusters(threshold_open(env.with_edges(trap), 0.5), 8), 8)
    p = tmp_path / "hm.csv"
    hm.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows == [["h1", "h2", "g1", "g2", "l1"], ["0", "0", "-1", "0", "1"]]


def test_hole_map_density_precondition():
    env = uniform_field(BoxSpec(2, 8, 2))
    lab = clusters(threshold_open(env, 2.0), 8)  # nothing open: giant is one site
    with pytest.raises(PreconditionError, match="density precondition failed"):
        build_hole_map(lab, 8)


def test_cell_radius():
    assert hole_cell_radius(64, 2) == int(math.log(64) ** 3)
    assert hole_cell_radius(2, 2) == 1


# ---------------------------------------------------------------- boundary ratio

def test_boundary_ratio_single_site():
    lab = clusters(threshold_open(uniform_field(BoxSpec(2, 4, 2)), 0.5), 4)
    assert edge_boundary_ratio(lab, [(0, 0)]) == 4.0


def test_boundary_ratio_cube():
    lab = clusters(threshold_open(uniform_field(BoxSpec(3, 5, 2)), 0.5), 5)
    m = 2
    A = np.indices((2 * m + 1,) * 3).reshape(3, -1).T - m
    ref = 2 * 3 * (2 * m + 1) ** 2 / (2 * m + 1) ** 3
    assert edge_boundary_ratio(lab, A) == pytest.approx(ref, rel=1e-14)


def test_boundary_ratio_rejects_non_giant():
    lab = clusters(hand_fixture(), 2)
    with pytest.raises(DomainError):
        edge_boundary_ratio(lab, [(2, -2)])


def test_boundary_ratio_bfs_sets():
    n = 64
    L = law(0.2)
    env = sample_environment(BoxSpec(2, n, 2), L, 1)
    lab = clusters(threshold_open(env, L.inverse_cdf(0.1)), n)
    g = lab.giant_mask()
    R = lab.radius
    rng = np.random.default_rng(0)
    inbox = np.argwhere(lab.box(g, n - 1)) - (n - 1)
    ratios = []
    for _ in range(100):
        start = tuple(inbox[rng.integers(len(inbox))])
        A, seen, q = [], {start}, deque([start])
        while q and len(A) < 50:
            x = q.popleft()
            A.append(x)
            for j in range(2):
                for sg in (1, -1):
                    y = list(x)
                    y[j] += sg
                    y = tuple(y)
                    if y in seen or max(map(abs, y)) > n:
                        continue
                    lo = x if sg == 1 else y
                    if lab.open_edges[(j,) + tuple(c + R for c in lo)]:
                        seen.add(y)
                        q.append(y)
        ratios.append(edge_boundary_ratio(lab, A, n))
    assert min(ratios) * n >= 0.5


# ---------------------------------------------------------------- D_n and sparseness

def test_Dn_everything_below_min():
    env = sample_environment(BoxSpec(2, 8), law(0.5), 2)
    lab, holes = build_Dn_at(env, 0.5 * np.nanmin(env.weights), 8)
    assert len(holes) == 0 and cluster_density(lab) == 1.0


def test_Dn_isolated_trap():
    env = uniform_field(BoxSpec(2, 8)).with_edges(
        {((1, 1), (2, 1)): 1e-3, ((1, 1), (0, 1)): 1e-3, ((1, 1), (1, 2)): 1e-3, ((1, 1), (1, 0)): 1e-3})
    _, holes = build_Dn_at(env, 0.01, 8)
    assert [tuple(h) for h in holes] == [(1, 1)]


def test_Dn_no_giant():
    env = uniform_field(BoxSpec(2, 8))
    with pytest.raises(PreconditionError, match="no giant"):
        build_Dn_at(env, 2.0, 8)


def test_build_Dn_threshold():
    env = sample_environment(BoxSpec(2, 16), law(0.2), 4)
    g = ThresholdFamily.critical(0.2, 2)
    lab, holes = build_Dn(env, g, 0.25, 16)
    lab2, holes2 = build_Dn_at(env, g(16 ** 0.75), 16)
    np.testing.assert_array_equal(holes, holes2)
    with pytest.raises(DomainError):
        build_Dn(env, g, 1.0, 16)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.02, 0.3), st.floats(0.1, 0.9))
def test_Dn_monotone_in_threshold(seed, q_hi, frac):
    L = law(0.3)
    env = sample_environment(BoxSpec(2, 10), L, seed)
    hi = L.inverse_cdf(q_hi)
    lo = hi * frac
    lab_hi, _ = build_Dn_at(env, hi, 10, min_density=0.0)
    lab_lo, _ = build_Dn_at(env, lo, 10, min_density=0.0)
    if cluster_density(lab_hi) >= 0.5:
        assert np.all(lab_lo.giant_mask()[lab_hi.giant_mask()])


def test_sparse_holes_under_census():
    n, d = 64, 2
    b = 3 * d
    L = law(0.2)
    g = ThresholdFamily.critical(0.2, d)
    checked = 0
    for s in range(50):
        env = sample_environment(BoxSpec(d, n, 2 * b + 1), L, s)
        t = g(float(n) ** 0.75, L)
        try:
            _, holes = build_Dn_at(env, t, n)
        except PreconditionError:
            continue
        if bad_edge_census(env, n, b, t) <= 3 * d - 1:
            checked += 1
            assert is_b_sparse(holes, b)[0]
    # at this threshold (F ~ 0.21) a census box holds ~70 bad edges, so the
    # census precondition essentially never holds and the audit is vacuous
    assert checked <= 50


def test_sparse_holes_constructed():
    """Two isolated traps far apart: census <= 3d-1 and the holes are 3d-sparse."""
    d, n, b = 2, 20, 6
    env = uniform_field(BoxSpec(d, n, 2 * b + 1))
    edits = {}
    for x in ((-8, 0), (8, 3)):
        for j in range(d):
            for sg in (1, -1):
                y = list(x)
                y[j] += sg
                edits[(x, tuple(y))] = 1e-3
    env = env.with_edges(edits)
    _, holes = build_Dn_at(env, 0.01, n)
    assert bad_edge_census(env, n, b, 0.01) == 4
    assert is_b_sparse(holes, b)[0]
    # move the second trap close: the census sees 8 bad edges
    near = env.with_edges({k: 1.0 for k in edits if k[0] == (8, 3)})
    near = near.with_edges({((-3, 0), (-2, 0)): 1e-3, ((-3, 0), (-4, 0)): 1e-3,
                            ((-3, 0), (-3, 1)): 1e-3, ((-3, 0), (-3, -1)): 1e-3})
    _, holes = build_Dn_at(near, 0.01, n)
    assert bad_edge_census(near, n, b, 0.01) == 8
    assert not is_b_sparse(holes, b)[0]


def test_is_b_sparse_examples():
    assert is_b_sparse([], 3) == (True, None)
    ok, w = is_b_sparse([(0, 0), (0, 1)], 1)
    assert not ok and set(w) == {(0, 0), (0, 1)}
    assert is_b_sparse([(0, 0), (7, 0)], 3)[0]
    assert not is_b_sparse([(0, 0), (6, 6)], 3)[0]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), max_size=12, unique=True),
       st.integers(1, 4))
def test_is_b_sparse_brute(sites, b):
    ref = all(max(abs(p[0] - q[0]), abs(p[1] - q[1])) > 2 * b
              for i, p in enumerate(sites) for q in sites[i + 1:])
    assert is_b_sparse(sites, b)[0] == ref


def test_xi_threshold_consistency():
    """xi times the unit-weight form on the cluster is at most the weighted form."""
    L = law(0.3)
    env = sample_environment(BoxSpec(2, 10), L, 9)
    xi = L.inverse_cdf(0.2)
    lab = clusters(threshold_open(env, xi), 10)
    g = lab.giant_mask()
    mask = lab.open_edges.copy()
    for j in range(2):
        shifted = np.zeros_like(g)
        sl_lo = [slice(None)] * 2
        sl_hi = [slice(None)] * 2
        sl_lo[j] = slice(0, -1)
        sl_hi[j] = slice(1, None)
        shifted[tuple(sl_lo)] = g[tuple(sl_hi)]
        mask[j] &= g & shifted
    unit = env.with_weights(lambda w: np.ones_like(w))
    rng = np.random.default_rng(0)
    for _ in range(100):
        f = rng.standard_normal((21, 21))
        lhs = xi * subgraph_energy(unit, mask, f)
        rhs = subgraph_energy(env, mask, f)
        assert lhs <= rhs * (1 + 1e-12)
