import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcmlab.environment import BoxSpec, ConductanceLaw, sample_environment, uniform_field
from rcmlab.errors import DomainError, PreconditionError
from rcmlab.paths import (_delete_loops, build_detour_paths, detour_cluster_bound, neighbor_map,
                          pathvsrw_bound, staircase, subgraph_energy, subgraph_operator)
from rcmlab.percolation import build_Dn_at, build_hole_map, clusters, threshold_open
from rcmlab.spectral import (assemble_dirichlet_operator, dense_oracle, dirichlet_energy,
                             principal_eigenpair)


# ---------------------------------------------------------------- energies

def test_subgraph_energy_empty_and_full(rng):
    env = sample_environment(BoxSpec(2, 5), ConductanceLaw.polynomial(0.3), 1)
    f = np.zeros((15, 15))
    f[2:13, 2:13] = rng.standard_normal((11, 11))
    assert subgraph_energy(env, np.zeros(env.weights.shape, bool), f) == 0.0
    full = subgraph_energy(env, np.ones(env.weights.shape, bool), f)
    assert full == pytest.approx(dirichlet_energy(env, f, 5), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 0.9))
def test_subgraph_energy_additive(seed, p):
    env = sample_environment(BoxSpec(2, 4), ConductanceLaw.polynomial(0.3), seed)
    rng = np.random.default_rng(seed)
    mask = rng.random(env.weights.shape) < p
    f = np.zeros((11, 11))
    f[1:10, 1:10] = rng.standard_normal((9, 9))
    full = subgraph_energy(env, np.ones_like(mask), f)
    a, b = subgraph_energy(env, mask, f), subgraph_energy(env, ~mask, f)
    assert a + b == pytest.approx(full, rel=1e-12)


def test_subgraph_operator_form():
    env = sample_environment(BoxSpec(2, 6), ConductanceLaw.polynomial(0.3), 2)
    lab = clusters(threshold_open(env, 0.05), 6)
    g = lab.giant_mask()
    op = subgraph_operator(env, lab.open_edges, g, 6)
    rng = np.random.default_rng(1)
    R = env.radius
    for _ in range(5):
        v = rng.standard_normal(op.dim)
        cube = np.zeros((2 * R + 1,) * 2)
        cube[tuple((op.sites + R).T)] = v
        ref = subgraph_energy(env, lab.open_edges, cube)
        assert op.form(v) == pytest.approx(ref, rel=1e-12)


# ---------------------------------------------------------------- staircase / loops

def test_staircase_axis_order():
    assert staircase((0, 0), (2, -1)) == [(0, 0), (1, 0), (2, 0), (2, -1)]
    assert staircase((1, 1), (1, 1)) == [(1, 1)]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([(1, 0), (-1, 0), (0, 1), (0, -1)]), max_size=40))
def test_delete_loops(steps):
    walk = [(0, 0)]
    for s in steps:
        walk.append((walk[-1][0] + s[0], walk[-1][1] + s[1]))
    out = _delete_loops(walk)
    assert out[0] == walk[0] and out[-1] == walk[-1]
    assert len(out) <= len(walk)
    assert len(set(out)) == len(out)
    assert all(abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1 for a, b in zip(out, out[1:]))


# ---------------------------------------------------------------- detours

def test_detour_no_bad_edges_is_staircase():
    env = uniform_field(BoxSpec(2, 10))
    base = {(0, 0): (3, 2), (-4, 1): (-1, -1)}
    pm = build_detour_paths(env, list(base), base, 0.5, n=10)
    for s, p in zip(pm.sources, pm.paths):
        assert p == staircase(s, base[s])
    assert pm.max_length == 5 and pm.min_weight == 1.0


def test_detour_around_bad_edge():
    env = uniform_field(BoxSpec(2, 10)).with_edges({((2, 0), (3, 0)): 1e-6})
    base = {(0, 0): (5, 0)}
    pm = build_detour_paths(env, [(0, 0)], base, 0.5, n=10)
    path = pm.paths[0]
    assert path[0] == (0, 0) and path[-1] == (5, 0)
    edges_in_box = 2 * 13 * 12  # positive edges of B_{3d}(0) in d = 2
    assert len(path) - 1 <= 5 + edges_in_box
    assert all(env.edge_weight(a, b) > 0.5 for a, b in zip(path, path[1:]))
    assert len(path) - 1 == 7  # one step around the bad edge and back
    assert pm.validate(env)


def test_detour_blocked():
    edits = {}
    for x in ((2, 0),):
        for j in range(2):
            for sg in (1, -1):
                y = list(x)
                y[j] += sg
                edits[(x, tuple(y))] = 1e-6
    env = uniform_field(BoxSpec(2, 10)).with_edges(edits)
    with pytest.raises(PreconditionError, match="no good detour"):
        build_detour_paths(env, [(0, 0)], {(0, 0): (2, 0)}, 0.5, n=10)
    with pytest.raises(DomainError):
        build_detour_paths(env, [(1, 1)], {(0, 0): (2, 0)}, 0.5, n=10)


def test_detour_paths_random_envs():
    n, d = 32, 2
    law = ConductanceLaw.polynomial(0.2)
    xi = law.inverse_cdf(0.05)
    built = 0
    for s in range(60):
        env = sample_environment(BoxSpec(d, n, 7), law, s)
        lab = clusters(threshold_open(env, xi), n)
        try:
            hm = build_hole_map(lab, n)
            pm = build_detour_paths(env, hm.sources, hm, xi, n)
        except PreconditionError:
            continue
        built += 1
        assert pm.validate(env)
        assert pm.max_length <= math.log(n) ** (2 * d)
        if built == 20:
            break
    assert built == 20


def test_pathmap_jsonl(tmp_path):
    env = uniform_field(BoxSpec(2, 6)).with_edges({((1, 0), (2, 0)): 1e-6})
    pm = build_detour_paths(env, [(0, 0)], {(0, 0): (3, 0)}, 0.5, n=6)
    p = tmp_path / "paths.jsonl"
    pm.to_jsonl(p, env)
    rec = json.loads(open(p).read().splitlines()[0])
    assert rec["source"] == [0, 0] and rec["image"] == [3, 0]
    assert rec["len"] == len(rec["path"]) - 1 and rec["min_w"] == 1.0


# ---------------------------------------------------------------- neighbour map

def test_neighbor_map_empty():
    env = uniform_field(BoxSpec(2, 4))
    pm = neighbor_map(env, np.empty((0, 2), dtype=int), 0.5)
    assert len(pm) == 0


def test_neighbor_map_single_good_edge():
    edits = {((0, 0), (1, 0)): 1e-3, ((0, 0), (-1, 0)): 1e-3, ((0, 0), (0, -1)): 1e-3,
             ((0, 0), (0, 1)): 0.7}
    env = uniform_field(BoxSpec(2, 4)).with_edges(edits)
    pm = neighbor_map(env, [(0, 0)], 0.5)
    assert pm.paths == [[(0, 0), (0, 1)]] and pm.min_weight == 0.7
    with pytest.raises(PreconditionError, match="no incident weight"):
        neighbor_map(env, [(0, 0)], 0.8)


def test_neighbor_map_requires_sparse():
    env = uniform_field(BoxSpec(2, 8))
    with pytest.raises(PreconditionError, match="sparse"):
        neighbor_map(env, [(0, 0), (3, 3)], 0.5)


# ---------------------------------------------------------------- bound

def test_bound_formula():
    assert pathvsrw_bound(1, 1, 1e12, 2) == pytest.approx(1 / 8, rel=1e-10)
    assert pathvsrw_bound(1, 1, 1, 2) == pytest.approx(1 / 11, rel=1e-15)
    for bad in [(0, 1, 1, 2), (1, -1, 1, 2), (1, 1, 0, 2)]:
        with pytest.raises(DomainError):
            pathvsrw_bound(*bad)


@pytest.mark.parametrize("n", [10, 100, 1000])
def test_composed_bound_is_lower_bound(n):
    d, g, c1, xi = 2, 1e-3, 2.0, 0.3
    L = math.log(n) ** (2 * d)
    exact = pathvsrw_bound(g, L, xi / (c1 * n * n), d)
    composed = detour_cluster_bound(d, n, g, c1, xi)
    ref = 1.0 / (2 ** (d + 1) * math.log(n) ** (4 * d * d) / g + 3 * c1 * n * n / xi)
    assert composed == pytest.approx(ref, rel=1e-14)
    assert composed <= exact * (1 + 1e-14)


@pytest.mark.parametrize("seed", range(6))
def test_path_bound_small_boxes(seed):
    """E(f) >= bound ||f||^2 with mu from the dense oracle of the cluster operator."""
    n, d = 12, 2
    law = ConductanceLaw.polynomial(0.2)
    env = sample_environment(BoxSpec(d, n, 5), law, seed)
    lab, holes = build_Dn_at(env, law.inverse_cdf(0.15), n)
    try:
        pm = neighbor_map(env, holes, law.inverse_cdf(0.01))
    except PreconditionError:
        pytest.skip("preconditions fail for this seed")
    cop = subgraph_operator(env, lab.open_edges, lab.giant_mask(), n)
    mu = dense_oracle(cop)[0][0]
    bound = pathvsrw_bound(pm.nu, pm.L, mu, d)
    op = assemble_dirichlet_operator(env, n)
    ep = principal_eigenpair(op, solver="direct")
    assert bound <= ep.lambda1 * (1 + 1e-10)
    rng = np.random.default_rng(seed)
    for f in list(rng.standard_normal((50, op.dim))) + [ep.psi1]:
        assert op.form(f) >= bound * float(f @ f) * (1 - 1e-10)
