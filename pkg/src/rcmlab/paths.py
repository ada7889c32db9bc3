"""
Paths from holes into a well-connected cluster, and the resulting lower
bound on Dirichlet forms.

If every site of ``B`` outside a cluster ``C`` can be sent injectively into
``C`` along a path of at most ``L`` edges, each of weight above ``nu``, and
``C`` satisfies ``E_C(f) >= mu ||f||^2`` for ``f`` supported in ``B``, then

    E_G(f) >= ((2L)^{d+1} / nu + 3 / mu)^{-1} ||f||^2.

This module builds such path systems (single edges out of sparse holes, or
staircase paths with local detours around bad edges), certifies them, and
evaluates both sides of the inequality.
"""
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PreconditionError
from .percolation import is_b_sparse
from .spectral import operator_from_edges


# ----------------------------------------------------------------------------
# energies on subgraphs
# ----------------------------------------------------------------------------

def _embed(env, f):
    """Zero-extend a cube ``f`` over ``B_m`` to the materialized box."""
    f = np.asarray(f, dtype=np.float64)
    d, R = env.d, env.radius
    m = (f.shape[0] - 1) // 2
    if f.shape != (2 * m + 1,) * d:
        raise DomainError("f must be a cube over some B_m")
    if m > R:
        raise DomainError(f"f lives on B_{m}, beyond the materialized radius {R}")
    full = np.zeros((2 * R + 1,) * d)
    full[(slice(R - m, R + m + 1),) * d] = f
    return full


def subgraph_energy(env, edge_mask, f):
    """``1/2 sum_x sum_{y: {x,y} in subgraph} w_xy (f(x) - f(y))^2``.

    ``edge_mask`` uses the layout of ``env.weights``; ``f`` is a cube over
    some ``B_m`` and is zero outside it.
    """
    g = _embed(env, f)
    d = env.d
    side = g.shape[0]
    mask = np.asarray(edge_mask, dtype=bool) & env.valid_mask()
    total = 0.0
    for j in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, side - 1)
        hi[j] = slice(1, side)
        diff = g[tuple(hi)] - g[tuple(lo)]
        sel = mask[j][tuple(lo)]
        total += float(np.sum(env.weights[j][tuple(lo)][sel] * diff[sel] ** 2))
    return total


def subgraph_operator(env, edge_mask, site_mask, n):
    """Quadratic form of ``E_G`` on functions supported in ``V = site_mask ∩ B_n``.

    The diagonal at ``x`` is the total weight of subgraph edges at ``x``
    (also those leaving ``V``); off-diagonals are ``-w`` for subgraph edges
    inside ``V``.  ``site_mask`` is a cube over the materialized box.
    """
    d, R = env.d, env.radius
    if n + 1 > R:
        raise DomainError(f"operator on B_{n} needs edges up to radius {n + 1}")
    mask = np.asarray(edge_mask, dtype=bool) & env.valid_mask()
    inside = np.zeros(site_mask.shape, dtype=bool)
    box = (slice(R - n, R + n + 1),) * d
    inside[box] = site_mask[box]
    index = np.full(inside.shape, -1, dtype=np.int64)
    sites = np.argwhere(inside)
    index[tuple(sites.T)] = np.arange(len(sites))
    diag = np.zeros(len(sites))
    ii, jj, ww = [], [], []
    side = inside.shape[0]
    for j in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, side - 1)
        hi[j] = slice(1, side)
        w = np.where(mask[j][tuple(lo)], env.weights[j][tuple(lo)], 0.0)
        a = index[tuple(lo)]
        b = index[tuple(hi)]
        # contributions to the diagonal from either endpoint
        sa = a >= 0
        np.add.at(diag, a[sa], w[sa])
        sb = b >= 0
        np.add.at(diag, b[sb], w[sb])
        both = sa & sb & (w > 0)
        ii.append(a[both])
        jj.append(b[both])
        ww.append(w[both])
    edges = (np.concatenate(ii), np.concatenate(jj), np.concatenate(ww))
    return operator_from_edges(sites - R, diag, edges, n, d)


# ----------------------------------------------------------------------------
# path maps
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathMap:
    """Injective map with one self-avoiding path per source.

    ``nu`` is the certified threshold (every path edge has weight ``> nu``),
    ``L`` the certified bound on path lengths; ``min_weight`` and
    ``max_length`` are the realized values.
    """

    sources: list
    images: list
    paths: list = field(repr=False)
    nu: float
    L: float
    min_weight: float
    max_length: int

    def __len__(self):
        return len(self.sources)

    def validate(self, env):
        """Re-check every certificate from scratch against ``env``."""
        if len({tuple(t) for t in self.images}) != len(self.images):
            raise PreconditionError("path map is not injective")
        for s, t, p in zip(self.sources, self.images, self.paths):
            if tuple(p[0]) != tuple(s) or tuple(p[-1]) != tuple(t):
                raise PreconditionError(f"path of {tuple(s)} has wrong endpoints")
            if len({tuple(q) for q in p}) != len(p):
                raise PreconditionError(f"path of {tuple(s)} is not self-avoiding")
            if len(p) - 1 > self.L:
                raise PreconditionError(f"path of {tuple(s)} is longer than {self.L}")
            for a, b in zip(p[:-1], p[1:]):
                if not env.edge_weight(a, b) > self.nu:
                    raise PreconditionError(f"edge {tuple(a)}-{tuple(b)} is not above {self.nu}")
        return True

    def to_jsonl(self, path, env):
        with open(path, "w") as fh:
            for s, t, p in zip(self.sources, self.images, self.paths):
                ws = [env.edge_weight(a, b) for a, b in zip(p[:-1], p[1:])]
                fh.write(json.dumps({
                    "source": list(map(int, s)), "image": list(map(int, t)),
                    "path": [list(map(int, q)) for q in p],
                    "min_w": min(ws) if ws else None, "len": len(p) - 1,
                }) + "\n")


def _neighbours(x, d):
    """The 2d neighbours of ``x`` in lexicographic order."""
    out = []
    for j in range(d):
        for s in (-1, 1):
            y = list(x)
            y[j] += s
            out.append(tuple(y))
    return sorted(out)


def _finish(env, sources, images, paths, nu, L):
    ws = [env.edge_weight(a, b) for p in paths for a, b in zip(p[:-1], p[1:])]
    lengths = [len(p) - 1 for p in paths]
    pm = PathMap(sources, images, paths, float(nu), float(L),
                 float(min(ws)) if ws else math.inf, max(lengths) if lengths else 0)
    pm.validate(env)
    return pm


def neighbor_map(env, I_n, alpha, b=None):
    """Send each isolated hole to its neighbour across its heaviest edge.

    Requires ``I_n`` to be ``b``-sparse (default ``b = 3d``) and every hole to
    have an incident weight above ``alpha``; ties go to the lexicographically
    first neighbour.
    """
    d = env.d
    b = 3 * d if b is None else b
    sources = [tuple(map(int, x)) for x in np.asarray(I_n).reshape(-1, d)]
    ok, witness = is_b_sparse(sources, b)
    if not ok:
        raise PreconditionError(f"hole set is not {b}-sparse: {witness}")
    images, paths = [], []
    for x in sources:
        best, best_w = None, -math.inf
        for y in _neighbours(x, d):
            w = env.edge_weight(x, y)
            if w > best_w:
                best, best_w = y, w
        if not best_w > alpha:
            raise PreconditionError(f"hole {x} has no incident weight above {alpha}")
        images.append(best)
        paths.append([x, best])
    return _finish(env, sources, images, paths, alpha, 1)


def staircase(x, y):
    """Axis-ordered l1 path: move along axis 1 fully, then axis 2, and so on."""
    cur = list(x)
    out = [tuple(cur)]
    for j in range(len(x)):
        step = 1 if y[j] > cur[j] else -1
        while cur[j] != y[j]:
            cur[j] += step
            out.append(tuple(cur))
    return out


def _delete_loops(path):
    """Cut every loop: on revisiting a site, drop everything since its first visit."""
    out = []
    pos = {}
    for s in path:
        if s in pos:
            k = pos[s]
            for t in out[k + 1:]:
                del pos[t]
            out = out[:k + 1]
        else:
            pos[s] = len(out)
            out.append(s)
    return out


def _detour(env, y, z, radius, good):
    """Shortest good-edge path from ``y`` to ``z`` inside ``B_radius(y)`` (BFS)."""
    d, R = env.d, env.radius
    prev = {y: None}
    q = deque([y])
    while q:
        u = q.popleft()
        if u == z:
            break
        for v in _neighbours(u, d):
            if v in prev:
                continue
            if max(abs(a - c) for a, c in zip(v, y)) > radius or max(map(abs, v)) > R:
                continue
            if good(u, v):
                prev[v] = u
                q.append(v)
    if z not in prev:
        return None
    out = [z]
    while prev[out[-1]] is not None:
        out.append(prev[out[-1]])
    return out[::-1]


def build_detour_paths(env, sources, base_map, bad_threshold, n=None):
    """Staircase paths of ``base_map`` rerouted around bad edges.

    An edge is bad when its weight is at most ``bad_threshold``.  At a bad
    edge the path jumps from its current site ``y`` to the start ``z1`` of
    the next good staircase edge (or to the target) by the shortest
    good-edge route inside ``B_{3d}(y)``; loops are deleted.  The length
    certificate is ``(log n)^{2d}``.
    """
    d = env.d
    n = int(np.max(np.abs(np.asarray(sources)))) if n is None else n
    L_cert = math.log(max(n, 2)) ** (2 * d)
    lookup = base_map.as_dict() if hasattr(base_map, "as_dict") else dict(base_map)

    def good(a, b):
        return env.edge_weight(a, b) > bad_threshold

    srcs, imgs, paths = [], [], []
    for x in sources:
        x = tuple(map(int, x))
        if x not in lookup:
            raise DomainError(f"source {x} is not in the base map")
        t = lookup[x]
        base = staircase(x, t)
        path = [x]
        i = 0
        while i < len(base) - 1:
            a, b = base[i], base[i + 1]
            if good(a, b):
                path.append(b)
                i += 1
                continue
            k = i + 1
            while k < len(base) - 1 and not good(base[k], base[k + 1]):
                k += 1
            z1 = base[k]
            det = _detour(env, a, z1, 3 * d, good)
            if det is None:
                raise PreconditionError(f"no good detour from {a} to {z1} inside B_{3 * d}({a})")
            path.extend(det[1:])
            i = k
        path = _delete_loops(path)
        srcs.append(x)
        imgs.append(t)
        paths.append(path)
    return _finish(env, srcs, imgs, paths, bad_threshold, L_cert)


# ----------------------------------------------------------------------------
# the bound
# ----------------------------------------------------------------------------

def pathvsrw_bound(nu, L, mu, d):
    """``((2L)^{d+1} / nu + 3 / mu)^{-1}``."""
    for name, v in (("nu", nu), ("L", L), ("mu", mu), ("d", d)):
        if not v > 0:
            raise DomainError(f"{name} must be positive, got {v}")
    return 1.0 / ((2.0 * L) ** (d + 1) / nu + 3.0 / mu)


def detour_cluster_bound(d, n, g_val, c1, xi):
    """``(2^{d+1} (log n)^{4 d^2} / g + 3 c1 n^2 / xi)^{-1}``.

    This is a lower bound of ``pathvsrw_bound(g, (log n)^{2d}, xi/(c1 n^2), d)``
    (it uses the cruder exponent ``4 d^2 >= 2d(d+1)``).
    """
    return 1.0 / (2.0 ** (d + 1) * math.log(n) ** (4 * d * d) / g_val + 3.0 * c1 * n * n / xi)
