"""
Thresholded environments as bond percolation: open clusters, the giant
cluster proxy, holes, and the injective hole-to-cluster map.

An edge is open when its weight is strictly above the threshold.  The
infinite cluster is not observable in a finite box; its proxy is the
cluster with the most sites in the working box ``B_n``, searched in the
padded box so that clusters can connect through the collar.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import DomainError, PreconditionError


def threshold_open(env, xi):
    """Edge field ``w_e > xi`` with the same layout as ``env.weights``."""
    if not xi > 0:
        raise DomainError("threshold must be positive")
    with np.errstate(invalid="ignore"):
        return env.weights > xi  # NaN slots compare False


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    """Connected components of open edges on ``B_radius``.

    ``label`` is a cube of side ``2 radius + 1``; ``sizes[c]`` counts all
    labeled sites of cluster ``c`` and ``box_sizes[c]`` those inside ``B_n``.
    """

    open_edges: np.ndarray = field(repr=False)
    label: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)
    box_sizes: np.ndarray = field(repr=False)
    giant_id: int
    radius: int
    n: int

    @property
    def d(self):
        return self.label.ndim

    def box(self, arr, n=None):
        n = self.n if n is None else n
        off = self.radius - n
        return arr[(slice(off, off + 2 * n + 1),) * self.d]

    def giant_mask(self):
        """Giant-cluster membership over the whole labeled region."""
        return self.label == self.giant_id

    def label_at(self, x):
        x = tuple(int(c) for c in x)
        if max(abs(c) for c in x) > self.radius:
            raise DomainError(f"site {x} outside the labeled region")
        return int(self.label[tuple(c + self.radius for c in x)])

    def holes(self, n=None):
        """Sites of ``B_n`` outside the giant cluster, lexicographic order."""
        n = self.n if n is None else n
        return np.argwhere(~self.box(self.giant_mask(), n)) - n

    def hole_components(self):
        """Labels of the nearest-neighbour components of the complement of the giant."""
        comp = ~self.giant_mask()
        side, d = comp.shape[0], self.d
        nb = np.zeros((d,) + comp.shape, dtype=bool)
        for j in range(d):
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[j] = slice(0, side - 1)
            hi[j] = slice(1, side)
            nb[(j,) + tuple(lo)] = comp[tuple(lo)] & comp[tuple(hi)]
        lab, _ = kernels.label_components(nb.reshape(d, -1), side, d)
        lab = lab.reshape(comp.shape)
        return np.where(comp, lab, -1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.d)] + ["label"])
            sites = np.indices(self.label.shape).reshape(self.d, -1).T - self.radius
            for s, lab in zip(sites, self.label.reshape(-1)):
                w.writerow(list(s) + [int(lab)])


def clusters(open_edges, n):
    """Label the open clusters of an edge field on its full box.

    ``open_edges`` has shape ``(d, L, ..., L)``; the giant is the cluster
    with the most sites in ``B_n`` (lowest label on ties, i.e. the one met
    first in lexicographic order).
    """
    oe = np.array(open_edges, dtype=bool)
    d = oe.shape[0]
    side = oe.shape[1]
    R = (side - 1) // 2
    if n > R:
        raise DomainError(f"working box B_{n} exceeds labeled radius {R}")
    for j in range(d):
        sl = [j] + [slice(None)] * d
        sl[1 + j] = side - 1
        oe[tuple(sl)] = False
    lab, count = kernels.label_components(oe.reshape(d, -1), side, d)
    lab = lab.reshape((side,) * d)
    sizes = np.bincount(lab.reshape(-1), minlength=count)
    off = R - n
    inbox = lab[(slice(off, off + 2 * n + 1),) * d]
    box_sizes = np.bincount(inbox.reshape(-1), minlength=count)
    giant = int(np.argmax(box_sizes))
    for a in (oe, lab, sizes, box_sizes):
        a.setflags(write=False)
    return ClusterLabeling(oe, lab, sizes, box_sizes, giant, R, n)


def cluster_density(labeling, n=None):
    """``|B_n intersect giant| / |B_n|``."""
    n = labeling.n if n is None else n
    inbox = labeling.box(labeling.giant_mask(), n)
    return float(np.count_nonzero(inbox)) / inbox.size


def edge_boundary_ratio(labeling, A, n=None):
    """Open edges from ``A`` to the rest of the giant, divided by ``|A|``."""
    n = labeling.n if n is None else n
    A = np.atleast_2d(np.asarray(A, dtype=np.int64))
    if A.size == 0:
        raise DomainError("A must be nonempty")
    R, d = labeling.radius, labeling.d
    if np.any(np.abs(A) > n) or n + 1 > R:
        raise DomainError("A must lie in B_n with B_{n+1} labeled")
    giant = labeling.giant_mask()
    idx = A + R
    if not np.all(giant[tuple(idx.T)]):
        raise DomainError("A is not contained in the giant cluster")
    inA = np.zeros(giant.shape, dtype=bool)
    inA[tuple(idx.T)] = True
    oe = labeling.open_edges
    count = 0
    for j in range(d):
        e = np.zeros(d, dtype=np.int64)
        e[j] = 1
        up = idx + e
        count += int(np.sum(oe[(j,) + tuple(idx.T)] & ~inA[tuple(up.T)]))
        dn = idx - e
        count += int(np.sum(oe[(j,) + tuple(dn.T)] & ~inA[tuple(dn.T)]))
    return count / len(A)


# ----------------------------------------------------------------------------
# hole map
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HoleMap:
    sources: np.ndarray
    images: np.ndarray
    cell_side: int
    max_l1_distance: int
    bound: float

    def __len__(self):
        return len(self.sources)

    def as_dict(self):
        return {tuple(map(int, s)): tuple(map(int, t)) for s, t in zip(self.sources, self.images)}

    def is_injective(self):
        return len({tuple(t) for t in self.images.tolist()}) == len(self.images)

    def validate(self):
        if not self.is_injective():
            raise PreconditionError("hole map is not injective")
        if self.max_l1_distance > self.bound:
            raise PreconditionError("hole map exceeds its distance bound")
        return True

    def to_csv(self, path):
        d = self.sources.shape[1] if len(self.sources) else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"h{i + 1}" for i in range(d)] + [f"g{i + 1}" for i in range(d)] + ["l1"])
            for s, t in zip(self.sources, self.images):
                w.writerow(list(s) + list(t) + [int(np.abs(s - t).sum())])


def hole_cell_radius(n, d):
    """``m = floor((log n)^{d+1})``, at least 1."""
    return max(1, int(math.floor(math.log(n) ** (d + 1))))


def build_hole_map(labeling, n=None):
    """Map each hole of ``B_n`` injectively to a giant-cluster site of its cell.

    Cells are the boxes ``B_m((2m+1) z)`` (clipped to the labeled region).
    Holes are processed in lexicographic order and each takes the nearest
    still-free giant site of its cell in l1 distance (lexicographic ties).
    """
    n = labeling.n if n is None else n
    d, R = labeling.d, labeling.radius
    m = hole_cell_radius(max(n, 2), d)
    bound = 2 * d * math.log(max(n, 2)) ** (d + 1)
    holes = labeling.holes(n)
    if len(holes) == 0:
        empty = np.empty((0, d), dtype=np.int64)
        return HoleMap(empty, empty.copy(), 2 * m + 1, 0, bound)
    giant = np.argwhere(labeling.giant_mask()) - R
    cell_of = lambda pts: np.floor_divide(pts + m, 2 * m + 1)
    hole_cells = cell_of(holes)
    giant_cells = cell_of(giant)
    src, img = [], []
    for cell in np.unique(hole_cells, axis=0):
        hs = holes[np.all(hole_cells == cell, axis=1)]
        gs = giant[np.all(giant_cells == cell, axis=1)]
        if len(gs) <= len(hs):
            centre = tuple(int(c) * (2 * m + 1) for c in cell)
            raise PreconditionError(
                f"density precondition failed in cell centred at {centre}: "
                f"{len(gs)} giant sites for {len(hs)} holes")
        taken = np.zeros(len(gs), dtype=bool)
        big = np.iinfo(np.int64).max
        for h in hs:
            dist = np.abs(gs - h).sum(axis=1)
            dist[taken] = big
            k = int(np.argmin(dist))  # giant sites are lexicographic, so ties go to the first
            taken[k] = True
            src.append(h)
            img.append(gs[k])
    src = np.array(src, dtype=np.int64)
    img = np.array(img, dtype=np.int64)
    order = np.lexsort(src.T[::-1])
    src, img = src[order], img[order]
    dmax = int(np.abs(src - img).sum(axis=1).max())
    return HoleMap(src, img, 2 * m + 1, dmax, bound)


# ----------------------------------------------------------------------------
# D_n, I_n and sparseness
# ----------------------------------------------------------------------------

def build_Dn_at(env, threshold, n, min_density=0.5):
    """Giant cluster of ``{w > threshold}`` on the padded box and the in-box holes."""
    if n > env.radius:
        raise DomainError(f"B_{n} exceeds the materialized radius {env.radius}")
    lab = clusters(threshold_open(env, threshold), n)
    dens = cluster_density(lab, n)
    if dens < min_density:
        raise PreconditionError(f"no giant proxy: largest cluster has in-box density {dens:.3f}")
    return lab, lab.holes(n)


def build_Dn(env, g, epsilon, n):
    """``D_n`` at threshold ``g(n^{1-epsilon})`` and ``I_n = B_n minus D_n``."""
    if not 0 <= epsilon < 1:
        raise DomainError("epsilon must lie in [0, 1)")
    threshold = g(float(n) ** (1.0 - epsilon), env.law)
    return build_Dn_at(env, threshold, n)


def is_b_sparse(sites, b):
    """True iff every box ``B_b(z)`` holds at most one site.

    Two sites share such a box iff their l-infinity distance is at most
    ``2b``.  Returns ``(ok, witness)`` with a violating pair on failure.
    """
    pts = np.asarray(sites, dtype=np.int64)
    if pts.size == 0 or len(pts) < 2:
        return True, None
    pairs = cKDTree(pts).query_pairs(r=2 * b + 0.5, p=np.inf, output_type="ndarray")
    if len(pairs) == 0:
        return True, None
    i, j = sorted(map(tuple, pairs))[0]
    return False, (tuple(map(int, pts[i])), tuple(map(int, pts[j])))
