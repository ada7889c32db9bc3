"""
Hot inner loops, each in a numba and a numpy flavour.

The public names at the bottom of the module dispatch on
:data:`rcmlab._accel.USE_NUMBA`.  Every pair is required to agree exactly
(hashing, labeling, box counts) or to within round-off of a different but
fixed summation order (the conjugate-gradient solver).
"""
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ._accel import USE_NUMBA, njit

# splitmix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_COORD_OFFSET = 1 << 31
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


# --------------------------------------------------------------------------
# counter-based uniforms
# --------------------------------------------------------------------------

@njit(cache=True)
def _mix_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _edge_uniforms_nb(seed, lo, side, d):
    nsite = side ** d
    out = np.empty((d, nsite))
    golden = np.uint64(0x9E3779B97F4A7C15)
    h0 = _mix_nb(np.uint64(seed) + golden)
    coords = np.empty(d, dtype=np.int64)
    for s in range(nsite):
        rem = s
        for a in range(d - 1, -1, -1):
            coords[a] = lo + rem % side
            rem //= side
        h = h0
        for a in range(d):
            c = np.uint64(coords[a] + 2147483648)
            h = _mix_nb((h ^ c) + golden)
        for j in range(d):
            hj = _mix_nb((h ^ np.uint64(j)) + golden)
            out[j, s] = (float(hj >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
    return out


def _mix_np(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _edge_uniforms_np(seed, lo, side, d):
    with np.errstate(over="ignore"):
        h0 = _mix_np(np.uint64(seed) + _GOLDEN)
        axes = np.indices((side,) * d).reshape(d, -1)
        h = np.full(axes.shape[1], h0, dtype=np.uint64)
        for a in range(d):
            c = (axes[a] + lo + _COORD_OFFSET).astype(np.uint64)
            h = _mix_np((h ^ c) + _GOLDEN)
        out = np.empty((d, h.size))
        for j in range(d):
            hj = _mix_np((h ^ np.uint64(j)) + _GOLDEN)
            out[j] = ((hj >> np.uint64(11)).astype(np.float64) + 0.5) * _INV53
    return out


# --------------------------------------------------------------------------
# Jacobi-preconditioned conjugate gradient on a CSR matrix
# --------------------------------------------------------------------------

@njit(cache=True)
def _pcg_nb(indptr, indices, data, dinv, b, x, tol, maxiter):
    n = b.size
    r = np.empty(n)
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        r[i] = b[i] - acc
    z = dinv * r
    p = z.copy()
    rz = 0.0
    bb = 0.0
    for i in range(n):
        rz += r[i] * z[i]
        bb += b[i] * b[i]
    bnorm = np.sqrt(bb)
    if bnorm == 0.0:
        return x, 0, 0
    ap = np.empty(n)
    for it in range(maxiter):
        pap = 0.0
        for i in range(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * p[indices[k]]
            ap[i] = acc
            pap += p[i] * acc
        if not (pap > 0.0) or not np.isfinite(pap):
            return x, it, -1
        alpha = rz / pap
        rr = 0.0
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * ap[i]
            rr += r[i] * r[i]
        if np.sqrt(rr) <= tol * bnorm:
            return x, it + 1, 0
        rz_new = 0.0
        for i in range(n):
            z[i] = dinv[i] * r[i]
            rz_new += r[i] * z[i]
        beta = rz_new / rz
        rz = rz_new
        for i in range(n):
            p[i] = z[i] + beta * p[i]
    return x, maxiter, 1


def _pcg_np(indptr, indices, data, dinv, b, x, tol, maxiter):
    n = b.size
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = np.sum(r * z)
    bnorm = np.sqrt(np.sum(b * b))
    if bnorm == 0.0:
        return x, 0, 0
    for it in range(maxiter):
        ap = A @ p
        pap = np.sum(p * ap)
        if not (pap > 0.0) or not np.isfinite(pap):
            return x, it, -1
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if np.sqrt(np.sum(r * r)) <= tol * bnorm:
            return x, it + 1, 0
        z = dinv * r
        rz_new = np.sum(r * z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return x, maxiter, 1


# --------------------------------------------------------------------------
# connected components of open-edge graphs on a box
# --------------------------------------------------------------------------

@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def _label_nb(open_edges, side, d):
    # open_edges: (d, side**d) bool, edge from site s to s + e_j
    nsite = side ** d
    parent = np.arange(nsite)
    stride = np.empty(d, dtype=np.int64)
    st = 1
    for a in range(d - 1, -1, -1):
        stride[a] = st
        st *= side
    for s in range(nsite):
        for j in range(d):
            # slots pointing out of the box are ignored
            if open_edges[j, s] and (s // stride[j]) % side != side - 1:
                t = s + stride[j]
                rs = _find(parent, s)
                rt = _find(parent, t)
                if rs < rt:
                    parent[rt] = rs
                elif rt < rs:
                    parent[rs] = rt
    labels = np.empty(nsite, dtype=np.int64)
    remap = np.full(nsite, -1, dtype=np.int64)
    nlab = 0
    for s in range(nsite):
        r = _find(parent, s)
        if remap[r] < 0:
            remap[r] = nlab
            nlab += 1
        labels[s] = remap[r]
    return labels, nlab


def _label_np(open_edges, side, d):
    nsite = side ** d
    idx = np.arange(nsite).reshape((side,) * d)
    rows, cols = [], []
    for j in range(d):
        mask = open_edges[j].reshape((side,) * d).copy()
        edge = [slice(None)] * d
        edge[j] = side - 1
        mask[tuple(edge)] = False
        src = idx[mask]
        rows.append(src)
        cols.append(src + idx.strides[j] // idx.itemsize)
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    g = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(nsite, nsite))
    nlab, raw = connected_components(g, directed=False)
    # canonical relabel: order of first appearance in the lexicographic scan
    _, first = np.unique(raw, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(nlab, dtype=np.int64)
    remap[order] = np.arange(nlab)
    return remap[raw].astype(np.int64), int(nlab)


# --------------------------------------------------------------------------
# sliding box sums of integer site counts
# --------------------------------------------------------------------------

@njit(cache=True)
def _window_sum_axis_nb(arr3, width):
    # arr3: (pre, m, post) int64; windows of `width` along the middle axis
    pre, m, post = arr3.shape
    out = np.zeros((pre, m - width + 1, post), dtype=np.int64)
    for a in range(pre):
        for c in range(post):
            acc = 0
            for i in range(width):
                acc += arr3[a, i, c]
            out[a, 0, c] = acc
            for i in range(1, m - width + 1):
                acc += arr3[a, i + width - 1, c] - arr3[a, i - 1, c]
                out[a, i, c] = acc
    return out


def _box_sums_nb(counts, width):
    out = np.ascontiguousarray(counts, dtype=np.int64)
    for ax in range(out.ndim):
        shp = out.shape
        pre = int(np.prod(shp[:ax], dtype=np.int64))
        post = int(np.prod(shp[ax + 1:], dtype=np.int64))
        res = _window_sum_axis_nb(out.reshape(pre, shp[ax], post), width)
        out = res.reshape(shp[:ax] + (shp[ax] - width + 1,) + shp[ax + 1:])
    return out


def _box_sums_np(counts, width):
    out = np.asarray(counts, dtype=np.int64)
    for ax in range(out.ndim):
        c = np.cumsum(out, axis=ax)
        zero = np.zeros_like(np.take(c, [0], axis=ax))
        c = np.concatenate([zero, c], axis=ax)
        m = out.shape[ax]
        out = np.take(c, np.arange(width, m + 1), axis=ax) - np.take(c, np.arange(0, m - width + 1), axis=ax)
    return out


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def edge_uniforms(seed, lo, side, d):
    """Uniforms in (0, 1) for every (site, axis) slot of the box ``[lo, lo+side)^d``.

    Returns an array of shape ``(d, side**d)``; site order is lexicographic
    (C order).  The value for an edge depends only on ``seed``, the absolute
    coordinates of its lower endpoint and its axis.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    if USE_NUMBA:
        return _edge_uniforms_nb(np.uint64(seed), int(lo), int(side), int(d))
    return _edge_uniforms_np(seed, int(lo), int(side), int(d))


def pcg(A, dinv, b, x0, tol, maxiter):
    """Solve ``A x = b`` for SPD CSR ``A`` with Jacobi preconditioner ``dinv``.

    Returns ``(x, iterations, info)`` with info 0 on convergence, 1 when
    ``maxiter`` was hit and -1 on a non-positive curvature breakdown.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    args = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data.astype(np.float64),
            np.asarray(dinv, dtype=np.float64), np.asarray(b, dtype=np.float64), x,
            float(tol), int(maxiter))
    if USE_NUMBA:
        return _pcg_nb(*args)
    return _pcg_np(*args)


def label_components(open_edges, side, d):
    """Canonical component labels of the open-edge graph on a box.

    ``open_edges`` has shape ``(d, side**d)``; slot ``[j, s]`` is the edge from
    site ``s`` to ``s + e_j``.  Labels are numbered by first appearance in
    lexicographic site order.  Slots on the far face of the box (pointing
    outside) are ignored.  Returns ``(labels, count)``.
    """
    oe = np.ascontiguousarray(open_edges, dtype=np.bool_)
    if USE_NUMBA:
        labels, nlab = _label_nb(oe, int(side), int(d))
        return labels, int(nlab)
    return _label_np(oe, int(side), int(d))


def box_sums(counts, width):
    """Sums of ``counts`` over every axis-aligned cube of side ``width``."""
    if USE_NUMBA:
        return _box_sums_nb(counts, int(width))
    return _box_sums_np(counts, int(width))
