"""
Dirichlet operator of the random conductance Laplacian on a box, and its
principal eigenpair.

The operator is ``A = -L_w`` restricted to functions vanishing outside
``B_n``: the diagonal is the full local speed ``pi_x`` (edges leaving the box
included), off-diagonals are ``-w_xy`` for edges inside the box.  The
principal eigenpair is computed by inverse power iteration, each step
solving ``A u = v`` with Jacobi-preconditioned conjugate gradients.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from . import kernels
from .environment import pi_field
from .errors import ConvergenceError, DomainError, NumericalError

DENSE_LIMIT = 4096


@dataclass(frozen=True, eq=False)
class DirichletOperator:
    """Sparse SPD matrix on a finite site set with zero exterior condition.

    ``sites`` lists coordinates in index order; ``edges`` holds
    ``(i, j, w)`` for every interior edge once; ``exterior`` is the total
    weight from each site to sites outside the set (the row sum of A).
    """

    n: int
    d: int
    sites: np.ndarray = field(repr=False)
    diag: np.ndarray = field(repr=False)
    edges: tuple = field(repr=False)
    exterior: np.ndarray = field(repr=False)
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def dim(self):
        return self.diag.size

    def site_index(self, x):
        """Index of site ``x`` for box operators (lexicographic order)."""
        x = np.asarray(x, dtype=np.int64)
        if np.any(np.abs(x) > self.n):
            raise DomainError(f"site {tuple(x)} outside B_{self.n}")
        side = 2 * self.n + 1
        return int(np.ravel_multi_index(tuple(x + self.n), (side,) * self.d))

    def form(self, f):
        """Quadratic form as the nonnegative edge sum (no cancellation)."""
        f = np.asarray(f, dtype=np.float64).reshape(-1)
        i, j, w = self.edges
        df = f[i] - f[j]
        return float(np.sum(w * df * df) + np.sum(self.exterior * f * f))

    def rayleigh(self, f):
        f = np.asarray(f, dtype=np.float64).reshape(-1)
        return self.form(f) / float(np.dot(f, f))

    def to_dense(self):
        if self.dim > DENSE_LIMIT:
            raise DomainError(f"dense form refused for dimension {self.dim} > {DENSE_LIMIT}")
        return self.matrix.toarray()


def operator_from_edges(sites, diag, edges, n, d):
    """Build an operator from a site list, diagonal and interior edge triples."""
    i, j, w = (np.asarray(a) for a in edges)
    i = i.astype(np.int64)
    j = j.astype(np.int64)
    w = w.astype(np.float64)
    diag = np.asarray(diag, dtype=np.float64)
    N = diag.size
    inner = np.zeros(N)
    np.add.at(inner, i, w)
    np.add.at(inner, j, w)
    exterior = np.maximum(diag - inner, 0.0)
    rows = np.concatenate([np.arange(N), i, j])
    cols = np.concatenate([np.arange(N), j, i])
    vals = np.concatenate([diag, -w, -w])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    mat.sort_indices()
    for a in (diag, i, j, w, exterior):
        a.setflags(write=False)
    return DirichletOperator(n, d, np.asarray(sites), diag, (i, j, w), exterior, mat)


def box_sites(d, n):
    """Coordinates of ``B_n`` in lexicographic order, shape ``((2n+1)^d, d)``."""
    side = 2 * n + 1
    return np.indices((side,) * d).reshape(d, -1).T - n


def assemble_dirichlet_operator(env, n):
    """Sparse ``-L_w`` on ``B_n`` with zero condition outside."""
    R, d = env.radius, env.d
    if n < 0 or n + 1 > R:
        raise DomainError(f"operator on B_{n} needs edges up to radius {n + 1}, env has {R}")
    side = 2 * n + 1
    pf = pi_field(env, min(n, R - 1))
    diag = np.ascontiguousarray(pf.box(n)).reshape(-1)
    idx = np.arange(side ** d).reshape((side,) * d)
    box = (slice(R - n, R + n + 1),) * d
    ii, jj, ww = [], [], []
    for j in range(d):
        wj = env.weights[j][box]
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, side - 1)
        hi[j] = slice(1, side)
        ii.append(idx[tuple(lo)].reshape(-1))
        jj.append(idx[tuple(hi)].reshape(-1))
        ww.append(wj[tuple(lo)].reshape(-1))
    edges = (np.concatenate(ii), np.concatenate(jj), np.concatenate(ww))
    return operator_from_edges(box_sites(d, n), diag, edges, n, d)


def dirichlet_energy(env, f, n):
    """``1/2 sum_x sum_{y~x} w_xy (f(x) - f(y))^2`` with ``f = 0`` off ``B_n``.

    ``f`` is either a flat vector over ``B_n`` or a cube over some ``B_m``,
    ``m >= n`` (which must then vanish outside ``B_n``).
    """
    d, R = env.d, env.radius
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        if f.size != (2 * n + 1) ** d:
            raise DomainError("flat vector length does not match B_n")
        f = f.reshape((2 * n + 1,) * d)
    m = (f.shape[0] - 1) // 2
    if f.shape != (2 * m + 1,) * d or m < n:
        raise DomainError("f must be a cube over B_m with m >= n")
    off = m - n
    inner = f[(slice(off, off + 2 * n + 1),) * d]
    if np.count_nonzero(f) != np.count_nonzero(inner):
        raise DomainError("f is not supported in B_n")
    if n + 1 > R:
        raise DomainError(f"energy on B_{n} needs edges up to radius {n + 1}")
    g = np.pad(inner, 1)  # B_{n+1}
    box = (slice(R - n - 1, R + n + 2),) * d
    total = 0.0
    for j in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[j] = slice(0, 2 * n + 2)
        hi[j] = slice(1, 2 * n + 3)
        diff = g[tuple(hi)] - g[tuple(lo)]
        w = env.weights[j][box][tuple(lo)]
        total += float(np.sum(w * diff * diff))
    return total


# ----------------------------------------------------------------------------
# eigenpairs
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EigenPair:
    lambda1: float
    psi1: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    cg_iterations: int = 0

    def argmax(self):
        return int(np.argmax(self.psi1))


def homogeneous_lambda1(d, n, c=1.0):
    """Principal Dirichlet eigenvalue of ``c`` times the lattice Laplacian on ``B_n``."""
    return 2.0 * d * c * (1.0 - np.cos(np.pi / (2 * n + 2)))


def _residual_floor(op, psi):
    # round-off level of ||A psi - lambda psi|| for this matrix and vector
    absA = abs(op.matrix)
    return 8.0 * np.finfo(float).eps * float(np.linalg.norm(absA @ np.abs(psi)))


STALL_STEPS = 300


def _lanczos_fallback(op, solve, v, tol, it, best, max_iter):
    A = op.matrix
    N = op.dim
    if N <= 8:
        w, V = np.linalg.eigh(A.toarray())
        u = V[:, 0]
        lam = op.form(u)
        return EigenPair(lam, u, float(np.linalg.norm(A @ u - lam * u)), it)
    OPinv = sla.LinearOperator((N, N), matvec=lambda b: solve(np.ravel(b), np.ravel(b)), dtype=np.float64)
    try:
        w, V = sla.eigsh(A, k=min(4, N - 2), sigma=0.0, which="LM", OPinv=OPinv, v0=v,
                         tol=min(tol, 1e-12), maxiter=max_iter)
    except sla.ArpackNoConvergence as e:
        raise ConvergenceError(f"shift-invert Lanczos did not converge: {e}", best) from None
    u = V[:, int(np.argmin(w))]
    u = u / np.linalg.norm(u)
    lam = op.form(u)
    res = float(np.linalg.norm(A @ u - lam * u))
    if res > max(tol * lam, _residual_floor(op, u)) * 10:
        raise ConvergenceError("shift-invert Lanczos left a large residual", best)
    return EigenPair(lam, u, res, it)


def principal_eigenpair(op, tol=1e-10, max_iter=10_000, positive=True, start=None,
                        solver="pcg"):
    """Smallest eigenpair of ``op`` by inverse iteration.

    Each step solves ``A u = v``: with ``solver="pcg"`` by Jacobi-preconditioned
    conjugate gradients, with ``solver="direct"`` by one sparse LU
    factorization reused across steps.  Heavy-tailed weights make the Jacobi
    preconditioned system badly conditioned, so the direct solve is much
    faster on large boxes; both give the same pair to round-off.

    Stops once the Rayleigh quotient changes by at most ``tol`` relative and
    the residual ``||A psi - lambda psi||`` is at most ``tol * lambda`` (or
    the round-off floor of the matrix-vector product, whichever is larger).
    With ``positive=True`` the vector is sign-normalized and checked to be
    nonnegative, as the Perron-Frobenius property requires for box operators.
    """
    A = op.matrix
    N = op.dim
    if N == 0:
        raise DomainError("empty operator")
    diag = op.diag
    if np.any(~(diag > 0)):
        raise NumericalError("operator diagonal must be positive")
    dinv = 1.0 / diag
    if start is None:
        v = np.full(N, 1e-3 / np.sqrt(N))
        v[int(np.argmin(diag))] += 1.0
    else:
        v = np.array(start, dtype=np.float64)
    v /= np.linalg.norm(v)
    lam = op.form(v)
    inner_max = 10 * N
    total_cg = 0
    best = None
    if solver == "direct":
        lu = sla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
    elif solver != "pcg":
        raise DomainError(f"unknown solver {solver!r}")
    def solve(rhs, guess):
        nonlocal total_cg
        if solver == "direct":
            return lu.solve(rhs)
        x, k, info = kernels.pcg(A, dinv, rhs, guess, 1e-13, inner_max)
        total_cg += k
        if info < 0:
            raise NumericalError("CG breakdown")
        return x

    converged = False
    for it in range(1, max_iter + 1):
        if it > STALL_STEPS:
            # a nearly degenerate bottom pair stalls plain inverse iteration;
            # shift-invert Lanczos separates it
            best = _lanczos_fallback(op, solve, v, tol, it, best, max_iter)
            converged = True
            break
        u = solve(v, v / lam)
        nu = np.linalg.norm(u)
        if not np.isfinite(nu) or nu == 0.0:
            raise NumericalError("inverse iteration produced a non-finite vector")
        v = u / nu
        lam_new = op.form(v)
        res = float(np.linalg.norm(A @ v - lam_new * v))
        best = EigenPair(lam_new, v, res, it, total_cg)
        change = abs(lam_new - lam)
        lam = lam_new
        if change <= tol * lam and res <= max(tol * lam, _residual_floor(op, v)):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"inverse iteration did not converge in {max_iter} steps", best)
    psi = best.psi1
    if psi[np.argmax(np.abs(psi))] < 0:
        psi = -psi
    if positive:
        if psi.min() < -1e-10:
            raise NumericalError(f"principal vector has negative entry {psi.min():.3e}")
        psi = np.maximum(psi, 0.0)
        psi /= np.linalg.norm(psi)
    lam = op.form(psi)
    res = float(np.linalg.norm(A @ psi - lam * psi))
    psi.setflags(write=False)
    return EigenPair(lam, psi, res, best.iterations, total_cg)


def dense_oracle(op):
    """Full spectrum (ascending) and orthonormal eigenvectors by ``eigh``."""
    if op.dim > DENSE_LIMIT:
        raise DomainError(f"dense oracle refused for dimension {op.dim} > {DENSE_LIMIT}")
    return np.linalg.eigh(op.to_dense())
