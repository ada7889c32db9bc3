"""
Extreme values of the local speed field.

The smallest values of ``pi`` over a box are asymptotically independent.
To make this exact, the lattice is split into disjoint cubes
``N + y`` (``N = {1, ..., 2k+2}^d``, ``y`` on a lattice of period
``2k+3``); the minima ``chi_y`` over these cubes are i.i.d.  This module
provides that decomposition, the distribution functions ``F_pi`` and
``F_chi``, the scale ``h`` of the limit law and the test statistics used to
compare samples against it.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError

TABLE_POINTS = 2 ** 14


# ----------------------------------------------------------------------------
# order statistics
# ----------------------------------------------------------------------------

def order_statistics(field_, n, count):
    """The ``count`` smallest values of ``pi`` on ``B_n`` with their sites.

    Ties are broken lexicographically by site.
    """
    vals = np.asarray(field_.box(n)).reshape(-1)
    if count > vals.size:
        raise DomainError(f"asked for {count} order statistics of {vals.size} values")
    order = np.argsort(vals, kind="stable")[:count]
    shape = (2 * n + 1,) * field_.d
    out = []
    for i in order:
        site = tuple(int(c) - n for c in np.unravel_index(int(i), shape))
        out.append((float(vals[i]), site))
    return out


def quotient_statistic(field_, n, k=1):
    """``1 - pi_(k) / pi_(k+1)`` over ``B_n``."""
    if (2 * n + 1) ** field_.d <= k:
        raise DomainError("box too small for this order")
    vals = np.sort(np.asarray(field_.box(n)).reshape(-1), kind="stable")
    return 1.0 - vals[k - 1] / vals[k]


def quotient_from_values(a, b):
    return 1.0 - a / b


# ----------------------------------------------------------------------------
# lattice decomposition
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Decomposition:
    """Cubes ``N + p z + x`` with ``N = {1, ..., 2k+2}^d`` and period ``p = 2k+3``.

    Their union is ``V + x``, the sites whose coordinates minus ``x`` are all
    nonzero modulo ``p``.
    """

    k: int
    d: int
    shift: tuple = None

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("k must be >= 1")
        if self.shift is None:
            object.__setattr__(self, "shift", (0,) * self.d)

    @property
    def period(self):
        return 2 * self.k + 3

    @property
    def cube_side(self):
        return 2 * self.k + 2

    def contains(self, sites):
        """Membership of each site in ``V + shift``."""
        s = np.atleast_2d(np.asarray(sites, dtype=np.int64)) - np.asarray(self.shift)
        return np.all(np.mod(s, self.period) != 0, axis=1)


def find_shift(A, k, d=None):
    """A shift ``x in B_{k+1}`` with every site of ``A`` in ``V + x``.

    Per coordinate, at most ``|A| <= 2k+2`` residues modulo ``2k+3`` are
    forbidden (those of the sites themselves); the smallest free residue is
    taken and mapped into ``[-k-1, k+1]``.
    """
    pts = np.asarray(A, dtype=np.int64)
    if d is None:
        d = pts.shape[1] if pts.ndim == 2 and pts.size else 2
    pts = pts.reshape(-1, d)
    if len(pts) > 2 * (k + 1):
        raise DomainError(f"at most {2 * (k + 1)} sites can be separated with k={k}")
    p = 2 * k + 3
    shift = []
    for j in range(d):
        forbidden = set(np.mod(pts[:, j], p).tolist())
        r = next(r for r in range(p) if r not in forbidden)
        shift.append(r if r <= k + 1 else r - p)
    shift = tuple(int(s) for s in shift)
    dec = Decomposition(k, d, shift)
    if len(pts) and not np.all(dec.contains(pts)):
        raise AssertionError("shift failed its own membership check")
    return shift


def chi_field(field_, k, shift, n):
    """Minima of ``pi`` over every cube ``N + y`` (``y in p Z^d + shift``) inside ``B_{n+2k+1}``.

    Returns ``(ys, chis)`` with ``ys`` the cube offsets in lexicographic order.
    """
    d = field_.d
    outer = n + 2 * k + 1
    if outer > field_.radius:
        raise DomainError(f"chi on B_{n} needs pi up to radius {outer}, have {field_.radius}")
    p, side = 2 * k + 3, 2 * k + 2
    shift = np.asarray(shift, dtype=np.int64)
    # y + 1 >= -outer and y + side <= outer
    axes = []
    for j in range(d):
        lo = -outer - 1
        first = lo + ((shift[j] - lo) % p)
        axes.append(np.arange(first, outer - side + 1, p))
    vals = np.asarray(field_.box(outer))
    counts = [a.size for a in axes]
    if min(counts) == 0:
        return np.empty((0, d), dtype=np.int64), np.empty(0)
    # each cube is a run of `side` sites followed by a one-site gap, so the
    # region splits into blocks of period p; pad one site for the last gap
    block = np.pad(vals, [(0, 1)] * d, constant_values=np.inf)
    sl = tuple(slice(int(a[0]) + 1 + outer, int(a[0]) + 1 + outer + c * p) for a, c in zip(axes, counts))
    block = block[sl]
    shape = []
    for c in counts:
        shape += [c, p]
    block = block.reshape(shape)[tuple([slice(None), slice(0, side)] * d)]
    chis = block.min(axis=tuple(range(1, 2 * d, 2)))
    grids = np.meshgrid(*axes, indexing="ij")
    ys = np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.int64)
    return ys, chis.reshape(-1).astype(np.float64)


def chi_samples(law, d, k, n, seeds, seed_base=0):
    """Pooled ``chi`` values from ``seeds`` independent environments (zero shift).

    Translates are disjoint within an environment and environments are
    independent, so the pool is an i.i.d. sample of ``F_chi``.
    """
    from .environment import BoxSpec, pi_field, sample_environment

    out = []
    for s in range(seed_base, seed_base + seeds):
        env = sample_environment(BoxSpec(d, n, 2 * k + 3), law, s)
        out.append(chi_field(pi_field(env, n), k, (0,) * d, n)[1])
    return np.concatenate(out)


def empirical_cdf(samples):
    """Right-continuous ECDF of ``samples`` as a vectorized callable."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        raise DomainError("need at least one sample")

    def F(a):
        return np.searchsorted(x, np.asarray(a, dtype=np.float64), side="right") / x.size
    return F


# ----------------------------------------------------------------------------
# distribution functions
# ----------------------------------------------------------------------------

def liouville_constant(gamma, d):
    """``Gamma(1+gamma)^{2d} / Gamma(1+2d gamma)``."""
    return math.exp(2 * d * special.gammaln(1 + gamma) - special.gammaln(1 + 2 * d * gamma))


@dataclass(frozen=True, eq=False)
class TailModel:
    """Distribution of ``pi`` (sum of 2d i.i.d. weights) for a law.

    For polynomial laws ``F_pi(a) = C a^{2d gamma}`` exactly on ``a <= 1``;
    elsewhere (and for other laws) a convolution table on ``[0, a_max]`` is
    used.  ``F_pi`` can also be supplied directly as a callable.
    """

    law: object
    d: int
    F_pi_func: object = field(default=None, repr=False)
    a_max: float = None
    points: int = TABLE_POINTS

    def __post_init__(self):
        if self.a_max is None and self.law is not None:
            object.__setattr__(self, "a_max", 2 * self.d * self.law.w_max)
        object.__setattr__(self, "_table", None)

    @property
    def gamma(self):
        return self.law.gamma if self.law is not None else float("nan")

    @property
    def C_gamma(self):
        return liouville_constant(self.law.gamma, self.d)

    @property
    def closed_form(self):
        return self.F_pi_func is None and self.law is not None and self.law.kind == "polynomial"

    # convolution table -----------------------------------------------------
    def table(self):
        """``(grid, cdf)`` of the 2d-fold convolution on ``[0, a_max]``."""
        if self._table is None:
            object.__setattr__(self, "_table", convolution_table(self.law, self.d, self.a_max, self.points))
        return self._table

    def F_pi_table(self, a):
        grid, cdf = self.table()
        a = np.asarray(a, dtype=np.float64)
        if np.any(a < 0) or np.any(a > self.a_max):
            raise DomainError(f"F_pi table covers [0, {self.a_max}]")
        out = np.interp(a, grid, cdf)
        return out if out.ndim else float(out)

    def F_pi(self, a):
        a = np.asarray(a, dtype=np.float64)
        if np.any(a < 0):
            raise DomainError("F_pi needs a >= 0")
        if self.F_pi_func is not None:
            out = np.asarray(self.F_pi_func(a), dtype=np.float64)
        elif self.closed_form and np.all(a <= 1.0):
            out = self.C_gamma * a ** (2 * self.d * self.law.gamma)
        else:
            out = np.asarray(self.F_pi_table(a))
        return out if out.ndim else float(out)

    def to_csv(self, path, grid=None):
        grid = np.linspace(0, self.a_max, 257) if grid is None else np.asarray(grid)
        np.savetxt(path, np.column_stack([grid, self.F_pi(grid)]), delimiter=",",
                   header="a,F_pi", comments="")


def convolution_table(law, d, a_max, points=TABLE_POINTS):
    """CDF of the sum of ``2d`` i.i.d. weights on a uniform grid of ``[0, a_max]``.

    Each cell ``[ih, (i+1)h]`` of the weight's law is replaced by two atoms at
    its endpoints carrying its exact mass and reproducing its exact
    conditional mean, which makes the discretization error second order in
    ``h`` even where the density is singular.  The atoms are convolved
    ``2d - 1`` times; the CDF at a grid point counts half of its own atom.
    """
    m = 2 * d
    h = a_max / (points - 1)
    edges = np.arange(points + 1) * h
    F = np.asarray(law.cdf(edges))
    mass = np.diff(F)
    first = edges[1:] * F[1:] - edges[:-1] * F[:-1] - np.diff(law.cdf_integral(edges))
    safe = np.where(mass > 0, mass, 1.0)
    t = np.clip((first / safe - edges[:-1]) / h, 0.0, 1.0)
    t = np.where(mass > 0, t, 0.0)
    atoms = np.zeros(points + 1)
    atoms[:-1] += mass * (1.0 - t)
    atoms[1:] += mass * t
    atoms = atoms[:points]
    acc = atoms.copy()
    for _ in range(m - 1):
        acc = np.convolve(acc, atoms)[:points]
    cdf = np.cumsum(acc) - 0.5 * acc
    return np.arange(points) * h, np.clip(cdf, 0.0, 1.0)


def F_pi_eval(model, a):
    return model.F_pi(a)


def F_chi_bounds(model, k, a):
    """``(K F_pi(a) - binom(K, 2) F(a)^{4d-1}, K F_pi(a))`` with ``K = (2k+2)^d``."""
    if a < 0:
        raise DomainError("a must be >= 0")
    K = (2 * k + 2) ** model.d
    fp = model.F_pi(a)
    upper = K * fp
    lower = upper - math.comb(K, 2) * float(model.law.cdf(a)) ** (4 * model.d - 1)
    return lower, upper


def scale_h(model, N, method="auto"):
    """``h(N)``: the ``s`` with ``F_pi(1/s) = 1/N``.

    Closed form ``(C N)^{1/(2 d gamma)}`` for polynomial laws when
    ``C N >= 1``; bisection on ``F_pi`` otherwise or when ``method="bisect"``.
    """
    if N < 2:
        raise DomainError("N must be >= 2")
    if method not in ("auto", "closed", "bisect"):
        raise DomainError(f"unknown method {method!r}")
    if method != "bisect" and model.closed_form:
        C, e = model.C_gamma, 2 * model.d * model.law.gamma
        if C * N >= 1.0:
            return (C * N) ** (1.0 / e)
        if method == "closed":
            raise DomainError("closed form needs C N >= 1")
    target = 1.0 / N
    amax = model.a_max if model.a_max is not None else 1.0
    lo = 1.0 / amax
    if model.F_pi(1.0 / lo) < target:
        raise DomainError("1/N lies above the range of F_pi")
    hi = 2 * lo
    while model.F_pi(1.0 / hi) >= target:
        hi *= 2.0
        if hi > 1e300:
            raise DomainError("1/N lies below the representable range of F_pi")
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (llo + lhi)
        if model.F_pi(math.exp(-mid)) >= target:
            llo = mid
        else:
            lhi = mid
        if lhi - llo < 1e-14:
            break
    return math.exp(0.5 * (llo + lhi))


def limit_cdf(zeta, d, gamma):
    """``1 - exp(-zeta^{2 d gamma})``."""
    z = np.asarray(zeta, dtype=np.float64)
    if np.any(z < 0):
        raise DomainError("zeta must be >= 0")
    with np.errstate(divide="ignore"):
        out = np.where(z > 0, -np.expm1(-(z ** (2 * d * gamma))), 0.0)
    return out if out.ndim else float(out)


def ks_distance(samples, cdf):
    """``sup_x |ECDF(x) - cdf(x)|``."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        raise DomainError("need at least one sample")
    F = np.asarray(cdf(x), dtype=np.float64)
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def spacing_diagnostics(sigma_samples, i):
    """``i (sigma_(i) - sigma_(i+1))`` per replicate, order statistics descending."""
    out = []
    for row in sigma_samples:
        s = np.sort(np.asarray(row, dtype=np.float64))[::-1]
        if s.size < i + 1:
            raise DomainError(f"need at least {i + 1} values per replicate")
        out.append(i * (s[i - 1] - s[i]))
    return np.array(out)


# ----------------------------------------------------------------------------
# eigenvector bound at non-minimal sites
# ----------------------------------------------------------------------------

def uniquemax_check(pi_box, psi_box, z, tol=1e-8):
    """Check ``psi(y) <= m_y / (1 - pi_z / pi_y)`` for all ``y`` with ``pi_y > pi_z``, ``y`` not adjacent to ``z``.

    ``m_y`` is twice the largest ``psi`` among the neighbours of ``y`` (zero
    outside the box).  Arrays are cubes over ``B_n``; ``z`` is a site.
    Returns ``(number_checked, worst_excess)``; the bound holds when
    ``worst_excess <= tol``.
    """
    pi_box = np.asarray(pi_box)
    psi = np.asarray(psi_box)
    d = psi.ndim
    n = (psi.shape[0] - 1) // 2
    padded = np.pad(psi, 1)
    side = psi.shape[0]
    nbmax = np.zeros_like(psi)
    for j in range(d):
        for s in (0, 2):
            sl = [slice(1, side + 1)] * d
            sl[j] = slice(s, s + side)
            nbmax = np.maximum(nbmax, padded[tuple(sl)])
    m = 2.0 * nbmax
    zi = tuple(int(c) + n for c in z)
    piz = pi_box[zi]
    coords = np.indices(psi.shape)
    l1 = sum(np.abs(coords[j] - zi[j]) for j in range(d))
    mask = (pi_box > piz) & (l1 > 1)
    if not np.any(mask):
        return 0, -math.inf
    bound = m[mask] / (1.0 - piz / pi_box[mask])
    excess = psi[mask] - bound
    return int(mask.sum()), float(excess.max())
