"""
Threshold functions g(u), the trap intensity Lambda_g, trap detection and
bad-edge censuses.

A site is a g-trap at level ``alpha`` when all of its 2d incident weights
are at most ``alpha``.  ``Lambda_g(n) = n^d F(g(n))^{2d}`` is the expected
order of the number of such sites in a box of radius n.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from . import kernels
from .errors import ConfigurationError, DomainError

_KINDS = ("critical", "upper", "lower", "power", "custom")


@dataclass(frozen=True, eq=False)
class ThresholdFamily:
    """A threshold function ``g(u)``, positive and nonincreasing on ``[2, inf)``.

    ``critical``: ``F^{-1}(u^{-1/2})``.
    ``upper``: ``u^{-1/(2 gamma)} ((2 + param) log log u)^{1/(2 d gamma)}``, where
    ``log log u`` is floored at 1 (i.e. for ``u < e^e``) so the function stays
    positive and monotone on the whole half-line.
    ``lower``: ``u^{-1/(2 gamma) - param}``.
    ``power``: ``u^{-param}``.
    ``custom``: log-log interpolation of a table ``(u_i, g_i)``.
    """

    kind: str
    gamma: float
    d: int
    param: float = 0.0
    table: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown threshold family {self.kind!r}")
        if self.kind in ("critical", "upper", "lower") and not self.gamma > 0:
            raise ConfigurationError(f"{self.kind} family needs gamma > 0")
        if self.kind == "upper" and not self.param > 0:
            raise ConfigurationError("upper family needs epsilon > 0")
        if self.kind == "lower" and not self.param > 0:
            raise ConfigurationError("lower family needs delta > 0")
        if self.kind == "power" and not self.param >= 0:
            raise ConfigurationError("power family needs alpha >= 0")
        if self.kind == "custom":
            u, g = (np.asarray(a, dtype=np.float64) for a in self.table)
            if u.size < 2 or np.any(np.diff(u) <= 0) or np.any(u <= 0) or np.any(g <= 0):
                raise ConfigurationError("custom table needs increasing positive u and positive g")
            if np.any(np.diff(g) > 0):
                raise ConfigurationError("custom threshold table must be nonincreasing")

    # constructors ---------------------------------------------------------
    @classmethod
    def critical(cls, gamma, d):
        return cls("critical", gamma, d)

    @classmethod
    def upper(cls, gamma, d, epsilon):
        return cls("upper", gamma, d, epsilon)

    @classmethod
    def lower(cls, gamma, d, delta):
        return cls("lower", gamma, d, delta)

    @classmethod
    def power(cls, alpha, d, gamma=0.0):
        return cls("power", gamma, d, alpha)

    @classmethod
    def custom(cls, u, g, d, gamma=0.0):
        return cls("custom", gamma, d, 0.0, (tuple(np.asarray(u, float)), tuple(np.asarray(g, float))))

    # evaluation -----------------------------------------------------------
    def _loglog_term(self, logu):
        return np.log((2.0 + self.param) * np.maximum(np.log(np.maximum(logu, 1e-300)), 1.0))

    def log_g(self, u, law=None):
        """``log g(u)``; for the critical family of a non-polynomial law, ``law`` is used."""
        u = np.asarray(u, dtype=np.float64)
        if np.any(~(u > 0)):
            raise DomainError("threshold argument must be positive")
        logu = np.log(u)
        if self.kind == "critical":
            if law is not None and law.kind != "polynomial":
                with np.errstate(divide="ignore"):
                    return np.log(law.inverse_cdf(np.minimum(1.0, u ** -0.5)))
            return -logu / (2.0 * self.gamma)
        if self.kind == "upper":
            return -logu / (2.0 * self.gamma) + self._loglog_term(logu) / (2.0 * self.d * self.gamma)
        if self.kind == "lower":
            return -logu * (1.0 / (2.0 * self.gamma) + self.param)
        if self.kind == "power":
            return -self.param * logu
        tu, tg = (np.log(np.asarray(a)) for a in self.table)
        slope_hi = (tg[-1] - tg[-2]) / (tu[-1] - tu[-2])
        out = np.interp(logu, tu, tg)
        return np.where(logu > tu[-1], tg[-1] + slope_hi * (logu - tu[-1]), out)

    def __call__(self, u, law=None):
        out = np.exp(self.log_g(u, law))
        return out if np.ndim(out) else float(out)

    def log_level(self, u, law):
        """``log F(g(u))`` for ``law``, exact in closed form for polynomial laws."""
        u = np.asarray(u, dtype=np.float64)
        if law.kind == "polynomial":
            if self.kind == "critical" and law.gamma == self.gamma:
                lv = -0.5 * np.log(u)
            else:
                lv = law.gamma * self.log_g(u, law)
            return np.minimum(lv, 0.0)
        with np.errstate(divide="ignore"):
            return np.log(law.cdf(np.exp(self.log_g(u, law))))


def lambda_g(law, g, n):
    """``n^d F(g(n))^{2d}``, evaluated in log space."""
    if n < 2:
        raise DomainError("lambda_g needs n >= 2")
    d = g.d
    lv = float(g.log_level(float(n), law))
    if lv == -math.inf:
        return 0.0
    return math.exp(d * math.log(n) + 2 * d * lv)


# ----------------------------------------------------------------------------
# traps and bad edges
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrapReport:
    threshold: float
    trap_sites: np.ndarray
    per_residue_counts: np.ndarray
    bad_edge_max: int = None

    @property
    def count(self):
        return len(self.trap_sites)

    def to_json(self):
        return json.dumps({
            "threshold": self.threshold,
            "traps": [list(map(int, s)) for s in self.trap_sites],
            "per_residue": [int(c) for c in self.per_residue_counts],
            "bad_edge_max": None if self.bad_edge_max is None else int(self.bad_edge_max),
        })


def max_incident(env, n):
    """Largest incident weight at every site of ``B_n`` (array of side 2n+1)."""
    R, d = env.radius, env.d
    if n + 1 > R:
        raise DomainError(f"incident weights on B_{n} need radius {n + 1}")
    box = slice(R - n, R + n + 1)
    below = slice(R - n - 1, R + n)
    out = np.zeros((2 * n + 1,) * d)
    for j in range(d):
        fwd = [box] * d
        bwd = [box] * d
        bwd[j] = below
        out = np.maximum(out, env.weights[j][tuple(fwd)])
        out = np.maximum(out, env.weights[j][tuple(bwd)])
    return out


def find_traps(env, n, alpha, k=2, b=None):
    """All sites of ``B_n`` whose incident weights are all at most ``alpha``.

    Sites are returned in lexicographic order, with counts per residue class
    of ``z_1 + ... + z_d`` modulo ``k``.  When ``b`` is given the bad-edge
    census at the same level is attached.
    """
    if not alpha > 0:
        raise DomainError("trap level must be positive")
    mask = max_incident(env, n) <= alpha
    sites = np.argwhere(mask) - n
    resid = np.mod(sites.sum(axis=1), k) if len(sites) else np.empty(0, dtype=np.int64)
    per = np.bincount(resid, minlength=k).astype(np.int64)
    census = None if b is None else bad_edge_census(env, n, b, alpha)
    return TrapReport(float(alpha), sites, per, census)


def bad_edge_counts(env, radius, alpha):
    """Per-site count of positive-direction edges with weight ``<= alpha`` on ``B_radius``."""
    R, d = env.radius, env.d
    if radius + 1 > R:
        raise DomainError(f"census on B_{radius} needs edges up to radius {radius + 1}")
    box = (slice(R - radius, R + radius + 1),) * d
    counts = np.zeros((2 * radius + 1,) * d, dtype=np.int64)
    for j in range(d):
        counts += env.weights[j][box] <= alpha
    return counts


def bad_edge_census(env, n, b, alpha):
    """``max_{z in B_{n+b}} #{e in E(B_b(z)) : w_e <= alpha}``.

    ``E(A)`` is the set of edges from a site of ``A`` to its neighbour in a
    positive axis direction, so the boxes ``B_b(z)`` reach out to radius
    ``n + 2b`` and their edges to ``n + 2b + 1``.
    """
    if b < 1:
        raise DomainError("census box radius must be >= 1")
    counts = bad_edge_counts(env, n + 2 * b, alpha)
    return int(kernels.box_sums(counts, 2 * b + 1).max())


# ----------------------------------------------------------------------------
# Borel-Cantelli integrals
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegralResult:
    value: float
    exponent: float
    flag: str


def bc_integral(law, g, m, d, u_max, band=0.05):
    """``int_0^{u_max} u^{d-1} F(g(u))^m du`` and a tail classification.

    The flag comes from the local power-law exponent ``p`` of the integrand
    at ``u_max``: ``convergent`` for ``p < -1 - band``, ``divergent`` for
    ``p > -1 + band`` or when ``u * integrand`` is nondecreasing there (the
    integral then grows at least logarithmically), ``marginal`` otherwise.
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    if u_max < 10:
        raise DomainError("u_max must be >= 10")
    grid = np.geomspace(2.0, u_max, 256)
    gv = g.log_g(grid, law)
    if np.any(np.diff(gv) > 1e-12 * np.maximum(1.0, np.abs(gv[1:]))):
        raise ConfigurationError("threshold function is not monotone on [2, u_max]")

    def log_f(u):
        return (d - 1) * np.log(u) + m * g.log_level(u, law)

    def f(u):
        if u <= 0.0:
            return 0.0 if d > 1 else 1.0
        with np.errstate(divide="ignore"):
            return float(np.exp(log_f(u)))

    # breakpoints: decades, plus the crossing g(u) = w_max where F(g) starts to drop
    edges = [0.0, 1.0]
    while edges[-1] * 10 < u_max:
        edges.append(edges[-1] * 10)
    edges.append(float(u_max))
    breaks = []
    target = math.log(law.w_max)

    def h(u):
        return float(g.log_g(u, law)) - target

    for a, b in zip(edges[1:-1], edges[2:]):
        if h(a) >= 0 > h(b):
            breaks.append(optimize.brentq(h, a, b, xtol=1e-14, rtol=1e-14))
    pts = sorted(set(edges + breaks))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(f, a, b, limit=200, epsabs=0.0, epsrel=1e-10)
        total += val

    with np.errstate(divide="ignore", invalid="ignore"):
        lu = math.log(u_max)
        hstep = 1e-3
        hi = log_f(math.exp(lu))
        lo = log_f(math.exp(lu - hstep))
        if not np.isfinite(hi):
            return IntegralResult(total, -math.inf, "convergent")
        p = float((hi - lo) / hstep)
        # u * f(u) at u_max against a factor e^-1 earlier
        growth = float(hi + lu - (log_f(math.exp(lu - 1.0)) + lu - 1.0))
    if p < -1.0 - band:
        flag = "convergent"
    elif p > -1.0 + band or growth >= -1e-12:
        flag = "divergent"
    else:
        flag = "marginal"
    return IntegralResult(total, p, flag)
