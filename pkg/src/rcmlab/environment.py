"""
I.i.d. conductance environments on boxes of Z^d.

Edges are stored in an array of shape ``(d, L, ..., L)`` with ``L = 2R + 1``
and ``R`` the materialized radius: slot ``[j][x + R]`` holds the weight of
the edge ``{x, x + e_j}``; slots whose edge would leave the box are NaN.
Each weight is the inverse CDF of the law applied to a uniform obtained by
hashing ``(seed, x, j)``, so an edge has the same weight in every box that
contains it and for every traversal order.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError

TABLE_POINTS = 2 ** 14


@dataclass(frozen=True)
class BoxSpec:
    """Box ``B_n`` of dimension ``d`` materialized out to radius ``n + pad``."""

    d: int
    n: int
    pad: int = 5

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ConfigurationError(f"dimension must be an integer >= 2, got {self.d}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"box radius must be an integer >= 1, got {self.n}")
        if int(self.pad) != self.pad or self.pad < 0:
            raise ConfigurationError(f"pad must be an integer >= 0, got {self.pad}")

    @property
    def radius(self):
        return self.n + self.pad

    @property
    def side(self):
        return 2 * self.radius + 1

    def n_sites(self, n=None):
        n = self.n if n is None else n
        return (2 * n + 1) ** self.d

    def n_edges(self):
        """Number of edges with both endpoints in ``B_{n+pad}``."""
        L = self.side
        return self.d * L ** (self.d - 1) * (L - 1)


_KIND_CODES = {"constant": 0, "polynomial": 1, "table": 2}


@dataclass(frozen=True, eq=False)
class ConductanceLaw:
    """Law of a single conductance, described through its inverse CDF.

    ``polynomial(gamma)`` has ``F(a) = a**gamma`` on ``[0, 1]``;
    ``constant(c)`` is a point mass; ``table`` linearly interpolates an
    inverse CDF sampled on a uniform grid of ``[0, 1]``.
    """

    kind: str
    gamma: float = 0.0
    c: float = 1.0
    a_star: float = 1.0
    table: np.ndarray = field(default=None, repr=False)

    # constructors ---------------------------------------------------------
    @classmethod
    def constant(cls, c=1.0):
        if not c > 0:
            raise ConfigurationError("constant conductance must be positive")
        return cls("constant", gamma=0.0, c=float(c), a_star=float(c))

    @classmethod
    def polynomial(cls, gamma):
        if not gamma > 0:
            raise ConfigurationError(f"polynomial law needs gamma > 0, got {gamma}")
        return cls("polynomial", gamma=float(gamma), c=1.0, a_star=1.0)

    @classmethod
    def tabulated(cls, values, gamma=0.0, a_star=1.0):
        q = np.array(values, dtype=np.float64)
        if q.ndim != 1 or q.size < 2:
            raise ConfigurationError("inverse-CDF table needs at least two points")
        if np.any(np.diff(q) < 0):
            raise ConfigurationError("inverse-CDF table must be nondecreasing")
        if q[0] < 0:
            raise ConfigurationError("conductances must be nonnegative")
        q.setflags(write=False)
        return cls("table", gamma=float(gamma), c=1.0, a_star=float(a_star), table=q)

    @classmethod
    def table_from(cls, law, points=TABLE_POINTS):
        """Tabulate another law's inverse CDF on ``points`` grid points."""
        u = np.linspace(0.0, 1.0, points)
        return cls.tabulated(law.inverse_cdf(u), gamma=law.gamma, a_star=law.a_star)

    # evaluation -----------------------------------------------------------
    def validate(self):
        if self.kind == "polynomial" and not self.gamma > 0:
            raise ConfigurationError(f"polynomial law needs gamma > 0, got {self.gamma}")
        if self.kind == "constant" and not self.c > 0:
            raise ConfigurationError("constant conductance must be positive")
        if self.kind not in _KIND_CODES:
            raise ConfigurationError(f"unknown law kind {self.kind!r}")
        return self

    @property
    def w_max(self):
        if self.kind == "polynomial":
            return 1.0
        if self.kind == "constant":
            return self.c
        return float(self.table[-1])

    def inverse_cdf(self, u):
        u_arr = np.asarray(u, dtype=np.float64)
        if np.any(~((u_arr >= 0.0) & (u_arr <= 1.0))):
            raise DomainError("inverse CDF argument must lie in [0, 1]")
        if self.kind == "polynomial":
            out = u_arr ** (1.0 / self.gamma)
        elif self.kind == "constant":
            out = np.full_like(u_arr, self.c)
        else:
            grid = np.linspace(0.0, 1.0, self.table.size)
            out = np.interp(u_arr, grid, self.table)
        return out if out.ndim else float(out)

    def cdf(self, s):
        """``F(s) = P[w <= s]``."""
        s_arr = np.asarray(s, dtype=np.float64)
        if self.kind == "polynomial":
            out = np.clip(s_arr, 0.0, 1.0) ** self.gamma
            out = np.where(s_arr <= 0.0, 0.0, out)
        elif self.kind == "constant":
            out = (s_arr >= self.c).astype(np.float64)
        else:
            q = self.table
            grid = np.linspace(0.0, 1.0, q.size)
            # largest grid index with q <= s, then invert the linear piece
            i = np.searchsorted(q, s_arr, side="right") - 1
            out = np.empty_like(s_arr)
            below = i < 0
            top = i >= q.size - 1
            mid = ~(below | top)
            out[below] = 0.0
            out[top] = 1.0
            im = i[mid]
            span = q[im + 1] - q[im]
            frac = np.where(span > 0, (s_arr[mid] - q[im]) / np.where(span > 0, span, 1.0), 0.0)
            out[mid] = grid[im] + frac * (grid[im + 1] - grid[im])
        return out if out.ndim else float(out)

    def cdf_integral(self, s):
        """``int_0^s F(t) dt``, exact for every law kind."""
        s_arr = np.maximum(np.asarray(s, dtype=np.float64), 0.0)
        if self.kind == "polynomial":
            g = self.gamma
            out = np.minimum(s_arr, 1.0) ** (1.0 + g) / (1.0 + g) + np.maximum(s_arr - 1.0, 0.0)
        elif self.kind == "constant":
            out = np.maximum(s_arr - self.c, 0.0)
        else:
            # F is piecewise linear between the knots of the table
            q = self.table
            u = np.linspace(0.0, 1.0, q.size)
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (u[1:] + u[:-1]) * np.diff(q))])
            i = np.clip(np.searchsorted(q, s_arr, side="right") - 1, 0, q.size - 1)
            Fs = np.asarray(self.cdf(s_arr))
            out = np.where(s_arr < q[0], 0.0,
                           cum[i] + (np.minimum(s_arr, q[-1]) - q[i]) * 0.5 * (u[i] + np.minimum(Fs, 1.0))
                           + np.maximum(s_arr - q[-1], 0.0))
        return out if out.ndim else float(out)

    # serialization ---------------------------------------------------------
    def descriptor(self):
        table = () if self.table is None else tuple(self.table.tolist())
        return (self.kind, self.gamma, self.c, self.a_star, table)

    def __eq__(self, other):
        return isinstance(other, ConductanceLaw) and self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(self.descriptor()[:4])


@dataclass(frozen=True, eq=False)
class Environment:
    """Immutable edge-indexed conductance field with its provenance."""

    spec: BoxSpec
    law: ConductanceLaw
    seed: int
    weights: np.ndarray = field(repr=False)
    edited: bool = False

    @property
    def d(self):
        return self.spec.d

    @property
    def radius(self):
        return self.spec.radius

    @property
    def side(self):
        return self.spec.side

    def _index(self, x):
        x = tuple(int(c) for c in x)
        if len(x) != self.d or max(abs(c) for c in x) > self.radius:
            raise DomainError(f"site {x} outside the materialized box B_{self.radius}")
        return tuple(c + self.radius for c in x)

    def weight(self, x, j):
        """Weight of the edge ``{x, x + e_j}``."""
        w = self.weights[(j,) + self._index(x)]
        if not np.isfinite(w):
            raise DomainError(f"edge ({tuple(x)}, axis {j}) leaves the materialized box")
        return float(w)

    def edge_weight(self, x, y):
        x = tuple(int(c) for c in x)
        y = tuple(int(c) for c in y)
        diff = [b - a for a, b in zip(x, y)]
        if sorted(map(abs, diff)) != [0] * (self.d - 1) + [1]:
            raise DomainError(f"{x} and {y} are not nearest neighbours")
        j = next(i for i, v in enumerate(diff) if v)
        return self.weight(x, j) if diff[j] == 1 else self.weight(y, j)

    def incident(self, x):
        """The 2d incident weights in canonical order (+e_0, -e_0, +e_1, ...)."""
        out = []
        for j in range(self.d):
            e = np.zeros(self.d, dtype=int)
            e[j] = 1
            out.append(self.weight(x, j))
            out.append(self.weight(tuple(np.asarray(x) - e), j))
        return out

    def with_edges(self, changes):
        """Copy with some edges overwritten; ``changes`` maps ``(x, y) -> w``."""
        w = np.array(self.weights, copy=True)
        for (x, y), val in changes.items():
            if not val > 0:
                raise DomainError("conductances must be strictly positive")
            self.edge_weight(x, y)  # validates adjacency and materialization
            x = tuple(int(c) for c in x)
            y = tuple(int(c) for c in y)
            lo = min(x, y, key=sum)
            j = next(i for i in range(self.d) if x[i] != y[i])
            w[(j,) + self._index(lo)] = val
        w.setflags(write=False)
        return Environment(self.spec, self.law, self.seed, w, edited=True)

    def with_weights(self, func):
        """Copy with every weight replaced by ``func(weights)`` (NaN slots kept)."""
        w = np.array(self.weights, copy=True)
        valid = np.isfinite(w)
        w[valid] = func(w[valid])
        if np.any(~(w[valid] > 0)):
            raise DomainError("conductances must be strictly positive")
        w.setflags(write=False)
        return Environment(self.spec, self.law, self.seed, w, edited=True)

    def valid_mask(self):
        return np.isfinite(self.weights)

    def edge_array(self):
        """Weights as a flat array in edge-id order (lexicographic site, then axis)."""
        flat = np.moveaxis(self.weights, 0, -1).reshape(-1)
        return flat[np.isfinite(flat)]

    # binary I/O -----------------------------------------------------------
    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_encode_header(self))
            fh.write(self.edge_array().astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        return _decode(blob)


def _valid_slots(spec):
    L = spec.side
    valid = np.ones((spec.d,) + (L,) * spec.d, dtype=bool)
    for j in range(spec.d):
        sl = [j] + [slice(None)] * spec.d
        sl[1 + j] = L - 1
        valid[tuple(sl)] = False
    return valid


def sample_environment(spec, law, seed):
    """Sample the conductances of every edge inside ``B_{n+pad}``."""
    law.validate()
    R, L, d = spec.radius, spec.side, spec.d
    u = kernels.edge_uniforms(seed, -R, L, d).reshape((d,) + (L,) * d)
    valid = _valid_slots(spec)
    w = np.full(u.shape, np.nan)
    w[valid] = law.inverse_cdf(u[valid])
    if np.any(~(w[valid] > 0)):
        raise ConfigurationError("law underflows to zero in double precision")
    w.setflags(write=False)
    return Environment(spec, law, int(seed), w)


def uniform_field(spec, c=1.0):
    """Environment with every weight equal to ``c``."""
    return sample_environment(spec, ConductanceLaw.constant(c), 0)


# ----------------------------------------------------------------------------
# speed measure
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpeedField:
    """Local speed ``pi_x`` on ``B_{R-1}`` and its lexicographic argmin over ``B_n``."""

    values: np.ndarray = field(repr=False)
    radius: int
    n: int
    argmin_site: tuple

    @property
    def d(self):
        return self.values.ndim

    def at(self, x):
        x = tuple(int(c) for c in x)
        if max(abs(c) for c in x) > self.radius:
            raise DomainError(f"pi at {x} needs edges outside the materialized box")
        return float(self.values[tuple(c + self.radius for c in x)])

    def box(self, n):
        """Values restricted to ``B_n`` (array of side ``2n+1``)."""
        if n > self.radius:
            raise DomainError(f"B_{n} exceeds the speed field radius {self.radius}")
        off = self.radius - n
        return self.values[(slice(off, off + 2 * n + 1),) * self.d]

    def argmin(self, n):
        vals = self.box(n)
        flat = int(np.argmin(vals))
        return tuple(int(i) - n for i in np.unravel_index(flat, vals.shape))


def pi_field(env, n=None):
    """Sum of the 2d incident weights at every site of ``B_{R-1}``."""
    n = env.spec.n if n is None else n
    R, d = env.radius, env.d
    if n > R - 1:
        raise DomainError(f"pi on B_{n} needs edges up to radius {n + 1} > {R}")
    w = env.weights
    inner = slice(1, 2 * R)
    lower = slice(0, 2 * R - 1)
    acc = np.zeros((2 * R - 1,) * d)
    for j in range(d):
        fwd = [inner] * d
        bwd = [inner] * d
        bwd[j] = lower
        acc = acc + w[j][tuple(fwd)]
        acc = acc + w[j][tuple(bwd)]
    acc.setflags(write=False)
    field_ = SpeedField(acc, R - 1, n, ())
    return SpeedField(acc, R - 1, n, field_.argmin(n))


# ----------------------------------------------------------------------------
# binary format
# ----------------------------------------------------------------------------

MAGIC = b"RCMENV\x00\x01"
VERSION = 1
_HEAD = struct.Struct("<8sIIIIQ")
_LAW = struct.Struct("<BdddQ")


def _encode_header(env):
    law = env.law
    table = np.empty(0) if law.table is None else law.table
    head = _HEAD.pack(MAGIC, VERSION, env.d, env.spec.n, env.spec.pad,
                      int(env.seed) & 0xFFFFFFFFFFFFFFFF)
    lawb = _LAW.pack(_KIND_CODES[law.kind], law.gamma, law.c, law.a_star, table.size)
    return head + lawb + table.astype("<f8").tobytes()


def _decode(blob):
    magic, version, d, n, pad, seed = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC or version != VERSION:
        raise DomainError("not an rcmlab environment file")
    off = _HEAD.size
    code, gamma, c, a_star, tlen = _LAW.unpack_from(blob, off)
    off += _LAW.size
    table = np.frombuffer(blob, dtype="<f8", count=tlen, offset=off).astype(np.float64)
    off += 8 * tlen
    kind = {v: k for k, v in _KIND_CODES.items()}[code]
    if kind == "table":
        law = ConductanceLaw.tabulated(table, gamma=gamma, a_star=a_star)
    else:
        law = ConductanceLaw(kind, gamma=gamma, c=c, a_star=a_star)
    spec = BoxSpec(d, n, pad)
    flat = np.frombuffer(blob, dtype="<f8", offset=off).astype(np.float64)
    if flat.size != spec.n_edges():
        raise DomainError(f"weight block has {flat.size} entries, expected {spec.n_edges()}")
    valid = np.moveaxis(_valid_slots(spec), 0, -1).reshape(-1)
    full = np.full(valid.size, np.nan)
    full[valid] = flat
    L = spec.side
    w = np.moveaxis(full.reshape((L,) * d + (d,)), -1, 0).copy()
    w.setflags(write=False)
    return Environment(spec, law, seed, w)
