"""
Monte Carlo sweeps over seeds and box sizes.

A sweep runs one job per ``(n, seed)``: sample the environment, assemble
the Dirichlet operator, compute the principal eigenpair and the derived
statistics.  Rows are written to ``runs.csv`` in ``(n, seed)`` order
whatever the number of worker processes, followed by ``summary.json`` and
plot data under ``plotdata/``.
"""
import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .environment import BoxSpec, ConductanceLaw, pi_field, sample_environment
from .errors import ConfigurationError, ConvergenceError, DomainError, NumericalError, PreconditionError
from .extremes import (TailModel, ks_distance, limit_cdf, quotient_statistic, scale_h,
                       uniquemax_check)
from .paths import neighbor_map, pathvsrw_bound, subgraph_operator
from .percolation import build_Dn_at, build_hole_map, cluster_density, clusters, threshold_open
from .spectral import assemble_dirichlet_operator, principal_eigenpair
from .traps import ThresholdFamily, find_traps

EXPERIMENTS = ("spectrum", "localization", "scaling", "limit-law", "traps", "percolation", "paths")
HEADER = ["config_hash", "seed", "n", "status", "lambda1", "min_pi", "psi1_zn_sq", "mass_Dn",
          "trap_count", "quotient_stat", "iters", "wall_ms"]
_EIGEN = ("spectrum", "localization", "scaling", "limit-law", "paths")


@dataclass
class ExperimentConfig:
    experiment: str
    d: int = 2
    law: str = "polynomial"
    gamma: float = 0.2
    c: float = 1.0
    n_grid: list = field(default_factory=lambda: [16, 32])
    seeds: int = 10
    seed_base: int = 0
    epsilon: float = None
    epsilon1: float = None
    delta: float = None
    xi: float = None
    p: float = None
    nu_level: float = 0.01
    k: int = 1
    pad: int = None
    tol: float = 1e-10
    solver: str = "direct"
    out: str = "rcm_out"
    threads: int = 1

    # derived ---------------------------------------------------------------
    def make_law(self):
        if self.law == "polynomial":
            return ConductanceLaw.polynomial(self.gamma)
        if self.law == "constant":
            return ConductanceLaw.constant(self.c)
        raise ConfigurationError(f"unknown law {self.law!r}")

    @property
    def pad_value(self):
        return 2 * self.k + 3 if self.pad is None else self.pad

    @property
    def eps1(self):
        """Localization exponent: the configured value or ``min(0.5, 1/(2 gamma) - 2 - 0.01)``."""
        if self.epsilon1 is not None:
            return self.epsilon1
        if self.law != "polynomial":
            return None
        e = min(0.5, 1.0 / (2.0 * self.gamma) - 2.0 - 0.01)
        return e if e > 0 else None

    @property
    def eps_Dn(self):
        """Exponent of the D_n threshold: configured, else ``7 e1 / (8 (2 + e1))``."""
        if self.epsilon is not None:
            return self.epsilon
        e1 = self.eps1
        return None if e1 is None else 7.0 * e1 / (8.0 * (2.0 + e1))

    def seed_list(self):
        return [self.seed_base + i for i in range(self.seeds)]

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if int(self.d) != self.d or self.d < 2:
            raise ConfigurationError("d must be an integer >= 2")
        if not self.n_grid or any(int(n) != n or n < 2 for n in self.n_grid):
            raise ConfigurationError("every n must be an integer >= 2")
        if int(self.seeds) != self.seeds or self.seeds < 1:
            raise ConfigurationError("seed count must be >= 1")
        if self.law not in ("polynomial", "constant"):
            raise ConfigurationError(f"unknown law {self.law!r}")
        if self.law == "polynomial" and not self.gamma > 0:
            raise ConfigurationError("polynomial law needs gamma > 0")
        if self.experiment == "limit-law" and (self.law != "polynomial" or not self.gamma > 0):
            raise ConfigurationError("limit-law needs a polynomial law with gamma > 0")
        if self.law == "constant" and not self.c > 0:
            raise ConfigurationError("constant conductance must be positive")
        if self.experiment == "percolation" and self.p is None and self.xi is None:
            raise ConfigurationError("percolation needs --p or --xi")
        if self.p is not None and not 0 < self.p < 1:
            raise ConfigurationError("p must lie in (0, 1)")
        if not 0 < self.nu_level < 1:
            raise ConfigurationError("nu_level must lie in (0, 1)")
        if self.xi is not None and not self.xi > 0:
            raise ConfigurationError("xi must be positive")
        if self.epsilon is not None and not 0 <= self.epsilon < 1:
            raise ConfigurationError("epsilon must lie in [0, 1)")
        if self.epsilon1 is not None and not 0 < self.epsilon1 < 1:
            raise ConfigurationError("epsilon1 must lie in (0, 1)")
        if self.k < 1 or self.pad_value < 2 * self.k + 2:
            raise ConfigurationError("need k >= 1 and pad >= 2k + 2")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.solver not in ("pcg", "direct"):
            raise ConfigurationError("solver must be pcg or direct")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.experiment == "paths" and self.law != "polynomial":
            raise ConfigurationError("paths needs a polynomial law")
        self.make_law()
        return self

    def hash(self):
        """Digest of everything that affects results (not output path or threads)."""
        data = {k: v for k, v in asdict(self).items() if k not in ("out", "threads")}
        data["n_grid"] = [int(n) for n in data["n_grid"]]
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


# ----------------------------------------------------------------------------
# one job
# ----------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _critical(cfg):
    if cfg.law != "polynomial":
        return None
    return ThresholdFamily.critical(cfg.gamma, cfg.d)


def run_job(cfg, seed, n):
    """Run one ``(seed, n)`` job; returns ``(row dict, extras dict)``."""
    t0 = time.perf_counter()
    law = cfg.make_law()
    row = {"config_hash": cfg.hash(), "seed": seed, "n": n, "status": "ok"}
    extras = {}
    try:
        env = sample_environment(BoxSpec(cfg.d, n, cfg.pad_value), law, seed)
        pf = pi_field(env, n)
        z = pf.argmin_site
        row["min_pi"] = pf.at(z)
        row["quotient_stat"] = quotient_statistic(pf, n, 1)
        g = _critical(cfg)
        if g is not None:
            row["trap_count"] = find_traps(env, n, g(float(n), law)).count

        if cfg.experiment == "percolation":
            _percolation_job(cfg, env, n, law, row, extras)
        elif cfg.experiment in _EIGEN:
            op = assemble_dirichlet_operator(env, n)
            ep = principal_eigenpair(op, tol=cfg.tol, solver=cfg.solver)
            row["lambda1"] = ep.lambda1
            row["iters"] = ep.iterations
            zi = op.site_index(z)
            row["psi1_zn_sq"] = float(ep.psi1[zi] ** 2)
            extras["argmax_at_zn"] = int(ep.argmax() == zi)
            side = 2 * n + 1
            cnt, worst = uniquemax_check(pf.box(n), ep.psi1.reshape((side,) * cfg.d), z)
            extras["uniquemax_checked"] = cnt
            extras["uniquemax_worst"] = worst
            eps = cfg.eps_Dn
            if g is not None and eps is not None:
                try:
                    lab, _ = build_Dn_at(env, g(float(n) ** (1.0 - eps), law), n)
                    inside = lab.box(lab.giant_mask(), n).reshape(-1)
                    row["mass_Dn"] = float(np.sum(ep.psi1[inside] ** 2))
                except PreconditionError:
                    row["status"] = "no_giant"
            if cfg.experiment == "limit-law":
                model = TailModel(law, cfg.d)
                extras["h_lambda1"] = scale_h(model, (2 * n + 1) ** cfg.d) * ep.lambda1
            if cfg.experiment == "spectrum":
                extras["psi1"] = ep.psi1
            if cfg.experiment == "paths":
                _paths_job(cfg, env, n, law, op, ep, seed, row, extras)
    except PreconditionError as e:
        row["status"] = "precondition: " + str(e).replace(",", ";")
    except (ConvergenceError, NumericalError) as e:
        row["status"] = type(e).__name__ + ": " + str(e).replace(",", ";")
    row["wall_ms"] = int(round(1000 * (time.perf_counter() - t0)))
    return row, extras


def _percolation_job(cfg, env, n, law, row, extras):
    xi = cfg.xi if cfg.xi is not None else law.inverse_cdf(1.0 - cfg.p)
    lab = clusters(threshold_open(env, xi), n)
    extras["density"] = cluster_density(lab, n)
    extras["holes"] = len(lab.holes(n))
    try:
        hm = build_hole_map(lab, n)
        extras["hole_map_ok"] = int(hm.is_injective() and hm.max_l1_distance <= hm.bound)
        extras["max_l1"] = hm.max_l1_distance
    except PreconditionError as e:
        extras["hole_map_ok"] = ""
        row["status"] = "precondition: " + str(e).replace(",", ";")


def _paths_job(cfg, env, n, law, op, ep, seed, row, extras):
    """Path bound with G = Z^d, C = D_n and single-edge paths out of the holes."""
    g = _critical(cfg)
    if cfg.xi is not None:
        xi = cfg.xi
    elif cfg.p is not None:
        xi = law.inverse_cdf(1.0 - cfg.p)
    else:
        xi = g(float(n) ** (1.0 - (cfg.epsilon or 0.0)), law)
    lab, holes = build_Dn_at(env, xi, n)
    alpha = law.inverse_cdf(cfg.nu_level)
    pm = neighbor_map(env, holes, alpha)
    cop = subgraph_operator(env, lab.open_edges, lab.giant_mask(), n)
    mu = principal_eigenpair(cop, tol=cfg.tol, positive=False, solver=cfg.solver).lambda1
    # sharpest admissible nu: just below the lightest path edge
    nu_sharp = float(np.nextafter(pm.min_weight, 0.0)) if len(pm) else alpha
    bounds = {"cert": pathvsrw_bound(alpha, 1, mu, cfg.d),
              "sharp": pathvsrw_bound(max(nu_sharp, alpha), 1, mu, cfg.d)}
    rng = np.random.default_rng(seed)
    fs = list(rng.standard_normal((200, op.dim))) + [np.asarray(ep.psi1)]
    worst = {k: math.inf for k in bounds}
    for f in fs:
        ratio = op.form(f) / float(np.dot(f, f))
        for k, b in bounds.items():
            worst[k] = min(worst[k], (ratio - b) / b)
    extras.update(holes=len(holes), mu=mu, nu=alpha, nu_sharp=nu_sharp,
                  bound=bounds["cert"], bound_sharp=bounds["sharp"],
                  slack=worst["cert"], slack_sharp=worst["sharp"])


def _job(args):
    cfg_dict, seed, n = args
    return run_job(ExperimentConfig(**cfg_dict), seed, n)


# ----------------------------------------------------------------------------
# sweep
# ----------------------------------------------------------------------------

@dataclass
class SweepResult:
    rows: list
    extras: list
    summary: dict
    out: str


def run(cfg):
    """Execute a sweep and write ``runs.csv``, ``summary.json`` and ``plotdata/``."""
    cfg.validate()
    jobs = [(n, s) for n in sorted(set(int(n) for n in cfg.n_grid)) for s in cfg.seed_list()]
    os.makedirs(os.path.join(cfg.out, "plotdata"), exist_ok=True)
    cfg_dict = asdict(cfg)
    rows, extras = [], []
    with open(os.path.join(cfg.out, "runs.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        args = [(cfg_dict, s, n) for n, s in jobs]
        if cfg.threads > 1:
            with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
                results = pool.map(_job, args, chunksize=1)
                for row, ex in results:
                    writer.writerow([_fmt(row.get(k)) for k in HEADER])
                    fh.flush()
                    rows.append(row)
                    extras.append(ex)
        else:
            for a in args:
                row, ex = _job(a)
                writer.writerow([_fmt(row.get(k)) for k in HEADER])
                fh.flush()
                rows.append(row)
                extras.append(ex)
    summary = summarize(cfg, rows, extras)
    _write_plotdata(cfg, rows, extras, summary)
    with open(os.path.join(cfg.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return SweepResult(rows, extras, summary, cfg.out)


def _finite(vals):
    arr = np.array([np.nan if v is None or v == "" else float(v) for v in vals], dtype=float)
    return arr[np.isfinite(arr)]


def _stats(vals):
    v = _finite(vals)
    if v.size == 0:
        return None
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3), "count": int(v.size)}


def summarize(cfg, rows, extras):
    """Per-n medians and quartiles plus experiment-specific statistics."""
    out = {"config": asdict(cfg), "config_hash": cfg.hash(), "per_n": {}}
    out["config"].pop("out")
    out["config"].pop("threads")
    viol = 0
    for n in sorted(set(r["n"] for r in rows)):
        sel = [i for i, r in enumerate(rows) if r["n"] == n]
        rs = [rows[i] for i in sel]
        xs = [extras[i] for i in sel]
        entry = {"runs": len(rs), "ok": sum(r["status"] == "ok" for r in rs)}
        for col in ("lambda1", "min_pi", "psi1_zn_sq", "mass_Dn", "trap_count", "quotient_stat"):
            st = _stats([r.get(col) for r in rs])
            if st is not None:
                entry[col] = st
        ratios = [r["lambda1"] / r["min_pi"] for r in rs if r.get("lambda1") is not None]
        if ratios:
            entry["ratio"] = _stats(ratios)
            viol += sum(q > 1 + 1e-10 for q in ratios)
        if any("argmax_at_zn" in x for x in xs):
            hits = [x["argmax_at_zn"] for x in xs if "argmax_at_zn" in x]
            entry["argmax_at_zn_fraction"] = float(np.mean(hits))
            worst = [x["uniquemax_worst"] for x in xs if "uniquemax_worst" in x]
            entry["uniquemax_worst"] = float(max(worst))
            entry["uniquemax_checked"] = int(sum(x.get("uniquemax_checked", 0) for x in xs))
        if any("h_lambda1" in x for x in xs):
            s = np.array([x["h_lambda1"] for x in xs if "h_lambda1" in x])
            entry["ks_limit"] = ks_distance(s, lambda z: limit_cdf(z, cfg.d, cfg.gamma))
        if any("density" in x for x in xs):
            dens = np.array([x["density"] for x in xs])
            entry["density"] = _stats(dens)
            entry["density_ge_0_8"] = int(np.sum(dens >= 0.8))
            okmaps = [x["hole_map_ok"] for x in xs if x.get("hole_map_ok") != ""]
            entry["hole_maps_built"] = len(okmaps)
            entry["hole_maps_valid"] = int(sum(okmaps))
        if any("slack" in x for x in xs):
            ok = [x for x in xs if "slack" in x]
            entry["paths_passing"] = len(ok)
            entry["worst_slack"] = float(min(x["slack"] for x in ok))
            entry["worst_slack_sharp"] = float(min(x["slack_sharp"] for x in ok))
        out["per_n"][str(n)] = entry
    out["trivial_bound_violations"] = int(viol)
    if cfg.experiment == "scaling":
        try:
            fit = scaling_slope(rows)
            out["slope"] = {"slope": fit.slope, "ci_low": fit.ci[0], "ci_high": fit.ci[1],
                            "target": -1.0 / (2.0 * cfg.gamma)}
        except DomainError as e:
            out["slope"] = {"error": str(e)}
    return out


def _write_plotdata(cfg, rows, extras, summary):
    pdir = os.path.join(cfg.out, "plotdata")
    keys = sorted({k for x in extras for k in x if k != "psi1"})
    if keys:
        with open(os.path.join(pdir, "extras.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "n"] + keys)
            for r, x in zip(rows, extras):
                w.writerow([r["seed"], r["n"]] + [_fmt(x.get(k)) if x.get(k) != "" else "" for k in keys])
    for n in sorted(set(r["n"] for r in rows)):
        lam = np.sort(_finite([r.get("lambda1") for r in rows if r["n"] == n]))
        if lam.size:
            _write_pairs(os.path.join(pdir, f"ecdf_lambda1_n{n}.csv"), "lambda1,ecdf",
                         lam, np.arange(1, lam.size + 1) / lam.size)
        hl = np.sort([x["h_lambda1"] for r, x in zip(rows, extras) if r["n"] == n and "h_lambda1" in x])
        if len(hl):
            _write_pairs(os.path.join(pdir, f"ecdf_h_lambda1_n{n}.csv"), "zeta,ecdf,limit_cdf",
                         hl, np.arange(1, len(hl) + 1) / len(hl), limit_cdf(hl, cfg.d, cfg.gamma))
    if cfg.experiment == "scaling" and "slope" in summary and "slope" in summary["slope"]:
        ns = sorted(set(r["n"] for r in rows))
        med = [summary["per_n"][str(n)]["lambda1"]["median"] for n in ns]
        _write_pairs(os.path.join(pdir, "slope_fit.csv"), "log_n,log_median_lambda1",
                     np.log(ns), np.log(med))
    for r, x in zip(rows, extras):
        if "psi1" in x:
            side = 2 * r["n"] + 1
            coords = np.indices((side,) * cfg.d).reshape(cfg.d, -1).T - r["n"]
            path = os.path.join(pdir, f"psi1_seed{r['seed']}_n{r['n']}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([f"x{i + 1}" for i in range(cfg.d)] + ["psi1"])
                for c, v in zip(coords, x["psi1"]):
                    w.writerow(list(c) + [repr(float(v))])


def _write_pairs(path, header, *cols):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for vals in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


# ----------------------------------------------------------------------------
# scaling
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    ci: tuple
    log_n: np.ndarray
    log_median: np.ndarray


def scaling_slope(records, resamples=1000, seed=0):
    """Least-squares slope of ``log median lambda1`` against ``log n`` with a bootstrap CI.

    The bootstrap resamples seeds with replacement within each ``n``.
    Needs at least 3 distinct ``n`` with at least 10 finite values each.
    """
    groups = {}
    for r in records:
        lam = r.get("lambda1") if isinstance(r, dict) else r.lambda1
        n = r["n"] if isinstance(r, dict) else r.n
        if lam is None or lam == "" or not np.isfinite(float(lam)):
            continue
        groups.setdefault(int(n), []).append(float(lam))
    ns = sorted(n for n, v in groups.items() if len(v) >= 10)
    if len(ns) < 3:
        raise DomainError("slope needs at least 3 values of n with at least 10 runs each")
    x = np.log(np.array(ns, dtype=float))
    data = [np.array(groups[n]) for n in ns]
    y = np.log([np.median(v) for v in data])
    slope = float(np.polyfit(x, y, 1)[0])
    rng = np.random.default_rng(seed)
    boot = np.empty(resamples)
    for b in range(resamples):
        yb = np.log([np.median(v[rng.integers(0, v.size, v.size)]) for v in data])
        boot[b] = np.polyfit(x, yb, 1)[0]
    lo, hi = np.quantile(boot, [0.025, 0.975])
    return SlopeFit(slope, (float(lo), float(hi)), x, y)


def read_runs(path):
    """Rows of a ``runs.csv`` as dicts with numeric fields parsed."""
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                if k in ("config_hash", "status"):
                    row[k] = v
                elif v == "":
                    row[k] = None
                elif k in ("seed", "n", "trap_count", "iters", "wall_ms"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            out.append(row)
    return out
