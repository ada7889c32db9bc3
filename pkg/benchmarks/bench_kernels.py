"""
Time the numba and numpy flavours of every hot kernel on the same inputs.

    python benchmarks/bench_kernels.py [--n 64] [--repeat 5]

Both flavours are importable regardless of RCMLAB_DISABLE_NUMBA; the
numba versions are compiled (or loaded from cache) before timing.
"""
import argparse
import time

import numpy as np

from rcmlab import kernels
from rcmlab._accel import NUMBA_AVAILABLE
from rcmlab.environment import BoxSpec, ConductanceLaw, sample_environment
from rcmlab.spectral import assemble_dirichlet_operator


def best_of(fn, repeat):
    fn()  # warm-up (JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n):
    d = 2
    side = 2 * n + 11
    env = sample_environment(BoxSpec(d, n), ConductanceLaw.polynomial(0.5), 7)
    op = assemble_dirichlet_operator(env, n)
    A = op.matrix.tocsr()
    pcg_args = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, 1.0 / op.diag,
                np.ones(op.dim), np.zeros(op.dim), 1e-10, 10 * op.dim)
    rng = np.random.default_rng(0)
    open_edges = rng.random((d, side ** d)) < 0.55
    counts = rng.integers(0, 3, size=(side, side)).astype(np.int64)
    return [
        ("edge_uniforms", (np.uint64(3), -side // 2, side, d), (3, -side // 2, side, d),
         kernels._edge_uniforms_nb, kernels._edge_uniforms_np),
        ("pcg", pcg_args, pcg_args, kernels._pcg_nb, kernels._pcg_np),
        ("label_components", (open_edges, side, d), (open_edges, side, d),
         kernels._label_nb, kernels._label_np),
        ("box_sums", (counts, 5), (counts, 5), kernels._box_sums_nb, kernels._box_sums_np),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<18}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, a_nb, a_np, f_nb, f_np in cases(args.n):
        t_nb = best_of(lambda: f_nb(*[np.copy(x) if isinstance(x, np.ndarray) else x for x in a_nb]), args.repeat)
        t_np = best_of(lambda: f_np(*[np.copy(x) if isinstance(x, np.ndarray) else x for x in a_np]), args.repeat)
        print(f"{name:<18}{1e3 * t_nb:>12.3f}{1e3 * t_np:>12.3f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
