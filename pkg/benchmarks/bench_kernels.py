"""Compare the compiled and pure-Python trajectory kernels.

    python benchmarks/bench_kernels.py --dims 12 40 140 --steps 2000

Systems are random quadratic fields with the sparsity of a lifted reduced
model (block structure is irrelevant to the kernels, only nonzero count is).
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from liftlearn import kernels
from liftlearn.integrators import QuadraticSystem


def random_system(m: int, density: float, rng: np.random.Generator) -> QuadraticSystem:
    S = rng.standard_normal((m, m)) / np.sqrt(m)
    A = S - S.T
    n_terms = max(1, int(density * m * m * (m + 1) / 2))
    rows = rng.integers(0, m, n_terms)
    left = rng.integers(0, m, n_terms)
    right = rng.integers(0, m, n_terms)
    return QuadraticSystem(A, rows, left, right, 0.01 * rng.standard_normal(n_terms))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[12, 40, 140])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--density", type=float, default=0.05, help="fraction of nonzero quadratic coefficients")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the Python kernels only")
    rng = np.random.default_rng(args.seed)
    print(f"{'stepper':9s} {'dim':>5s} " + " ".join(f"{b + ' [s]':>14s}" for b in backends) + "  speedup")
    for m in args.dims:
        sys_ = random_system(m, args.density, rng)
        x0 = 0.1 * rng.standard_normal(m)
        for name, fn in (("kahan", kernels.kahan_trajectory), ("midpoint", kernels.midpoint_trajectory)):
            best = {}
            for b in backends:
                best[b] = min(timeit.repeat(lambda: fn(sys_, x0, 0.01, args.steps, backend=b),
                                            number=1, repeat=args.repeats))
            speed = f"{best['python'] / best['compiled']:8.1f}x" if "compiled" in best else ""
            print(f"{name:9s} {m:5d} " + " ".join(f"{best[b]:14.4f}" for b in backends) + "  " + speed)


if __name__ == "__main__":
    main()
