"""Compare the compiled and pure-Python evaluation kernels.

Every corpus integrand and primitive is compiled once, then both backends
evaluate it at the same sample points.  Results must agree bit for bit; the
script reports wall-clock time per backend and the speedup.

    python3 benchmarks/bench_evalkernel.py --max-factors 3 --points 200
"""

import argparse
import sys
import time

import numpy as np

from symint import kernel
from symint.datagen import GeneratorConfig, build_corpus


def _time(backend, progs, xs, ns, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = [backend(p.ops, p.consts, xs, ns, 1e-4, p.stack_size) for p in progs]
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-factors", type=int, default=3)
    ap.add_argument("--points", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)

    if kernel.compiled_backend is None:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
        return 1

    pairs = build_corpus(GeneratorConfig(max_factors=args.max_factors))
    exprs = [e for p in pairs for e in (p.integrand, p.primitive)]
    progs = [kernel.compile_expr(e) for e in exprs]
    rng = np.random.default_rng(0)
    xs = rng.uniform(0.1, 2.0, args.points)
    ns = rng.uniform(0.5, 2.5, args.points)

    t_py, out_py = _time(kernel.python_backend, progs, xs, ns, args.repeats)
    t_cy, out_cy = _time(kernel.compiled_backend, progs, xs, ns, args.repeats)
    same = all(np.array_equal(a, b, equal_nan=True) for a, b in zip(out_py, out_cy))

    evals = len(progs) * args.points
    print(f"expressions      {len(progs)}")
    print(f"points each      {args.points}")
    print(f"python   {t_py:9.4f} s  {evals / t_py:12.0f} evals/s")
    print(f"cython   {t_cy:9.4f} s  {evals / t_cy:12.0f} evals/s")
    print(f"speedup  {t_py / t_cy:9.1f} x")
    print(f"identical        {same}")
    return 0 if same else 2


if __name__ == "__main__":
    sys.exit(main())
