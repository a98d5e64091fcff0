"""Time the Cython kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one CSV row per (kernel, size): median seconds for each backend and
the speed-up. Outputs of the two backends are checked for agreement first.
"""

import argparse
import sys
import timeit

import numpy as np
import scipy.sparse as sp

from dbgan import kernels


def cases(rng):
    for n, k in [(500, 50), (2708, 500), (4000, 500)]:
        log_lam = np.log(rng.uniform(0.05, 2.0, n))
        log_e = kernels.log_esp_table(log_lam, k, backend="python")
        u = rng.random(n)
        yield f"log_esp_table n={n} k={k}", lambda b, a=log_lam, k=k: kernels.log_esp_table(a, k, backend=b)
        yield f"select_eigvecs n={n} k={k}", lambda b, e=log_e, a=log_lam, k=k, u=u: kernels.select_eigvecs(e, a, k, u, backend=b)
    for n, d in [(2708, 32), (3327, 128), (19717, 32)]:
        mat = sp.random(n, n, density=5.0 / n, format="csr", random_state=rng)
        dense = rng.normal(size=(n, d))
        yield f"csr_spmm n={n} d={d}", lambda b, m=mat, x=dense: kernels.csr_spmm(m, x, backend=b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    try:
        kernels._resolve("cython")
    except ImportError:
        print("Cython extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print("kernel,python_s,cython_s,speedup")
    for name, fn in cases(rng):
        if not np.allclose(fn("python"), fn("cython"), rtol=1e-10, atol=1e-12, equal_nan=True):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t = {b: np.median(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in ("python", "cython")}
        print(f"{name},{t['python']:.5f},{t['cython']:.5f},{t['python'] / t['cython']:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
