"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs once to trigger compilation, then ``repeat`` times; the
best wall time is reported along with the max absolute difference between
the two implementations.
"""
import argparse
import json
import time

import numpy as np

from eulerclt import chaos, kernels
from eulerclt.covariance import GaussianCovariance, corr_matrix_K
from eulerclt.fieldgen import GridSpec, sample_field


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def cases():
    f2 = sample_field(GaussianCovariance(1.0, 2), GridSpec(2, 16.0, 0.05), 1).values
    f3 = sample_field(GaussianCovariance(1.0, 3), GridSpec(3, 4.0, 0.1), 2).values
    grad = np.stack(np.gradient(f2, 0.05, edge_order=2))
    yield ("cell_sum 2-D 321^2", kernels.cell_alternating_sum_numba, kernels.cell_alternating_sum_numpy, (f2,))
    yield ("cell_sum 3-D 41^3", kernels.cell_alternating_sum_numba, kernels.cell_alternating_sum_numpy, (f3,))
    yield ("critical_mask 2-D", kernels.critical_cell_mask_numba, kernels.critical_cell_mask_numpy, (grad,))

    model = GaussianCovariance(1.0, 2)
    table = chaos.CoefficientTable(model, 7)
    pts, _, _ = chaos.lag_grid(model, 8.0, 0.25)
    K = corr_matrix_K(model, pts, table.blocks)
    terms = table.order_terms(7)
    target = {a: c * chaos.multi_factorial(a) for a, c in terms}
    comp = chaos._Composer(terms, table.N, 7, target)
    args = (comp.node_var, comp.node_depth, comp.node_coef, comp.mult, comp.sizes, comp.wt, K)
    yield ("compose n=2 q=7, %d lags" % K.shape[0], kernels.compose_numba, kernels.compose_numpy, args)

    m1 = GaussianCovariance(1.0, 1)
    t1 = chaos.CoefficientTable(m1, 4)
    pairs = [(ca * cb, a, b) for a, ca in t1.order_terms(4) for b, cb in t1.order_terms(4)]
    coef, idx, pw = chaos._monomial_terms(pairs)
    p1, _, _ = chaos.lag_grid(m1, 8.0, 0.01, half=False)
    K1 = corr_matrix_K(m1, p1).reshape(p1.shape[0], -1)
    yield ("eval_monomials n=1 q=4", kernels.eval_monomials_numba, kernels.eval_monomials_numpy,
           (coef, idx, pw, K1))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()
    rows = []
    print("%-32s %12s %12s %9s %10s" % ("kernel", "numba [s]", "numpy [s]", "speedup", "max|diff|"))
    for name, fast, slow, a in cases():
        tf, of = best_of(lambda: fast(*a), args.repeat)
        ts, os_ = best_of(lambda: slow(*a), args.repeat)
        diff = float(np.max(np.abs(np.asarray(of, dtype=float) - np.asarray(os_, dtype=float))))
        rows.append({"kernel": name, "numba": tf, "numpy": ts, "speedup": ts / tf, "max_abs_diff": diff})
        print("%-32s %12.5f %12.5f %9.1f %10.2e" % (name, tf, ts, ts / tf, diff))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
