import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from eulerclt import chaos, kernels
from eulerclt.covariance import GaussianCovariance, corr_matrix_K


def small_grids(max_p=7):
    shape = st.integers(1, 3).flatmap(lambda n: st.tuples(*[st.integers(2, max_p)] * n))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=st.floats(-5, 5, allow_nan=False)))


@given(small_grids())
def test_cell_sum_twins(values):
    a = kernels.cell_alternating_sum_numba(values)
    b = kernels.cell_alternating_sum_numpy(values)
    assert a == pytest.approx(b, abs=1e-9)


@given(st.integers(1, 3).flatmap(
    lambda n: arrays(np.float64, (n,) + (5,) * n, elements=st.floats(-1, 1, allow_nan=False))))
def test_critical_mask_twins(grad):
    # exact zeros are common under shrinking, so both sign tests get exercised
    assert np.array_equal(kernels.critical_cell_mask_numba(grad), kernels.critical_cell_mask_numpy(grad))


def test_eval_monomials_twins():
    model = GaussianCovariance(1.0, 1)
    t = chaos.CoefficientTable(model, 4)
    pairs = [(ca * cb, a, b) for a, ca in t.order_terms(4) for b, cb in t.order_terms(4)]
    coef, idx, pw = chaos._monomial_terms(pairs)
    pts, _, _ = chaos.lag_grid(model, 4.0, 0.1, half=False)
    K = corr_matrix_K(model, pts).reshape(pts.shape[0], -1)
    a = kernels.eval_monomials_numba(coef, idx, pw, K)
    b = kernels.eval_monomials_numpy(coef, idx, pw, K, chunk=7)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("n,q", [(1, 4), (2, 3), (2, 5)])
def test_compose_twins(n, q):
    model = GaussianCovariance(1.0, n)
    table = chaos.CoefficientTable(model, q)
    terms = table.order_terms(q)
    target = {a: c * chaos.multi_factorial(a) for a, c in terms}
    comp = chaos._Composer(terms, table.N, q, target)
    pts, _, _ = chaos.lag_grid(model, 3.0, 0.5)
    K = corr_matrix_K(model, pts, table.blocks)
    args = (comp.node_var, comp.node_depth, comp.node_coef, comp.mult, comp.sizes, comp.wt, K)
    a = kernels.compose_numba(*args)
    b = kernels.compose_numpy(*args, chunk=5)
    assert np.allclose(a, b, rtol=1e-11, atol=1e-15)


def test_cell_maxima_counts():
    v = np.arange(12.0).reshape(3, 4)
    dims = {}
    for dim, mask, vmax in kernels.cell_maxima(v):
        dims[dim] = dims.get(dim, 0) + vmax.size
    # 12 vertices, 17 edges, 6 squares
    assert dims == {0: 12, 1: 17, 2: 6}


def _flag_in_subprocess(value):
    env = dict(os.environ, EULERCLT_DISABLE_NUMBA=value)
    code = ("import eulerclt, eulerclt.kernels as k; "
            "print(eulerclt.USE_NUMBA, k.compose is k.compose_numpy, k.compose is k.compose_numba)")
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                          check=True).stdout.split()


def test_env_flag_selects_fallback():
    assert _flag_in_subprocess("1") == ["False", "True", "False"]
    assert _flag_in_subprocess("0") == ["True", "False", "True"]


def test_fallback_end_to_end():
    env = dict(os.environ, EULERCLT_DISABLE_NUMBA="1")
    code = ("from eulerclt import *; import numpy as np; "
            "f = sample_field(GaussianCovariance(1.0, 2), GridSpec(2, 4.0, 0.1), 3); "
            "print(repr(euler_integral(f)), repr(truncated_variance(GaussianCovariance(1.0, 1), 4).sigma2))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    from eulerclt import euler_integral, sample_field, GridSpec, truncated_variance
    f = sample_field(GaussianCovariance(1.0, 2), GridSpec(2, 4.0, 0.1), 3)
    a, b = map(float, out.stdout.split())
    assert a == pytest.approx(euler_integral(f), abs=1e-12)
    assert b == pytest.approx(truncated_variance(GaussianCovariance(1.0, 1), 4).sigma2, rel=1e-12)
