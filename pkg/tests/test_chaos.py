import itertools
import math

import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st
from numpy.polynomial import hermite_e

from eulerclt import chaos as C
from eulerclt.covariance import (CovarianceModel, DegenerateCovarianceError, GaussianCovariance,
                                 UnsupportedOrderError, lambda_blocks, corr_matrix_K, n_components,
                                 hessian_pairs)


def he_reference(k, x):
    c = np.zeros(k + 1)
    c[k] = 1.0
    return hermite_e.hermeval(x, c)


# ---------------------------------------------------------------------------
# Hermite and partitions


def test_hermite_examples():
    assert C.hermite_eval(2, 0.0) == -1.0
    assert C.hermite_eval(3, 2.0) == 2.0
    assert np.all(C.hermite_eval(0, np.linspace(-5, 5, 11)) == 1.0)


@given(st.integers(0, 30), st.floats(-4, 4))
def test_hermite_matches_numpy(k, x):
    assert C.hermite_eval(k, x) == pytest.approx(he_reference(k, x), rel=1e-10, abs=1e-10 * math.factorial(k))


def test_hermite_cap():
    C.hermite_eval(64, 0.5)
    with pytest.raises(UnsupportedOrderError):
        C.hermite_eval(65, 0.5)


@pytest.mark.parametrize("k", range(12))
def test_hermite_at_zero(k):
    assert C.hermite_at_zero(k) == he_reference(k, 0.0)


def test_hermite_orthogonality():
    x, w = hermite_e.hermegauss(12)
    w = w / math.sqrt(2 * math.pi)
    for j in range(11):
        for k in range(11):
            val = math.fsum(w * C.hermite_eval(j, x) * C.hermite_eval(k, x))
            # compare in the orthonormal basis He_k / sqrt(k!)
            val /= math.sqrt(math.factorial(j) * math.factorial(k))
            assert abs(val - (j == k)) <= 1e-10


def test_partition_examples():
    assert len(C.enumerate_partitions(2, 3)) == 6
    assert C.enumerate_partitions(0, 5) == [(0, 0, 0, 0, 0)]
    assert C.enumerate_partitions(1, 2) == [(0, 1), (1, 0)]


@given(st.integers(0, 7), st.integers(1, 5))
def test_partitions_complete_and_sorted(q, N):
    parts = C.enumerate_partitions(q, N)
    brute = sorted(t for t in itertools.product(range(q + 1), repeat=N) if sum(t) == q)
    assert parts == brute
    assert len(parts) == C.partition_count(q, N)


def test_partition_cap():
    with pytest.raises(C.EnumerationTooLargeError, match=str(math.comb(40 + 9, 9))):
        C.enumerate_partitions(40, 10, cap=1000)


def test_multi_index_validation():
    a = C.MultiIndex(2, (1, 0, 2, 0, 0, 1))
    assert a.order == 4 and a.gradient == (1, 0) and a.rest == (2, 0, 0, 1) and a.factorial == 2
    with pytest.raises(ValueError):
        C.MultiIndex(2, (1, 0, 0))
    with pytest.raises(ValueError):
        C.MultiIndex(1, (1, -1, 0))


# ---------------------------------------------------------------------------
# Coefficients


def gaussian_moment_oracle(model, rest):
    """Exact ``E[X det(Hess X) prod He_{r_i}(u_i)] / r!`` with ``(X, Hess) = Lambda_2^{1/2} u``.

    Expands the polynomial symbolically and replaces each ``u_i^k`` by its
    standard normal moment ``(k-1)!!``.
    """
    n = model.dim
    root = lambda_blocks(model).sqrt2
    D = root.shape[0]
    u = sympy.symbols("u0:%d" % D)
    z = [sum(sympy.Float(root[i, j], 30) * u[j] for j in range(D)) for i in range(D)]
    H = sympy.zeros(n, n)
    for k, (i, j) in enumerate(hessian_pairs(n)):
        H[i, j] = H[j, i] = z[1 + k]
    x = sympy.Symbol("x")
    poly = z[0] * H.det()
    for i, r in enumerate(rest):
        poly *= sympy.Poly(sympy.hermite_prob(r, x), x).as_expr().subs(x, u[i])
    poly = sympy.Poly(sympy.expand(poly), *u)
    total = 0
    for powers, coef in poly.terms():
        if all(p % 2 == 0 for p in powers):
            total += coef * math.prod(sympy.factorial2(p - 1) if p else 1 for p in powers)
    return float(total) / C.multi_factorial(rest)


def test_coefficient_example_n1():
    c = C.chaos_coefficient(GaussianCovariance(1.0, 1), (0, 0, 0))
    assert c.d1 == pytest.approx((2 * math.pi) ** -0.5, rel=1e-14)
    assert c.d2 == pytest.approx(-1.0, rel=1e-12)
    assert c.d == pytest.approx(-1.0 / math.sqrt(2 * math.pi))


@pytest.mark.parametrize("n,rest", [
    (1, (0, 0)), (1, (1, 1)), (1, (2, 0)), (1, (0, 2)), (1, (2, 2)), (1, (3, 1)),
    (2, (0, 0, 0, 0)), (2, (1, 1, 0, 1)), (2, (0, 1, 0, 1)), (2, (1, 0, 2, 0)), (2, (2, 1, 1, 0)),
    (2, (0, 0, 1, 0)), (2, (3, 0, 0, 0)),
])
def test_d2_matches_exact_moments(n, rest):
    model = GaussianCovariance(1.3, n)
    table = C.CoefficientTable(model, 6)
    assert table.d2(rest) == pytest.approx(gaussian_moment_oracle(model, rest), abs=1e-12)


@given(st.integers(1, 2), st.data())
def test_odd_gradient_entry_gives_zero(n, data):
    N = n_components(n)
    a = list(data.draw(st.lists(st.integers(0, 3), min_size=N, max_size=N)))
    k = data.draw(st.integers(0, n - 1))
    a[k] = 2 * (a[k] // 2) + 1
    c = C.chaos_coefficient(GaussianCovariance(1.0, n), tuple(a))
    assert c.d1 == 0.0 and c.d == 0.0


@pytest.mark.parametrize("n", [1, 2])
def test_large_hessian_entry_gives_zero(n):
    N = n_components(n)
    limit = N - n + 1
    table = C.CoefficientTable(GaussianCovariance(1.0, n), limit + 2)
    for slot in range(1, N - n):
        for extra in (1, 2):
            rest = [0] * (N - n)
            rest[slot] = limit + extra
            assert table.d2(tuple(rest)) == 0.0


def test_quadrature_order_check():
    model = GaussianCovariance(1.0, 2)
    need = C.required_quadrature_order(2, 4)
    assert need == math.ceil((5 + 4) / 2) + 1
    C.CoefficientTable(model, 4, quad_order=need)
    with pytest.raises(C.QuadratureOrderError, match="need %d" % need):
        C.CoefficientTable(model, 4, quad_order=need - 1)


def test_parity_structure():
    for n, live in ((1, 0), (2, 1)):
        table = C.CoefficientTable(GaussianCovariance(1.0, n), 7)
        for q in range(1, 8):
            assert bool(table.order_terms(q)) == (q % 2 == live)


def test_coefficients_csv(tmp_path):
    table = C.CoefficientTable(GaussianCovariance(1.0, 1), 2)
    C.write_coefficients_csv(table, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "a_1,a_2,a_3,d1,d2,d"
    assert len(lines) == 1 + 1 + 3 + 6


# ---------------------------------------------------------------------------
# Mehler products


def mehler_quadrature_oracle(a, b, K):
    """Exact ``E[H_a(U) H_b(V)]`` by tensor Gauss-Hermite quadrature over the joint law."""
    N = len(a)
    cov = np.block([[np.eye(N), K], [K.T, np.eye(N)]])
    L = np.linalg.cholesky(cov)
    order = (sum(a) + sum(b)) // 2 + 1
    x, w = hermite_e.hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    grid = np.stack(np.meshgrid(*([x] * 2 * N), indexing="ij"), -1).reshape(-1, 2 * N)
    wt = np.prod(np.stack(np.meshgrid(*([w] * 2 * N), indexing="ij"), -1).reshape(-1, 2 * N), axis=1)
    z = grid @ L.T
    vals = np.ones(len(z))
    for i, k in enumerate(tuple(a) + tuple(b)):
        vals *= he_reference(k, z[:, i])
    return float(vals @ wt)


def random_cross(rng, N, norm=0.9):
    K = rng.standard_normal((N, N))
    return K * (norm / np.linalg.norm(K, 2))


def test_mehler_examples():
    K = np.array([[0.3, -0.2], [0.5, 0.1]])
    assert C.mehler_expectation((1, 1), (2, 1), K) == 0.0
    assert C.mehler_expectation((2, 3), (2, 3), np.eye(2)) == 2 * 6
    assert C.mehler_expectation((1, 0), (1, 0), K) == pytest.approx(0.3)
    assert C.mehler_expectation((0, 1), (1, 0), K) == pytest.approx(0.5)


def test_transport_matrices_margins():
    a, b = (2, 1, 0), (1, 1, 1)
    mats = list(C.transport_matrices(a, b))
    brute = [D for D in itertools.product(range(3), repeat=9)
             if [sum(D[3 * i:3 * i + 3]) for i in range(3)] == list(a)
             and [sum(D[j::3]) for j in range(3)] == list(b)]
    assert len(mats) == len({tuple(map(tuple, D)) for D in mats}) == len(brute) == 3
    for D in mats:
        assert [sum(r) for r in D] == list(a)
        assert [sum(c) for c in zip(*D)] == list(b)


@pytest.mark.parametrize("seed", range(12))
def test_mehler_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 4))
    q = int(rng.integers(1, 4))
    a = C.enumerate_partitions(q, N)[int(rng.integers(0, C.partition_count(q, N)))]
    b = C.enumerate_partitions(q, N)[int(rng.integers(0, C.partition_count(q, N)))]
    K = random_cross(rng, N)
    assert C.mehler_expectation(a, b, K) == pytest.approx(mehler_quadrature_oracle(a, b, K), abs=1e-10)


@given(st.integers(0, 4), st.integers(1, 3), st.data())
def test_mehler_transpose_symmetry(q, N, data):
    a = data.draw(st.sampled_from(C.enumerate_partitions(q, N)))
    b = data.draw(st.sampled_from(C.enumerate_partitions(q, N)))
    K = random_cross(np.random.default_rng(q * 7 + N), N)
    assert C.mehler_expectation(a, b, K) == pytest.approx(C.mehler_expectation(b, a, K.T), abs=1e-12)


@pytest.mark.parametrize("n,q", [(1, 2), (1, 4), (2, 1), (2, 3)])
def test_order_correlation_matches_pairwise_sum(n, q):
    model = GaussianCovariance(1.0, n)
    table = C.CoefficientTable(model, q)
    lags = np.array([[0.0] * n, [0.4] * n, [1.1] + [-0.3] * (n - 1)])
    K = corr_matrix_K(model, lags)
    terms = table.order_terms(q)
    got = C.order_correlation(table, q, K)
    for p in range(len(lags)):
        ref = math.fsum(ca * cb * C.mehler_expectation(a, b, K[p]) for a, ca in terms for b, cb in terms)
        assert got[p] == pytest.approx(ref, rel=1e-10, abs=1e-14)
    double = C.order_correlation(table, q, K, placement="double")
    ref = math.fsum(ca * cb * C.multi_factorial(a) * C.multi_factorial(b) * C.mehler_expectation(a, b, K[1])
                    for a, ca in terms for b, cb in terms)
    assert double[1] == pytest.approx(ref, rel=1e-10)
    with pytest.raises(ValueError):
        C.order_correlation(table, q, K, placement="triple")


def test_lag_integral_R_agrees_with_series():
    model = GaussianCovariance(1.0, 1)
    table = C.CoefficientTable(model, 2)
    terms = table.order_terms(2)
    u2 = math.fsum(ca * cb * C.lag_integral_R(model, a, b) for a, ca in terms for b, cb in terms)
    series = C.truncated_variance(model, 2)
    assert series.terms[1] == pytest.approx(u2, rel=1e-6)
    assert C.lag_integral_R(model, (1, 0, 0), (1, 1, 0)) == 0.0


# ---------------------------------------------------------------------------
# Variance series


@pytest.fixture(scope="module")
def series_n1():
    return C.truncated_variance(GaussianCovariance(1.0, 1), 12)


@pytest.fixture(scope="module")
def series_n2():
    return C.truncated_variance(GaussianCovariance(1.0, 2), 6)


def test_series_nonnegative_and_monotone(series_n1, series_n2):
    for s in (series_n1, series_n2):
        # exact zeros can come out as -1e-12 quadrature noise
        assert min(s.terms) >= -1e-10
        assert all(b >= a - 1e-10 for a, b in zip(s.partial_sums, s.partial_sums[1:]))
        assert s.sigma2 == s.partial_sums[-1] > 0


def test_series_tail_decay(series_n1, series_n2):
    for s in (series_n1, series_n2):
        live = [u for u in s.terms if abs(u) > 1e-10]
        assert all(b < a for a, b in zip(live, live[1:]))


def test_series_scale_invariance():
    # d_a carries scale^-n and the lag volume scale^n, so u_q ~ scale^-n
    a = C.truncated_variance(GaussianCovariance(1.0, 1), 4)
    b = C.truncated_variance(GaussianCovariance(2.0, 1), 4)
    assert b.terms == pytest.approx([0.5 * u for u in a.terms], rel=1e-6, abs=1e-14)


def test_series_diagnostics_and_csv(series_n1, tmp_path):
    d = series_n1.diagnostics
    assert len(d["arcones_tail"]) == len(d["coefficient_mass"]) == 12
    assert max(d["boundary_max"]) < 1e-10
    series_n1.write_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "q,u_q,partial_sum" and len(lines) == 13


def test_series_domain_too_small():
    with pytest.raises(C.DomainTooSmallError, match="enlarge"):
        C.truncated_variance(GaussianCovariance(1.0, 1), 2, lag_domain=2.0)


def test_series_order_cap():
    with pytest.raises(UnsupportedOrderError):
        C.truncated_variance(GaussianCovariance(1.0, 1), C.Q_CAP + 1)


@pytest.mark.parametrize("n", [1, 2])
def test_growth_bound(n):
    S = C.coefficient_growth(GaussianCovariance(1.0, n), 12)
    Cfit, ok, per = C.growth_bound_check(S, n)
    assert ok and len(per) == 12 and Cfit > 0


# ---------------------------------------------------------------------------
# Mean


class AnisotropicGaussian(CovarianceModel):
    kind = "aniso"
    max_order = 6

    def __init__(self, scales):
        super().__init__(len(scales))
        self.scales = tuple(scales)

    def derivative(self, t, order=None):
        t = self._check_point(t)
        order = self._check_order(order)
        out = np.ones(t.shape[:-1])
        for axis, (k, ell) in enumerate(zip(order, self.scales)):
            x = t[..., axis] / ell
            out = out * np.exp(-0.5 * x * x) * he_reference(k, x) * (-1.0 / ell) ** k
        return out

    def to_config(self):
        return {"kind": self.kind, "scales": self.scales}


def test_mean_examples():
    g1 = GaussianCovariance(1.0, 1)
    assert C.mean_euler_integral(g1, 1, 10.0) == pytest.approx(-3.98942, abs=5e-6)
    g2 = GaussianCovariance(0.7, 2)
    assert C.mean_euler_integral(g2, 2, 16.0) == pytest.approx(2 * C.mean_euler_integral(g2, 2, 8.0), rel=1e-15)
    # lambda_2 = 1/scale^2
    assert C.mean_euler_integral(g2, 2, 8.0) == pytest.approx(-16 / 0.7 / math.sqrt(2 * math.pi))


def test_mean_refuses_anisotropic():
    with pytest.raises(C.UnsupportedModelError, match="isotropic"):
        C.mean_euler_integral(AnisotropicGaussian((1.0, 2.0)))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_mean_factorization(n):
    model = GaussianCovariance(1.0, n)
    parts = C.mean_factorization(model, n, 5.0)
    assert sum(p["total"] for p in parts.values()) == pytest.approx(C.mean_euler_integral(model, n, 5.0), rel=1e-12)
    for k, p in parts.items():
        if k != 1:
            assert abs(p["total"]) < 1e-8


def test_zeroth_d2():
    assert C.zeroth_d2(GaussianCovariance(1.0, 1)) == pytest.approx(-1.0, rel=1e-12)
    assert C.zeroth_d2(GaussianCovariance(2.0, 1)) == pytest.approx(-0.25, rel=1e-12)
    for n in (2, 3):
        assert abs(C.zeroth_d2(GaussianCovariance(1.0, n))) < 1e-8


def test_det_hessian_check_small():
    est, se = C.det_hessian_mean_check(GaussianCovariance(1.0, 1), samples=100_000, seed=3)
    assert abs(est + 1.0) < 4 * se
    est2, se2 = C.det_hessian_mean_check(GaussianCovariance(1.0, 2), samples=100_000, seed=3)
    assert abs(est2) < 4 * se2
    assert C.det_hessian_mean_check(GaussianCovariance(1.0, 2), samples=1000, seed=5) == \
        C.det_hessian_mean_check(GaussianCovariance(1.0, 2), samples=1000, seed=5)


def test_joint_sampling_refuses_degenerate():
    with pytest.raises(DegenerateCovarianceError):
        C.sample_joint_gaussian(np.array([[1.0, 1.0], [1.0, 1.0]]), 10, 0)
    z = C.sample_joint_gaussian(np.array([[2.0, 0.5], [0.5, 1.0]]), 200_000, 1)
    assert np.cov(z.T) == pytest.approx(np.array([[2.0, 0.5], [0.5, 1.0]]), abs=0.03)
