"""Hermite / Wiener-chaos machinery for the Euler integral of a Gaussian field.

The interior part of the Euler integral is the Kac-Rice functional

    G(Xvec) = delta(grad X) * det(Hess X) * X

of the field vector at each point. After whitening, ``Y = Lambda^-1/2 Xvec``,
its Hermite expansion is ``sum_a d_a H_a(Y)`` with ``d_a = d1(a_grad) d2(a_rest)``:
the gradient block only enters through the delta function (closed form),
the value/Hessian block through a polynomial expectation that Gauss-Hermite
quadrature evaluates exactly.
"""
from dataclasses import dataclass, field
import csv
import functools
import itertools
import math

import numpy as np
from numpy.polynomial import hermite_e

from . import kernels
from .covariance import (UnsupportedOrderError, DegenerateCovarianceError, lambda_blocks,
                         n_components, corr_matrix_K, hessian_pairs, sym_sqrt)

HERMITE_CAP = 64
PARTITION_CAP = 2_000_000
Q_CAP = 16
ROUNDOFF = 1e-13


class EnumerationTooLargeError(ValueError):
    pass


class QuadratureOrderError(ValueError):
    pass


class DomainTooSmallError(RuntimeError):
    pass


class UnsupportedModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Hermite polynomials and index sets


def hermite_eval(k, x):
    """Probabilists' Hermite polynomial ``He_k(x)`` by the three-term recurrence."""
    k = int(k)
    if k < 0 or k > HERMITE_CAP:
        raise UnsupportedOrderError("Hermite order %d outside 0..%d" % (k, HERMITE_CAP))
    x = np.asarray(x, dtype=np.float64)
    prev, cur = np.ones_like(x), x.copy()
    if k == 0:
        out = prev
    else:
        for j in range(1, k):
            prev, cur = cur, x * cur - j * prev
        out = cur
    return float(out) if out.ndim == 0 else out


def hermite_at_zero(k):
    """``He_k(0)``: zero for odd k, ``(-1)^(k/2) (k-1)!!`` for even k."""
    if k % 2:
        return 0.0
    return (-1.0) ** (k // 2) * float(math.prod(range(k - 1, 0, -2)))


def multi_factorial(a):
    return math.prod(math.factorial(int(x)) for x in a)


def partition_count(q, N):
    return math.comb(q + N - 1, N - 1)


def enumerate_partitions(q, N, cap=PARTITION_CAP):
    """All N-tuples of nonnegative integers summing to q, in lexicographic order."""
    if q < 0 or N < 1:
        raise ValueError("need q >= 0 and N >= 1")
    count = partition_count(q, N)
    if count > cap:
        raise EnumerationTooLargeError("%d partitions of %d into %d parts exceed cap %d" % (count, q, N, cap))

    def rec(rest, slots):
        if slots == 1:
            yield (rest,)
            return
        for first in range(rest + 1):
            for tail in rec(rest - first, slots - 1):
                yield (first,) + tail

    return list(rec(q, N))


@dataclass(frozen=True)
class MultiIndex:
    """Chaos multi-index: gradient block first, then value and Hessian entries."""

    n: int
    a: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(int(x) for x in self.a))
        if len(self.a) != n_components(self.n):
            raise ValueError("multi-index for n=%d needs %d entries, got %d"
                             % (self.n, n_components(self.n), len(self.a)))
        if any(x < 0 for x in self.a):
            raise ValueError("multi-index entries must be nonnegative")

    @property
    def order(self):
        return sum(self.a)

    @property
    def gradient(self):
        return self.a[:self.n]

    @property
    def rest(self):
        return self.a[self.n:]

    @property
    def factorial(self):
        return multi_factorial(self.a)


@dataclass(frozen=True)
class ChaosCoefficient:
    index: MultiIndex
    d1: float
    d2: float

    @property
    def d(self):
        return self.d1 * self.d2


# ---------------------------------------------------------------------------
# Coefficients


def required_quadrature_order(n, q_max):
    """Gauss-Hermite points per axis that integrate every d2 integrand up to order ``q_max`` exactly."""
    N = n_components(n)
    return int(math.ceil(((N - n + 1) + q_max) / 2.0)) + 1


def hessian_matrix(vec, n):
    """Symmetric matrices from upper-triangle vectors, shape (..., n(n+1)/2) -> (..., n, n)."""
    vec = np.asarray(vec)
    out = np.empty(vec.shape[:-1] + (n, n))
    for k, (i, j) in enumerate(hessian_pairs(n)):
        out[..., i, j] = vec[..., k]
        out[..., j, i] = vec[..., k]
    return out


def gradient_factor(blocks, a_grad):
    """``d1 = det(Lambda_1)^-1/2 (2 pi)^-n/2 prod He_{a_i}(0)/a_i!``."""
    n = len(a_grad)
    pref = 1.0 / math.sqrt(float(np.linalg.det(blocks.lambda1))) / (2.0 * math.pi) ** (n / 2.0)
    val = pref
    for k in a_grad:
        val *= hermite_at_zero(k) / math.factorial(k)
    return val


@functools.lru_cache(maxsize=32)
def _d2_table(model, q_max, order):
    blocks = lambda_blocks(model)
    n = model.dim
    D = blocks.lambda2.shape[0]
    x, w = hermite_e.hermegauss(order)
    w = w / math.sqrt(2.0 * math.pi)
    grids = np.meshgrid(*([x] * D), indexing="ij")
    u = np.stack(grids, axis=-1)
    z = u @ blocks.sqrt2.T
    vals = z[..., 0] * np.linalg.det(hessian_matrix(z[..., 1:], n))
    basis = np.stack([w * hermite_eval(k, x) / math.factorial(k) for k in range(q_max + 1)], axis=1)
    T = vals
    for _ in range(D):
        T = np.tensordot(T, basis, axes=([0], [0]))  # contracts the leading axis, appends a new one
    # entries that vanish by parity come out as rounding noise
    T[np.abs(T) < ROUNDOFF * np.abs(T).max()] = 0.0
    return T


class CoefficientTable:
    """All chaos coefficients of the interior functional up to a total order."""

    def __init__(self, model, q_max, quad_order=None):
        if q_max < 0 or q_max > Q_CAP:
            raise UnsupportedOrderError("chaos order %d outside 0..%d" % (q_max, Q_CAP))
        self.model = model
        self.n = model.dim
        self.N = n_components(self.n)
        self.q_max = int(q_max)
        need = required_quadrature_order(self.n, q_max)
        if quad_order is None:
            quad_order = need
        if quad_order < need:
            raise QuadratureOrderError(
                "quadrature order %d too low for exact d2 up to q=%d; need %d" % (quad_order, q_max, need))
        self.quad_order = int(quad_order)
        self.blocks = lambda_blocks(model)
        self._d2 = _d2_table(model, self.q_max, self.quad_order)

    def d2(self, rest):
        if sum(rest) > self.q_max:
            raise UnsupportedOrderError("order %d above table order %d" % (sum(rest), self.q_max))
        return float(self._d2[tuple(rest)])

    def d1(self, grad):
        return gradient_factor(self.blocks, grad)

    def coefficient(self, a):
        if not isinstance(a, MultiIndex):
            a = MultiIndex(self.n, a)
        return ChaosCoefficient(a, self.d1(a.gradient), self.d2(a.rest))

    def order_terms(self, q):
        """Nonzero coefficients of total order q as ``[(a, d_a)]``; zeros are skipped cheaply."""
        n = self.n
        out = []
        for ar in range(0, q + 1):
            gq = q - ar
            if gq % 2:
                continue
            rests = [r for r in enumerate_partitions(ar, self.N - n) if self.d2(r) != 0.0]
            if not rests:
                continue
            grads = [tuple(2 * g for g in half) for half in enumerate_partitions(gq // 2, n)]
            for g in grads:
                d1 = self.d1(g)
                for r in rests:
                    out.append((g + r, d1 * self.d2(r)))
        out.sort()
        return out


def chaos_coefficient(model, a, quad_order=None):
    """Coefficient ``d_a = d1 d2`` of ``H_a(Y)`` in the interior Euler functional."""
    if not isinstance(a, MultiIndex):
        a = MultiIndex(model.dim, a)
    return CoefficientTable(model, max(a.order, 1), quad_order).coefficient(a)


def write_coefficients_csv(table, path, q_max=None):
    q_max = table.q_max if q_max is None else q_max
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a_%d" % (k + 1) for k in range(table.N)] + ["d1", "d2", "d"])
        for q in range(q_max + 1):
            for a in enumerate_partitions(q, table.N):
                c = table.coefficient(a)
                w.writerow(list(a) + [repr(c.d1), repr(c.d2), repr(c.d)])


# ---------------------------------------------------------------------------
# Mehler products


def transport_matrices(a, b):
    """Nonnegative integer matrices with row sums ``a`` and column sums ``b`` (depth first)."""
    a, b = list(a), list(b)
    if sum(a) != sum(b):
        return
    rows, cols = len(a), len(b)
    D = [[0] * cols for _ in range(rows)]
    remaining = list(b)

    def fill_row(i, j, left):
        if j == cols - 1:
            if left <= remaining[j]:
                D[i][j] = left
                remaining[j] -= left
                yield from next_row(i + 1)
                remaining[j] += left
                D[i][j] = 0
            return
        # whatever this row leaves for later columns must fit their remaining capacity
        tail_cap = sum(remaining[j + 1:])
        for x in range(max(0, left - tail_cap), min(left, remaining[j]) + 1):
            D[i][j] = x
            remaining[j] -= x
            yield from fill_row(i, j + 1, left - x)
            remaining[j] += x
        D[i][j] = 0

    def next_row(i):
        if i == rows:
            yield [row[:] for row in D]
            return
        yield from fill_row(i, 0, a[i])

    yield from next_row(0)


def mehler_terms(a, b):
    """``(coef, D)`` pairs with ``E[H_a(U) H_b(V)] = sum coef * prod K^D`` and ``K_ij = Cov(U_i, V_j)``."""
    a = tuple(getattr(a, "a", a))
    b = tuple(getattr(b, "a", b))
    if sum(a) != sum(b):
        return []
    pref = multi_factorial(a) * multi_factorial(b)
    return [(pref / math.prod(math.factorial(x) for row in D for x in row), D)
            for D in transport_matrices(a, b)]


def mehler_expectation(a, b, K):
    """``E[prod H_{a_i}(U_i) prod H_{b_j}(V_j)]`` for standard U, V with ``Cov(U_i, V_j) = K_ij``."""
    K = np.asarray(K, dtype=np.float64)
    total = []
    for coef, D in mehler_terms(a, b):
        term = coef
        for i, row in enumerate(D):
            for j, d in enumerate(row):
                if d:
                    term *= K[i, j] ** d
        total.append(term)
    return math.fsum(total)


def _monomial_terms(pairs):
    """Flatten Mehler sums over ``[(weight, a, b)]`` into (coef, idx, pw) arrays for eval_monomials."""
    coefs, idx, pw = [], [], []
    L = 1
    rows = []
    for weight, a, b in pairs:
        N = len(a)
        for coef, D in mehler_terms(a, b):
            entries = [(i * N + j, d) for i, row in enumerate(D) for j, d in enumerate(row) if d]
            L = max(L, len(entries))
            rows.append((weight * coef, entries))
    for c, entries in rows:
        coefs.append(c)
        idx.append([e[0] for e in entries] + [0] * (L - len(entries)))
        pw.append([e[1] for e in entries] + [0] * (L - len(entries)))
    return np.array(coefs), np.array(idx, dtype=np.int64).reshape(-1, L), np.array(pw, dtype=np.int64).reshape(-1, L)


# ---------------------------------------------------------------------------
# Lag integrals


def lag_grid(model, radius, step, half=True):
    """Nodes and trapezoid weights on ``[0, radius]^n`` (half) or ``[-radius, radius]^n``."""
    n = model.dim
    k = int(round(radius / step))
    if half:
        x = np.arange(k + 1) * step
        w1 = np.full(k + 1, step)
        w1[0] *= 0.5
        w1[-1] *= 0.5
        w1 *= 2.0  # reflect onto the negative half-line
    else:
        x = np.arange(-k, k + 1) * step
        w1 = np.full(2 * k + 1, step)
        w1[[0, -1]] *= 0.5
    pts = np.stack(np.meshgrid(*([x] * n), indexing="ij"), axis=-1).reshape(-1, n)
    wts = np.prod(np.stack(np.meshgrid(*([w1] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
    on_edge = np.any(np.isclose(np.abs(pts), k * step), axis=1)
    return pts, wts, on_edge


def lag_integral_R(model, a, b, radius=None, step=None):
    """``R(a, b) = int_{R^n} E[H_a(Y(0)) H_b(Y(nu))] dnu`` by the trapezoid rule on ``[-radius, radius]^n``."""
    scale = getattr(model, "scale", 1.0)
    radius = 8.0 * scale if radius is None else radius
    step = scale / 8.0 if step is None else step
    pts, wts, _ = lag_grid(model, radius, step, half=False)
    K = corr_matrix_K(model, pts)
    coef, idx, pw = _monomial_terms([(1.0, tuple(getattr(a, "a", a)), tuple(getattr(b, "a", b)))])
    if coef.size == 0:
        return 0.0
    vals = kernels.eval_monomials(coef, idx, pw, K.reshape(K.shape[0], -1))
    return float(vals @ wts)


class _Composer:
    """Prefix trie plus monomial tables for ``sum_a c_a prod_i (K^T y)_i^{a_i}`` at order q."""

    def __init__(self, terms, N, q, target):
        self.q = q
        mons = [enumerate_partitions(k, N) for k in range(q + 1)]
        index = [{m: i for i, m in enumerate(level)} for level in mons]
        self.sizes = np.array([len(level) for level in mons], dtype=np.int64)
        mmax = int(self.sizes.max())
        self.mult = np.zeros((max(q, 1), mmax, N), dtype=np.int64)
        for k in range(q):
            for i, m in enumerate(mons[k]):
                for j in range(N):
                    up = list(m)
                    up[j] += 1
                    self.mult[k, i, j] = index[k + 1][tuple(up)]
        self.wt = np.array([target.get(m, 0.0) for m in mons[q]])
        words = sorted((tuple(i for i in range(N) for _ in range(a[i])), c) for a, c in terms)
        var, depth, coef = [], [], []
        prev = ()
        for word, c in words:
            common = 0
            while common < min(len(prev), len(word)) and prev[common] == word[common]:
                common += 1
            if common == len(word):  # repeated word: fold into the existing leaf
                coef[-1] += c
                continue
            for k in range(common, len(word)):
                var.append(word[k])
                depth.append(k + 1)
                coef.append(0.0)
            coef[-1] = c
            prev = word
        self.node_var = np.array(var, dtype=np.int64)
        self.node_depth = np.array(depth, dtype=np.int64)
        self.node_coef = np.array(coef, dtype=np.float64)

    def __call__(self, K):
        if self.node_var.size == 0:
            return np.zeros(K.shape[0])
        return kernels.compose(self.node_var, self.node_depth, self.node_coef, self.mult,
                               self.sizes, self.wt, K)


def order_correlation(table, q, K, placement="single"):
    """``E[G_q(Y(0)) G_q(Y(nu))]`` at each matrix ``K`` (shape (P, N, N)), G_q the order-q chaos.

    ``placement="double"`` multiplies every Mehler pair by an extra ``a! b!``.
    """
    terms = table.order_terms(q)
    if not terms:
        return np.zeros(K.shape[0])
    if placement == "double":
        terms = [(a, c * multi_factorial(a)) for a, c in terms]
    elif placement != "single":
        raise ValueError("placement must be 'single' or 'double'")
    target = {a: c * multi_factorial(a) for a, c in terms}
    comp = _Composer(terms, table.N, q, target)
    return comp(np.asarray(K, dtype=np.float64))


def coefficient_growth(model, q_max=12, table=None):
    """``S(q) = sum_{|a| = q} d_a^2 a!`` for q = 0..q_max."""
    table = table if table is not None and table.q_max >= q_max else CoefficientTable(model, q_max)
    return [math.fsum(c * c * multi_factorial(a) for a, c in table.order_terms(q)) for q in range(q_max + 1)]


def growth_bound_check(S, n, fit_max=4):
    """Fit ``C = max_{1<=q<=fit_max} S(q)/q^n`` and test ``S(q) <= C q^n`` for every q >= 1."""
    C = max(S[q] / q ** n for q in range(1, fit_max + 1))
    ok = [S[q] <= C * q ** n * (1 + 1e-12) for q in range(1, len(S))]
    return C, all(ok), ok


@dataclass
class VarianceSeries:
    orders: list
    terms: list
    partial_sums: list
    placement: str = "single"
    diagnostics: dict = field(default_factory=dict)

    @property
    def sigma2(self):
        return self.partial_sums[-1] if self.partial_sums else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "u_q", "partial_sum"])
            for q, u, s in zip(self.orders, self.terms, self.partial_sums):
                w.writerow([q, repr(u), repr(s)])

    def to_dict(self):
        return {"placement": self.placement, "orders": self.orders, "terms": self.terms,
                "partial_sums": self.partial_sums, "sigma2": self.sigma2, "diagnostics": self.diagnostics}


def truncated_variance(model, Q, lag_domain=None, placement="single", rtol=1e-8, max_halvings=3,
                       decay_tol=1e-10):
    """Limiting variance of ``Psi / m^{n/2}`` truncated at chaos order Q.

    ``u_q = int_{R^n} E[G_q(Y(0)) G_q(Y(nu))] dnu``. The integrand is even in
    every coordinate, so the trapezoid rule runs on ``[0, R]^n``; the step
    starts at ``scale/2`` and is halved until consecutive estimates agree.
    """
    if Q < 1 or Q > Q_CAP:
        raise UnsupportedOrderError("truncation order %d outside 1..%d" % (Q, Q_CAP))
    scale = getattr(model, "scale", 1.0)
    radius = 8.0 * scale if lag_domain is None else float(lag_domain)
    table = CoefficientTable(model, Q)
    blocks = table.blocks
    step = scale / 2.0
    cache = {}

    def evaluate(step):
        if step not in cache:
            pts, wts, edge = lag_grid(model, radius, step)
            K = corr_matrix_K(model, pts, blocks)
            cache[step] = (pts, wts, edge, K)
        return cache[step]

    orders, terms, partial, steps, edge_max = [], [], [], [], []
    running = 0.0
    for q in range(1, Q + 1):
        if not table.order_terms(q):
            u, used, emax = 0.0, None, 0.0
        else:
            h = step
            pts, wts, edge, K = evaluate(h)
            vals = order_correlation(table, q, K, placement)
            est = float(vals @ wts)
            for _ in range(max_halvings):
                pts2, wts2, edge2, K2 = evaluate(h / 2.0)
                vals2 = order_correlation(table, q, K2, placement)
                est2 = float(vals2 @ wts2)
                h, vals, edge, done = h / 2.0, vals2, edge2, abs(est2 - est) <= rtol * max(abs(est2), 1e-300)
                est = est2
                if done:
                    break
            peak = float(np.abs(vals).max())
            emax = float(np.abs(vals[edge]).max())
            if emax > decay_tol * max(peak, 1.0):
                raise DomainTooSmallError(
                    "order-%d lag integrand is %.3e at |nu| = %.3g; enlarge the lag domain" % (q, emax, radius))
            u, used = est, h
        running += u
        orders.append(q)
        terms.append(u)
        partial.append(running)
        steps.append(used)
        edge_max.append(emax)
    growth = coefficient_growth(model, Q, table)
    diag = {"lag_radius": radius, "step": steps, "boundary_max": edge_max,
            "coefficient_mass": growth[1:], "arcones_tail": arcones_tail(model, Q, radius, growth, blocks)}
    return VarianceSeries(orders, terms, partial, placement, diag)


def arcones_tail(model, Q, radius, growth, blocks=None, step=None):
    """Per-order bound ``S(q) int_{psi* < 1} psi*(nu)^q dnu`` on the far-lag part of u_q.

    ``psi*`` is the larger of the max absolute row and column sums of K; where
    it is below 1 the order-q correlation is at most ``psi*^q E[G_q^2]``.
    """
    scale = getattr(model, "scale", 1.0)
    step = scale / 4.0 if step is None else step
    pts, wts, _ = lag_grid(model, radius, step)
    K = np.abs(corr_matrix_K(model, pts, blocks))
    psi = np.maximum(K.sum(axis=1).max(axis=1), K.sum(axis=2).max(axis=1))
    mask = psi < 1.0
    return [float(growth[q] * np.sum(wts[mask] * psi[mask] ** q)) for q in range(1, Q + 1)]


# ---------------------------------------------------------------------------
# Mean value


def _check_isotropic(model):
    blocks = lambda_blocks(model)
    lam1 = blocks.lambda1
    if not np.allclose(lam1, lam1[0, 0] * np.eye(model.dim), rtol=0, atol=1e-12 * abs(lam1[0, 0])):
        raise UnsupportedModelError("closed-form mean requires an isotropic model")
    return blocks


def mean_euler_integral(model, n=None, m=1.0):
    """``E[int_{[0,m]^n} X dchi] = -sqrt(lambda_2) n m / sqrt(2 pi)``."""
    n = model.dim if n is None else int(n)
    if n != model.dim:
        model = model.restrict(n)
    blocks = _check_isotropic(model)
    return -math.sqrt(blocks.spectral_moment) * n * float(m) / math.sqrt(2.0 * math.pi)


def zeroth_d2(model):
    """``E[det(Hess X) X]`` by exact quadrature (the order-0 value/Hessian factor)."""
    return float(_d2_table(model, 0, required_quadrature_order(model.dim, 0)).reshape(-1)[0])


def mean_factorization(model, n=None, m=1.0):
    """Expected contribution of each face dimension k to the mean.

    A k-face contributes ``d1_0 d2_0`` of the k-dimensional restriction per unit
    k-volume, times the probability ``2^-(n-k)`` that the field increases into
    the cube along all normal directions (independent of the in-face values
    for an isotropic model).
    """
    n = model.dim if n is None else int(n)
    base = model.restrict(n) if n != model.dim else model
    _check_isotropic(base)
    out = {}
    for k in range(n + 1):
        count = math.comb(n, k) * 2 ** (n - k)
        if k == 0:
            d1, d2 = 1.0, 0.0  # E[X] = 0
        else:
            sub = base.restrict(k)
            d1 = gradient_factor(lambda_blocks(sub), (0,) * k)
            d2 = zeroth_d2(sub)
        per_face = d1 * d2 * float(m) ** k * 2.0 ** (k - n)
        out[k] = {"faces": count, "d1": d1, "d2": d2, "per_face": per_face, "total": count * per_face}
    return out


def det_hessian_mean_check(model, n=None, samples=1_000_000, seed=0, chunk=250_000):
    """Monte-Carlo ``E[det(Hess X) X]`` from draws of ``(X, Hess X) ~ N(0, Lambda_2)``.

    Returns ``(estimate, stderr)``.
    """
    n = model.dim if n is None else int(n)
    if n != model.dim:
        model = model.restrict(n)
    blocks = lambda_blocks(model)  # refuses degenerate Lambda_2
    root = blocks.sqrt2
    rng = np.random.Generator(np.random.Philox(int(seed)))
    sums = []
    sq = []
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        z = rng.standard_normal((k, root.shape[0])) @ root.T
        v = z[:, 0] * np.linalg.det(hessian_matrix(z[:, 1:], n))
        sums.append(v.sum())
        sq.append((v * v).sum())
        done += k
    mean = math.fsum(sums) / samples
    var = (math.fsum(sq) - samples * mean * mean) / (samples - 1)
    return mean, math.sqrt(var / samples)


def sample_joint_gaussian(cov, samples, seed):
    """Draws from ``N(0, cov)`` via the symmetric square root (refuses degenerate cov)."""
    root, _, _ = sym_sqrt(np.asarray(cov, dtype=np.float64), "joint covariance")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    return rng.standard_normal((samples, root.shape[0])) @ root.T
