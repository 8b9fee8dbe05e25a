"""Stationary isotropic covariance models and the derived second-order structure.

The field vector at a point is ordered as

    (dX/dt_1, ..., dX/dt_n,  X,  X_11, X_12, ..., X_1n, X_22, ..., X_nn)

i.e. gradient block first, then the value and the upper triangle of the
Hessian in row-major order. ``N_n = 1 + n + n(n+1)/2`` components in total.
"""
from dataclasses import dataclass, field
import itertools
import math

import numpy as np
from numpy.polynomial import hermite_e

MAX_ORDER = 4
EIG_FLOOR = 1e-12


class UnsupportedOrderError(ValueError):
    pass


class DegenerateCovarianceError(ValueError):
    pass


def n_components(n):
    return 1 + n + n * (n + 1) // 2


def multi_orders(n, max_total=MAX_ORDER):
    """Distinct partial-derivative orders (per-axis counts) with total order <= ``max_total``."""
    out = []
    for total in range(max_total + 1):
        for combo in itertools.combinations_with_replacement(range(n), total):
            counts = [0] * n
            for axis in combo:
                counts[axis] += 1
            out.append(tuple(counts))
    return out


def component_orders(n):
    """Derivative order (per-axis counts) of each entry of the field vector."""
    orders = []
    for i in range(n):
        e = [0] * n
        e[i] = 1
        orders.append(tuple(e))
    orders.append((0,) * n)
    for i in range(n):
        for j in range(i, n):
            e = [0] * n
            e[i] += 1
            e[j] += 1
            orders.append(tuple(e))
    return orders


def hessian_pairs(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


class CovarianceModel:
    """Base class for stationary unit-variance covariance functions on R^n.

    Subclasses implement :meth:`derivative` for per-axis derivative orders up
    to :attr:`max_order` and :meth:`to_config`.
    """

    kind = "abstract"
    max_order = 0
    isotropic = True

    def __init__(self, dim):
        if int(dim) < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = int(dim)

    def derivative(self, t, order):
        raise NotImplementedError

    def restrict(self, dim):
        """Same covariance family on a ``dim``-dimensional coordinate face."""
        raise NotImplementedError

    def to_config(self):
        raise NotImplementedError

    def _check_point(self, t):
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            t = t.reshape(1)
        if t.shape[-1] != self.dim:
            raise ValueError("lag must have trailing dimension %d, got shape %s" % (self.dim, t.shape))
        return t

    def _check_order(self, order):
        order = tuple(int(o) for o in order) if order is not None else (0,) * self.dim
        if len(order) != self.dim or min(order) < 0:
            raise ValueError("order must be %d nonnegative per-axis counts" % self.dim)
        if sum(order) > MAX_ORDER:
            raise UnsupportedOrderError("derivative order %d exceeds %d" % (sum(order), MAX_ORDER))
        if sum(order) > self.max_order:
            raise UnsupportedOrderError(
                "%s covariance has no closed-form derivative of order %d" % (self.kind, sum(order)))
        return order

    def __eq__(self, other):
        return type(self) is type(other) and self.to_config() == other.to_config()

    def __hash__(self):
        return hash(tuple(sorted(self.to_config().items())))

    def __repr__(self):
        args = ", ".join("%s=%r" % kv for kv in self.to_config().items() if kv[0] != "kind")
        return "%s(%s)" % (type(self).__name__, args)


class GaussianCovariance(CovarianceModel):
    """Squared-exponential covariance ``exp(-|t|^2 / (2 scale^2))``.

    Separable across axes, so every partial derivative is a product of
    one-dimensional factors ``(-1/scale)^k He_k(t/scale) exp(-t^2/(2 scale^2))``.
    """

    kind = "gaussian"
    max_order = MAX_ORDER

    def __init__(self, scale=1.0, dim=1):
        super().__init__(dim)
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)

    def derivative(self, t, order=None):
        t = self._check_point(t)
        order = self._check_order(order)
        ell = self.scale
        out = np.ones(t.shape[:-1])
        for axis, k in enumerate(order):
            x = t[..., axis] / ell
            factor = np.exp(-0.5 * x * x)
            if k:
                c = np.zeros(k + 1)
                c[k] = 1.0
                factor = factor * hermite_e.hermeval(x, c) * (-1.0 / ell) ** k
            out = out * factor
        return out

    def restrict(self, dim):
        return GaussianCovariance(self.scale, dim)

    def to_config(self):
        return {"kind": self.kind, "scale": self.scale, "dim": self.dim}


class ExponentialCovariance(CovarianceModel):
    """Ornstein-Uhlenbeck type covariance ``exp(-|t|/scale)``.

    Not differentiable at the origin, so it never satisfies the smoothness
    requirement; shipped as the standard non-tame counterexample.
    """

    kind = "exponential"
    max_order = 0

    def __init__(self, scale=1.0, dim=1):
        super().__init__(dim)
        if not scale > 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)

    def derivative(self, t, order=None):
        t = self._check_point(t)
        self._check_order(order)
        return np.exp(-np.linalg.norm(t, axis=-1) / self.scale)

    def restrict(self, dim):
        return ExponentialCovariance(self.scale, dim)

    def to_config(self):
        return {"kind": self.kind, "scale": self.scale, "dim": self.dim}


MODEL_KINDS = {"gaussian": GaussianCovariance, "exponential": ExponentialCovariance}


def model_from_config(cfg):
    """Build a model from ``{"kind": ..., "scale": ..., "dim": ...}``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", "gaussian")
    if kind not in MODEL_KINDS:
        raise ValueError("unknown covariance kind %r (known: %s)" % (kind, ", ".join(MODEL_KINDS)))
    unknown = set(cfg) - {"scale", "dim"}
    if unknown:
        raise ValueError("unknown covariance keys: %s" % ", ".join(sorted(unknown)))
    return MODEL_KINDS[kind](scale=cfg.get("scale", 1.0), dim=cfg.get("dim", 1))


def eval_rho(model, t, order=None):
    """Partial derivative of the covariance at lag ``t``; ``order`` are per-axis counts."""
    val = model.derivative(t, order)
    return float(val) if np.ndim(t) <= 1 else val


def eval_psi(model, t):
    """Envelope ``sup |d^k rho(t)|`` over all distinct partials of total order 0..4."""
    t = model._check_point(t)
    best = np.zeros(t.shape[:-1])
    for order in multi_orders(model.dim):
        best = np.maximum(best, np.abs(model.derivative(t, order)))
    return float(best) if best.ndim == 0 else best


def cross_covariance(model, t):
    """``E[Xvec(0)^T Xvec(t)]`` for lags ``t`` of shape (..., n) -> (..., N, N)."""
    t = model._check_point(t)
    orders = component_orders(model.dim)
    N = len(orders)
    cache = {}
    out = np.empty(t.shape[:-1] + (N, N))
    for a, oa in enumerate(orders):
        sign = -1.0 if sum(oa) % 2 else 1.0
        for b, ob in enumerate(orders):
            key = tuple(x + y for x, y in zip(oa, ob))
            if key not in cache:
                cache[key] = model.derivative(t, key)
            out[..., a, b] = sign * cache[key]
    return out


def sym_sqrt(mat, name="matrix"):
    """Symmetric square root and inverse square root by eigendecomposition."""
    mat = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(mat)
    if w.min() < EIG_FLOOR:
        raise DegenerateCovarianceError(
            "%s is degenerate: smallest eigenvalue %.3e below floor %.0e" % (name, w.min(), EIG_FLOOR))
    root = (v * np.sqrt(w)) @ v.T
    inv_root = (v / np.sqrt(w)) @ v.T
    return root, inv_root, w


@dataclass(frozen=True)
class LambdaBlocks:
    n: int
    full: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    sqrt1: np.ndarray
    sqrt2: np.ndarray
    inv_sqrt1: np.ndarray
    inv_sqrt2: np.ndarray
    spectral_moment: float
    min_eigenvalue: float
    inv_sqrt: np.ndarray = field(repr=False, default=None)

    @property
    def sqrt(self):
        n = self.n
        N = self.full.shape[0]
        out = np.zeros((N, N))
        out[:n, :n] = self.sqrt1
        out[n:, n:] = self.sqrt2
        return out


def lambda_blocks(model):
    """Covariance of the field vector at a point, its blocks and their square roots."""
    if model.max_order < 4:
        raise DegenerateCovarianceError(
            "%s covariance lacks fourth derivatives at the origin" % model.kind)
    n = model.dim
    full = cross_covariance(model, np.zeros(n))
    full = 0.5 * (full + full.T)
    lam1 = full[:n, :n]
    lam2 = full[n:, n:]
    s1, is1, w1 = sym_sqrt(lam1, "gradient covariance")
    s2, is2, w2 = sym_sqrt(lam2, "value/Hessian covariance")
    N = full.shape[0]
    inv = np.zeros((N, N))
    inv[:n, :n] = is1
    inv[n:, n:] = is2
    return LambdaBlocks(
        n=n, full=full, lambda1=lam1, lambda2=lam2, sqrt1=s1, sqrt2=s2,
        inv_sqrt1=is1, inv_sqrt2=is2, spectral_moment=float(lam1[0, 0]),
        min_eigenvalue=float(min(w1.min(), w2.min())), inv_sqrt=inv)


def corr_matrix_K(model, t, blocks=None):
    """Cross-covariance of the decorrelated vector, ``Lambda^-1/2 E[X0' Xt] Lambda^-1/2``."""
    if blocks is None:
        blocks = lambda_blocks(model)
    A = blocks.inv_sqrt
    C = cross_covariance(model, t)
    return A @ C @ A


def k_bound_constant(blocks):
    """Constant ``c`` in ``|K(t)_jk| <= c * psi(t)``.

    Each entry of ``K = A C A`` obeys ``|K_jk| <= (sum_l |A_jl|)(sum_l |A_lk|) max|C|``,
    so the square of the max absolute row sum of ``A = Lambda^-1/2`` bounds it.
    """
    A = blocks.inv_sqrt
    return float(np.abs(A).sum(axis=1).max() ** 2)


def displayed_k_constant(blocks):
    """``n^2 ||Lambda^-1/2||_2^2``, the displayed form of the decorrelation bound."""
    return float(blocks.n ** 2 * np.linalg.norm(blocks.inv_sqrt, 2) ** 2)


# ---------------------------------------------------------------------------
# Tameness diagnostics

PASS, FAIL, ASSUMED = "pass", "fail", "unverifiable — assumed"


@dataclass
class TamenessReport:
    model: dict
    conditions: dict
    evidence: dict

    @property
    def checkable_pass(self):
        return all(self.conditions[c] == PASS for c in ("i", "ii", "iii"))

    def to_dict(self):
        return {"model": self.model, "conditions": self.conditions, "evidence": self.evidence}


def _radial_psi(model, r):
    # Evaluate psi along the diagonal and the first axis, take the larger.
    n = model.dim
    r = np.asarray(r, dtype=np.float64)
    axis_pts = np.zeros(r.shape + (n,))
    axis_pts[..., 0] = r
    diag_pts = np.repeat(r[..., None] / math.sqrt(n), n, axis=-1)
    return np.maximum(eval_psi(model, axis_pts), eval_psi(model, diag_pts))


def psi_integral(model, radius, step=None):
    """Riemann approximation of ``int psi`` over ``[-radius, radius]^n``."""
    n = model.dim
    scale = getattr(model, "scale", 1.0)
    if step is None:
        step = scale / 10.0 if n < 3 else scale / 5.0
    k = int(math.ceil(radius / step))
    axis = np.linspace(-radius, radius, 2 * k + 1)
    dx = axis[1] - axis[0]
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    pts = np.stack(grids, axis=-1)
    vals = eval_psi(model, pts)
    return float(vals.sum() * dx ** n)


def tameness_report(model, tail_radius=None):
    """Numerical checks of the four tameness conditions; failures are entries, not errors."""
    conditions = {}
    evidence = {}
    scale = getattr(model, "scale", 1.0)
    # (i) non-degeneracy of (X, grad X, Hess X)
    try:
        blocks = lambda_blocks(model)
        evidence["min_eigenvalue_lambda"] = blocks.min_eigenvalue
        conditions["i"] = PASS
    except DegenerateCovarianceError as exc:
        blocks = None
        evidence["min_eigenvalue_lambda"] = None
        evidence["i_reason"] = str(exc)
        conditions["i"] = FAIL

    # (ii) four derivatives plus log-modulus of continuity of the fourth derivatives at 0
    if model.max_order >= 4:
        ts = np.logspace(-4, -1, 25) * scale
        worst = np.zeros_like(ts)
        zero = np.zeros(model.dim)
        for order in multi_orders(model.dim):
            if sum(order) != 4:
                continue
            pts = np.zeros((ts.size, model.dim))
            pts[:, 0] = ts
            diff = np.abs(model.derivative(zero, order) - model.derivative(pts, order))
            worst = np.maximum(worst, diff)
        ok = worst > 0
        x = np.log(-np.log(ts[ok] / scale))
        y = np.log(worst[ok])
        if ok.sum() >= 2:
            slope = np.polyfit(x, y, 1)[0]
            alpha = float(-slope - 1.0)
        else:
            alpha = float("inf")
        evidence["modulus_alpha"] = alpha
        evidence["modulus_max_diff"] = float(worst.max())
        # the fourth derivatives must at least be continuous at 0
        conditions["ii"] = PASS if worst[0] <= worst[-1] and alpha > 0 else FAIL
    else:
        evidence["modulus_alpha"] = None
        evidence["ii_reason"] = "%s covariance has derivatives only up to order %d" % (
            model.kind, model.max_order)
        conditions["ii"] = FAIL

    # (iii) psi integrable and vanishing at infinity
    if model.max_order >= 4:
        radius = tail_radius if tail_radius is not None else 8.0 * scale
        rs = np.linspace(radius / 2, radius, 20)
        tail = _radial_psi(model, rs)
        evidence["psi_at_radius"] = float(tail[-1])
        pos = tail > 0
        if pos.sum() >= 2:
            evidence["psi_tail_log_slope"] = float(np.polyfit(rs[pos], np.log(tail[pos]), 1)[0])
        else:
            evidence["psi_tail_log_slope"] = float("-inf")
        integral = psi_integral(model, radius)
        evidence["psi_integral"] = integral
        decreasing = bool(np.all(np.diff(tail) <= 0))
        conditions["iii"] = PASS if (tail[-1] < 1e-8 and decreasing and math.isfinite(integral)) else FAIL
    else:
        evidence["psi_integral"] = None
        evidence["iii_reason"] = "psi needs derivatives up to order 4"
        conditions["iii"] = FAIL

    conditions["iv"] = ASSUMED
    return TamenessReport(model=model.to_config(), conditions=conditions, evidence=evidence)
