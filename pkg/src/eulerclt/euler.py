"""Euler characteristic curves and upper Euler integrals on cubical grids.

Two independent routes to the same number:

* the threshold sweep: every cell of the closed cubical complex gets the max
  of its vertex values (lower star), so ``chi(f <= u)`` is the alternating
  cell count of cells with value ``<= u``; the integral is then an exact
  finite sum over the resulting step function;
* the critical-point route: critical points of ``f`` restricted to every
  open face of the cube, weighted by Morse index and, on proper faces, by
  whether ``f`` increases into the cube along every normal direction.
"""
from dataclasses import dataclass, field
import csv
import itertools
import math

import numpy as np

from . import kernels

ZERO_TOL = 1e-9


class DegenerateCriticalPointError(ValueError):
    pass


@dataclass
class EulerCurve:
    """Right-continuous step function ``u -> chi(f <= u)``."""

    breakpoints: np.ndarray
    chi_leq: np.ndarray
    chi_total: int = 1

    def __call__(self, u):
        i = np.searchsorted(self.breakpoints, u, side="right") - 1
        return np.where(i < 0, 0, self.chi_leq[np.maximum(i, 0)])

    def chi_gt(self, u):
        return self.chi_total - self(u)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "chi_leq", "chi_gt"])
            for u, c in zip(self.breakpoints, self.chi_leq):
                w.writerow([repr(float(u)), int(c), int(self.chi_total - c)])


def _values(field_or_array):
    vals = getattr(field_or_array, "values", field_or_array)
    return np.asarray(vals, dtype=np.float64)


def _spacing(field_or_array):
    spec = getattr(field_or_array, "spec", None)
    return spec.h if spec is not None else 1.0


def ec_curve(field):
    """Exact ``chi(f <= u)`` curve of the lower-star filtration of the grid."""
    values = _values(field)
    if not np.all(np.isfinite(values)):
        raise ValueError("field values must be finite")
    vals, dims, order_keys = [], [], []
    for dim, mask, vmax in kernels.cell_maxima(values):
        flat = vmax.ravel()
        vals.append(flat)
        dims.append(np.full(flat.size, dim, dtype=np.int64))
        order_keys.append(np.arange(flat.size))
    vals = np.concatenate(vals)
    dims = np.concatenate(dims)
    # ties: (value, dimension, position); chi at each distinct value is tie-order independent
    order = np.lexsort((np.concatenate(order_keys), dims, vals))
    vals = vals[order]
    signs = np.where(dims[order] % 2 == 0, 1, -1)
    running = np.cumsum(signs)
    last = np.r_[vals[1:] != vals[:-1], True]
    curve = EulerCurve(vals[last].copy(), running[last].astype(np.int64), 1)
    if curve.chi_leq[-1] != 1:
        raise AssertionError("terminal Euler characteristic %d != 1" % curve.chi_leq[-1])
    return curve


def upper_euler_integral(curve):
    """``int_0^inf [chi(f > u) - chi(f <= -u)] du`` of a step curve, summed exactly."""
    u = np.asarray(curve.breakpoints, dtype=np.float64)
    L = np.asarray(curve.chi_leq, dtype=np.float64)
    total = curve.chi_total
    terms = []
    if u[0] > 0:
        terms.append(total * u[0])  # chi(f <= u) = 0 on [0, u_1)
    right = np.r_[u[1:], np.inf]
    for lo, hi, level in zip(u, right, L):
        pos = max(hi, 0.0) - max(lo, 0.0) if hi > 0 else 0.0
        neg = min(hi, 0.0) - min(lo, 0.0) if lo < 0 else 0.0
        if pos and total - level:
            terms.append((total - level) * pos)
        if neg and level:
            terms.append(-level * neg)
    return math.fsum(terms)


def euler_integral(field):
    """Upper Euler integral via the fused cell kernel (same value as the curve route)."""
    return kernels.cell_alternating_sum(_values(field))


# ---------------------------------------------------------------------------
# Critical-point representation


@dataclass
class CriticalPoint:
    location: tuple
    value: float
    morse_index: int
    face: tuple
    boundary_indicator: bool
    offset: tuple = ()
    degenerate: bool = False
    hessian_eigenvalues: tuple = field(default=(), repr=False)

    @property
    def face_dim(self):
        return sum(1 for s in self.face if s == "*")

    @property
    def interior(self):
        return all(s == "*" for s in self.face)

    @property
    def contribution(self):
        if not self.boundary_indicator:
            return 0.0
        return (-1.0) ** self.morse_index * self.value


def _faces(n):
    """Open faces of the cube as tuples over axes of ``'*'`` (free), ``0`` or ``1`` (fixed low/high)."""
    return list(itertools.product(("*", 0, 1), repeat=n))


def _inward_derivative(values, axis, side, h):
    """One-sided derivative along ``axis`` pointing into the cube, on the face ``side``."""
    p = values.shape[axis]
    take = lambda k: np.take(values, k if side == 0 else p - 1 - k, axis=axis)
    if p >= 3:
        return (-3.0 * take(0) + 4.0 * take(1) - take(2)) / (2.0 * h)
    return (take(1) - take(0)) / h


def _multilinear(corners, t):
    """Value and gradient of the multilinear interpolant of ``corners`` (shape (2,)*d + extra) at ``t``."""
    d = len(t)
    val = 0.0
    grad = [0.0] * d
    for corner in itertools.product((0, 1), repeat=d):
        w = 1.0
        dw = [1.0] * d
        for k, c in enumerate(corner):
            fk = t[k] if c else 1.0 - t[k]
            w *= fk
            for j in range(d):
                if j == k:
                    dw[j] *= 1.0 if c else -1.0
                else:
                    dw[j] *= fk
        x = corners[corner]
        val = val + w * x
        for j in range(d):
            grad[j] = grad[j] + dw[j] * x
    return val, grad


_STARTS = {}


def _starts(d):
    if d not in _STARTS:
        pts = [tuple([0.5] * d)] + list(itertools.product((0.2, 0.8), repeat=d))
        _STARTS[d] = [np.array(p) for p in pts]
    return _STARTS[d]


def _cell_zeros(gcorners):
    """Zeros of the multilinear gradient interpolant inside the unit cell.

    ``gcorners`` has shape (2,)*d + (d,). Returns a list of local coordinates.
    """
    d = gcorners.shape[-1]
    if d == 1:
        g0, g1 = gcorners[0, 0], gcorners[1, 0]
        if g0 == g1:
            return [np.array([0.0])] if g0 == 0 else []
        t = g0 / (g0 - g1)
        return [np.array([t])] if -1e-12 <= t <= 1 + 1e-12 else []
    scale = float(np.abs(gcorners).max())
    if scale == 0:
        return [np.full(d, 0.5)]
    found = []
    for start in _starts(d):
        t = start.copy()
        for _ in range(50):
            val, jac = _multilinear(gcorners, t)
            J = np.stack(jac, axis=-1)
            try:
                step = np.linalg.solve(J, val)
            except np.linalg.LinAlgError:
                break
            t = t - step
            if np.abs(t).max() > 5:
                break
            if np.abs(step).max() < 1e-13:
                break
        val, _ = _multilinear(gcorners, t)
        if np.abs(val).max() > 1e-10 * scale:
            continue
        if np.any(t < -1e-9) or np.any(t > 1 + 1e-9):
            continue
        if any(np.abs(t - s).max() < 1e-7 for s in found):
            continue
        found.append(t)
    return found


def _finite_hessian(g, h):
    d = g.ndim
    grads = np.gradient(g, h, edge_order=2) if d > 1 else [np.gradient(g, h, edge_order=2)]
    hess = np.empty((d, d) + g.shape)
    for i in range(d):
        gi = np.gradient(grads[i], h, edge_order=2) if d > 1 else [np.gradient(grads[i], h, edge_order=2)]
        for j in range(d):
            hess[i, j] = gi[j]
    hess = 0.5 * (hess + np.swapaxes(hess, 0, 1))
    return np.stack(grads), hess


def _face_slice(values, face):
    idx = tuple(slice(None) if s == "*" else (0 if s == 0 else -1) for s in face)
    return values[idx]


def classify_critical_points(field):
    """Critical points of the field restricted to every open face of the cube.

    Gradients and Hessians come from second-order finite differences of the
    face samples; zeros of the gradient are located inside lattice cells by
    Newton iteration on its multilinear interpolant, so off-lattice critical
    points (rotated saddles included) are found once each. ``location`` is
    the nearest lattice point, ``offset`` the sub-cell position in grid units.
    """
    values = _values(field)
    h = _spacing(field)
    n = values.ndim
    if n > 3:
        raise ValueError("critical point search supports n <= 3")
    p = values.shape[0]
    scale = max(1.0, float(np.abs(values).max()))
    points = []
    for face in _faces(n):
        free = [k for k, s in enumerate(face) if s == "*"]
        fixed = [k for k, s in enumerate(face) if s != "*"]
        g = _face_slice(values, face)
        normals = []
        for k in fixed:
            der = _inward_derivative(values, k, face[k], h)
            # der lost axis k; slice the remaining fixed axes
            sub = tuple(slice(None) if s == "*" else (0 if s == 0 else -1)
                        for j, s in enumerate(face) if j != k)
            normals.append(der[sub])
        base_loc = [None] * n
        for k in fixed:
            base_loc[k] = 0 if face[k] == 0 else p - 1
        d = len(free)
        if d == 0:
            indicator = all(float(v) >= 0.0 for v in normals)
            points.append(CriticalPoint(tuple(base_loc), float(g), 0, face, indicator, ()))
            continue
        grads, hess = _finite_hessian(g, h)
        mask = kernels.critical_cell_mask(grads)
        seen = []
        for cell in zip(*np.nonzero(mask)):
            sl = tuple(slice(c, c + 2) for c in cell)
            gcorners = np.moveaxis(grads[(slice(None),) + sl], 0, -1)
            for t in _cell_zeros(gcorners):
                t = np.clip(t, 0.0, 1.0)
                pos = np.asarray(cell, dtype=float) + t
                # open face: drop zeros on its boundary; zeros on shared cell walls are found twice
                if np.any(pos <= 1e-9) or np.any(pos >= p - 1 - 1e-9):
                    continue
                if any(np.abs(pos - q).max() < 1e-6 for q in seen):
                    continue
                seen.append(pos)
                near = tuple(int(x) for x in np.clip(np.rint(pos), 0, p - 1))
                delta = (pos - np.asarray(near)) * h
                gx = grads[(slice(None),) + near]
                hx = hess[(slice(None), slice(None)) + near]
                value = float(g[near] + gx @ delta + 0.5 * delta @ hx @ delta)
                hcorners = np.moveaxis(hess[(slice(None), slice(None)) + sl], (0, 1), (-2, -1))
                hmat, _ = _multilinear(hcorners, t)
                eig = np.linalg.eigvalsh(0.5 * (hmat + hmat.T))
                # the index parity must match the local degree of the interpolant whose zero this
                # is; near a min/saddle pair the smoothed Hessian can give both points the same index
                degenerate = bool(np.abs(eig).min() <= ZERO_TOL * max(scale, np.abs(eig).max()))
                _, jac = _multilinear(gcorners, t)
                jac = np.stack(jac, axis=-1) / h
                if not degenerate and np.sign(np.linalg.det(jac)) == -(-1) ** int((eig < 0).sum()):
                    eig = np.linalg.eigvalsh(0.5 * (jac + jac.T))
                mu = int((eig < 0).sum())
                indicator = True
                for nv in normals:
                    ncorners = nv[sl]
                    nval, _ = _multilinear(ncorners, t)
                    if nval < 0.0:
                        indicator = False
                loc = list(base_loc)
                for k, x in zip(free, near):
                    loc[k] = x
                off = [0.0] * n
                for k, x in zip(free, pos - np.asarray(near)):
                    off[k] = float(x)
                points.append(CriticalPoint(tuple(loc), value, mu, face, bool(indicator), tuple(off),
                                            degenerate, tuple(float(e) for e in eig)))
    return points


def morse_euler_integral(field, points=None, by_face_dim=False):
    """Euler integral as the signed sum of face-admissible critical values.

    With ``by_face_dim`` returns ``{face_dim: partial_sum}`` instead of the total.
    """
    if points is None:
        points = classify_critical_points(field)
    bad = [cp for cp in points if cp.degenerate]
    if bad:
        raise DegenerateCriticalPointError(
            "%d degenerate critical point(s), e.g. at %s; refine the grid spacing"
            % (len(bad), bad[0].location))
    n = _values(field).ndim
    parts = {k: [] for k in range(n + 1)}
    for cp in points:
        parts[cp.face_dim].append(cp.contribution)
    sums = {k: math.fsum(v) for k, v in parts.items()}
    if by_face_dim:
        return sums
    return math.fsum(sums.values())


def write_critical_points_csv(points, path):
    n = len(points[0].location) if points else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face"] + ["i%d" % (k + 1) for k in range(n)] + ["value", "mu", "indicator"])
        for cp in points:
            face = "".join("*" if s == "*" else str(s) for s in cp.face)
            w.writerow([face] + list(cp.location) + [repr(cp.value), cp.morse_index, int(cp.boundary_indicator)])


# ---------------------------------------------------------------------------
# Smooth synthetic fields for cross-checking the two representations


def _bumps(centers, widths, heights):
    def fn(x):
        out = np.zeros(x.shape[:-1])
        for c, w, a in zip(centers, widths, heights):
            out += a * np.exp(-np.sum((x - np.asarray(c)) ** 2, axis=-1) / (2.0 * w * w))
        return out
    return fn


def smooth_suite(scale=1.0):
    """Named smooth fields with isolated nondegenerate critical points, sampled at ``h = scale/10``.

    Returns ``[(name, FieldGrid)]``; all live on cubes a few ``scale`` wide.
    """
    from .fieldgen import FieldGrid, GridSpec

    h = scale / 10.0
    L = scale
    out = []
    s1 = GridSpec(1, 12.0 * L, h)
    out.append(("sin-mix-1d", FieldGrid.from_function(
        s1, lambda x: np.sin(x[..., 0] / L) + 0.5 * np.cos(0.7 * x[..., 0] / L + 0.3))))
    out.append(("bumps-1d", FieldGrid.from_function(
        s1, _bumps([[3 * L], [6.5 * L], [9 * L]], [L, 0.8 * L, 1.2 * L], [1.5, -1.0, 2.0]))))
    out.append(("offset-bump-1d", FieldGrid.from_function(
        s1, lambda x: 0.7 + _bumps([[5.2 * L]], [1.5 * L], [1.3])(x))))
    s2 = GridSpec(2, 6.0 * L, h)
    out.append(("bumps-2d", FieldGrid.from_function(
        s2, _bumps([[1.8 * L, 2.1 * L], [4.2 * L, 3.9 * L], [2.5 * L, 4.6 * L]], [L, 0.9 * L, 0.8 * L],
                   [2.0, -1.5, 1.0]))))
    out.append(("trig-2d", FieldGrid.from_function(
        s2, lambda x: np.sin(0.9 * x[..., 0] / L + 0.2) * np.cos(0.8 * x[..., 1] / L - 0.4)
        + 0.3 * np.sin(0.5 * (x[..., 0] + x[..., 1]) / L))))
    out.append(("rotated-saddle-2d", FieldGrid.from_function(
        s2, lambda x: np.cos(0.6 * (x[..., 0] - x[..., 1]) / L) * np.sin(0.55 * (x[..., 0] + 0.8 * x[..., 1]) / L))))
    s3 = GridSpec(3, 4.0 * L, h)
    out.append(("bumps-3d", FieldGrid.from_function(
        s3, _bumps([[1.5 * L, 1.7 * L, 2.2 * L], [2.7 * L, 2.4 * L, 1.6 * L]], [0.9 * L, L], [1.5, -1.2]))))
    out.append(("trig-3d", FieldGrid.from_function(
        s3, lambda x: np.sin(0.8 * x[..., 0] / L + 0.1) + 0.9 * np.sin(0.7 * x[..., 1] / L + 0.5)
        + 0.8 * np.cos(0.6 * x[..., 2] / L - 0.2) + 0.3 * np.sin(0.5 * (x[..., 0] + x[..., 1] - x[..., 2]) / L))))
    return out
