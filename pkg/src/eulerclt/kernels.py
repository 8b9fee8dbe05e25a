"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``cell_alternating_sum``, ``critical_cell_mask``,
``eval_monomials``, ``compose``) point at the numba variant when :data:`USE_NUMBA` is
true and at the numpy variant otherwise. Both variants are always importable
under explicit ``*_numba`` / ``*_numpy`` names for testing and benchmarking.
"""
import itertools

import numpy as np

from ._accel import USE_NUMBA, njit


def _as3d(values):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim > 3 or values.ndim < 1:
        raise ValueError("grids of dimension 1..3 only, got %d" % values.ndim)
    return np.ascontiguousarray(values.reshape(values.shape + (1,) * (3 - values.ndim)))


# ---------------------------------------------------------------------------
# Euler integral of the lower-star cubical complex:  sum_c (-1)^dim(c) max_{v in c} f(v)


@njit
def _cell_sum3(v):
    n0, n1, n2 = v.shape
    total = 0.0
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                for mask in range(8):
                    a = mask & 1
                    b = (mask >> 1) & 1
                    c = (mask >> 2) & 1
                    if i + a >= n0 or j + b >= n1 or k + c >= n2:
                        continue
                    m = v[i, j, k]
                    for di in range(a + 1):
                        for dj in range(b + 1):
                            for dk in range(c + 1):
                                x = v[i + di, j + dj, k + dk]
                                if x > m:
                                    m = x
                    if (a + b + c) % 2 == 0:
                        total += m
                    else:
                        total -= m
    return total


def cell_alternating_sum_numba(values):
    return float(_cell_sum3(_as3d(values)))


def cell_maxima(values):
    """Yield ``(dim, maxima)`` for every cell type of the cubical grid on ``values``.

    ``maxima`` holds the lower-star value (max over vertices) of each cell of that type.
    """
    values = np.asarray(values, dtype=np.float64)
    nd = values.ndim
    for mask in itertools.product((0, 1), repeat=nd):
        v = values
        ok = True
        for axis, extend in enumerate(mask):
            if not extend:
                continue
            if v.shape[axis] < 2:
                ok = False
                break
            lo = [slice(None)] * nd
            hi = [slice(None)] * nd
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            v = np.maximum(v[tuple(lo)], v[tuple(hi)])
        if ok:
            yield sum(mask), mask, v


def cell_alternating_sum_numpy(values):
    total = 0.0
    for dim, _, vmax in cell_maxima(values):
        s = float(vmax.sum())
        total += s if dim % 2 == 0 else -s
    return total


# ---------------------------------------------------------------------------
# Screening of lattice cells whose corner gradients change sign in every component


@njit
def _crit_mask3(grad, out):
    d = grad.shape[0]
    n0, n1, n2 = grad.shape[1], grad.shape[2], grad.shape[3]
    c0, c1, c2 = out.shape
    e0 = 1 if n0 > 1 else 0
    e1 = 1 if n1 > 1 else 0
    e2 = 1 if n2 > 1 else 0
    for i in range(c0):
        for j in range(c1):
            for k in range(c2):
                flag = True
                for comp in range(d):
                    lo = np.inf
                    hi = -np.inf
                    for di in range(e0 + 1):
                        for dj in range(e1 + 1):
                            for dk in range(e2 + 1):
                                x = grad[comp, i + di, j + dj, k + dk]
                                if x < lo:
                                    lo = x
                                if x > hi:
                                    hi = x
                    if lo > 0.0 or hi < 0.0:
                        flag = False
                        break
                out[i, j, k] = flag


def critical_cell_mask_numba(grad):
    grad = np.asarray(grad, dtype=np.float64)
    d = grad.shape[0]
    spatial = grad.shape[1:]
    g3 = np.ascontiguousarray(grad.reshape((d,) + spatial + (1,) * (3 - len(spatial))))
    cells = tuple(max(s - 1, 1) if s > 1 else 1 for s in g3.shape[1:])
    out = np.zeros(cells, dtype=np.bool_)
    _crit_mask3(g3, out)
    return out.reshape(tuple(s - 1 for s in spatial))


def critical_cell_mask_numpy(grad):
    grad = np.asarray(grad, dtype=np.float64)
    d = grad.shape[0]
    spatial = grad.shape[1:]
    nd = len(spatial)
    cell_shape = tuple(s - 1 for s in spatial)
    mask = np.ones(cell_shape, dtype=bool)
    for comp in range(d):
        lo = np.full(cell_shape, np.inf)
        hi = np.full(cell_shape, -np.inf)
        for corner in itertools.product((0, 1), repeat=nd):
            sl = tuple(slice(c, c + n) for c, n in zip(corner, cell_shape))
            x = grad[comp][sl]
            lo = np.minimum(lo, x)
            hi = np.maximum(hi, x)
        mask &= (lo <= 0.0) & (hi >= 0.0)
    return mask


# ---------------------------------------------------------------------------
# Sparse polynomial evaluation: out[p] = sum_m coef[m] * prod_l X[p, idx[m, l]] ** pw[m, l]


@njit
def _eval_monomials(coef, idx, pw, X, out):
    P = X.shape[0]
    M, L = idx.shape
    for p in range(P):
        acc = 0.0
        for m in range(M):
            term = coef[m]
            for l in range(L):
                e = pw[m, l]
                if e == 0:
                    continue
                x = X[p, idx[m, l]]
                y = x
                for _ in range(e - 1):
                    y *= x
                term *= y
            acc += term
        out[p] = acc


def eval_monomials_numba(coef, idx, pw, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = np.empty(X.shape[0])
    _eval_monomials(np.ascontiguousarray(coef, dtype=np.float64),
                    np.ascontiguousarray(idx, dtype=np.int64),
                    np.ascontiguousarray(pw, dtype=np.int64), X, out)
    return out


def eval_monomials_numpy(coef, idx, pw, X, chunk=4096):
    X = np.asarray(X, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    idx = np.asarray(idx, dtype=np.int64)
    pw = np.asarray(pw, dtype=np.int64)
    out = np.zeros(X.shape[0])
    for start in range(0, coef.size, chunk):
        sl = slice(start, start + chunk)
        terms = np.prod(X[:, idx[sl]] ** pw[sl][None, :, :], axis=2)
        out += terms @ coef[sl]
    return out


# ---------------------------------------------------------------------------
# Composition of a sparse homogeneous polynomial with a linear map, summed
# against target weights:  out[p] = sum_b wt[b] * coeff_b( sum_a c_a prod_i (K_p^T y)_i^{a_i} )
#
# The words ``prod_i y_i^{a_i}`` are stored as a prefix trie in preorder:
# node t multiplies its parent's polynomial by the linear form number
# ``node_var[t]``; ``node_coef[t]`` is the word coefficient at a leaf.
# ``mult[k, m, j]`` is the index (degree k+1) of monomial m (degree k) times y_j.


@njit
def _compose(node_var, node_depth, node_coef, mult, sizes, wt, K, out):
    P, N = K.shape[0], K.shape[1]
    q = sizes.shape[0] - 1
    mmax = 0
    for k in range(q + 1):
        if sizes[k] > mmax:
            mmax = sizes[k]
    stack = np.zeros((q + 1, mmax))
    for p in range(P):
        stack[0, 0] = 1.0
        acc = 0.0
        for t in range(node_var.shape[0]):
            k = node_depth[t]
            i = node_var[t]
            for m in range(sizes[k]):
                stack[k, m] = 0.0
            for m in range(sizes[k - 1]):
                x = stack[k - 1, m]
                if x == 0.0:
                    continue
                for j in range(N):
                    stack[k, mult[k - 1, m, j]] += x * K[p, j, i]
            c = node_coef[t]
            if c != 0.0:
                s = 0.0
                for m in range(sizes[q]):
                    s += stack[q, m] * wt[m]
                acc += c * s
        out[p] = acc


def compose_numba(node_var, node_depth, node_coef, mult, sizes, wt, K):
    K = np.ascontiguousarray(K, dtype=np.float64)
    out = np.empty(K.shape[0])
    _compose(np.asarray(node_var, np.int64), np.asarray(node_depth, np.int64),
             np.asarray(node_coef, np.float64), np.asarray(mult, np.int64),
             np.asarray(sizes, np.int64), np.asarray(wt, np.float64), K, out)
    return out


def compose_numpy(node_var, node_depth, node_coef, mult, sizes, wt, K, chunk=256):
    K = np.asarray(K, dtype=np.float64)
    P, N = K.shape[0], K.shape[1]
    q = len(sizes) - 1
    out = np.empty(P)
    for start in range(0, P, chunk):
        Kc = K[start:start + chunk]
        stack = [np.ones((Kc.shape[0], 1))] + [None] * q
        acc = np.zeros(Kc.shape[0])
        for i, k, c in zip(node_var, node_depth, node_coef):
            prev = stack[k - 1]
            cur = np.zeros((Kc.shape[0], sizes[k]))
            for j in range(N):
                cur[:, mult[k - 1, :sizes[k - 1], j]] += prev * Kc[:, j, i][:, None]
            stack[k] = cur
            if c != 0.0:
                acc += c * (cur @ wt)
        out[start:start + chunk] = acc
    return out


if USE_NUMBA:
    cell_alternating_sum = cell_alternating_sum_numba
    critical_cell_mask = critical_cell_mask_numba
    eval_monomials = eval_monomials_numba
    compose = compose_numba
else:
    cell_alternating_sum = cell_alternating_sum_numpy
    critical_cell_mask = critical_cell_mask_numpy
    eval_monomials = eval_monomials_numpy
    compose = compose_numpy
