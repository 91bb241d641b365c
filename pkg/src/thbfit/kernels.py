"""Hot numeric kernels, each with a numba and a vectorized numpy version.

The module-level names (``basis_funs``, ``oslo_weights``, ``eval_cells``,
``power_matrix``) are bound to the numba versions unless the environment
variable ``THBFIT_USE_NUMBA`` is ``0``. Both versions are always importable
under ``*_nb`` / ``*_np`` so they can be compared in tests and benchmarks.
"""

from __future__ import annotations

import numpy as np

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# B-spline basis values (Cox-de Boor, triangular scheme)
# ---------------------------------------------------------------------------


@njit
def basis_funs_nb(knots, degree, spans, x):
    n = x.shape[0]
    out = np.empty((n, degree + 1))
    left = np.empty(degree + 1)
    right = np.empty(degree + 1)
    for k in range(n):
        mu = spans[k]
        u = x[k]
        out[k, 0] = 1.0
        for j in range(1, degree + 1):
            left[j] = u - knots[mu + 1 - j]
            right[j] = knots[mu + j] - u
            saved = 0.0
            for r in range(j):
                temp = out[k, r] / (right[r + 1] + left[j - r])
                out[k, r] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            out[k, j] = saved
    return out


def basis_funs_np(knots, degree, spans, x):
    x = np.asarray(x, dtype=float)
    spans = np.asarray(spans, dtype=np.int64)
    n = x.shape[0]
    out = np.zeros((n, degree + 1))
    out[:, 0] = 1.0
    left = np.empty((n, degree + 1))
    right = np.empty((n, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = x - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = out[:, r] / (right[:, r + 1] + left[:, j - r])
            out[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        out[:, j] = saved
    return out


# ---------------------------------------------------------------------------
# Knot-insertion weights (Oslo algorithm)
# ---------------------------------------------------------------------------


@njit
def oslo_weights_nb(coarse, fine, degree, mus):
    nf = mus.shape[0]
    w = np.empty((nf, degree + 1))
    b = np.empty(degree + 1)
    for i in range(nf):
        mu = mus[i]
        b[0] = 1.0
        for j in range(1, degree + 1):
            x = fine[i + j]
            saved = 0.0
            for r in range(j):
                rt = coarse[mu + r + 1] - x
                lf = x - coarse[mu + 1 - j + r]
                temp = b[r] / (rt + lf)
                b[r] = saved + rt * temp
                saved = lf * temp
            b[j] = saved
        for j in range(degree + 1):
            w[i, j] = b[j]
    return w


def oslo_weights_np(coarse, fine, degree, mus):
    mus = np.asarray(mus, dtype=np.int64)
    nf = mus.shape[0]
    idx = np.arange(nf)
    b = np.zeros((nf, degree + 1))
    b[:, 0] = 1.0
    for j in range(1, degree + 1):
        x = fine[idx + j]
        saved = np.zeros(nf)
        for r in range(j):
            rt = coarse[mus + r + 1] - x
            lf = x - coarse[mus + 1 - j + r]
            temp = b[:, r] / (rt + lf)
            b[:, r] = saved + rt * temp
            saved = lf * temp
        b[:, j] = saved
    return b


# ---------------------------------------------------------------------------
# Evaluation of per-cell tensor coefficient tables
# ---------------------------------------------------------------------------


@njit
def eval_cells_nb(vals, degrees, rows, table):
    # vals: (r, n, dmax+1); table rows hold C-ordered (d1+1)x...x(dr+1) blocks
    r = degrees.shape[0]
    n = rows.shape[0]
    out = np.empty(n)
    if r == 1:
        m0 = degrees[0] + 1
        for p in range(n):
            total = 0.0
            for a in range(m0):
                total += table[rows[p], a] * vals[0, p, a]
            out[p] = total
        return out
    m0 = degrees[0] + 1
    m1 = degrees[1] + 1
    for p in range(n):
        row = rows[p]
        total = 0.0
        for a in range(m0):
            inner = 0.0
            for b in range(m1):
                inner += table[row, a * m1 + b] * vals[1, p, b]
            total += vals[0, p, a] * inner
        out[p] = total
    return out


def eval_cells_np(vals, degrees, rows, table):
    degrees = [int(d) for d in degrees]
    n = len(rows)
    block = table[rows]
    if len(degrees) == 1:
        return np.einsum("ni,ni->n", vals[0, :, : degrees[0] + 1], block)
    if len(degrees) == 2:
        block = block.reshape(n, degrees[0] + 1, degrees[1] + 1)
        return np.einsum(
            "ni,nj,nij->n",
            vals[0, :, : degrees[0] + 1],
            vals[1, :, : degrees[1] + 1],
            block,
        )
    raise ValueError("eval_cells supports r = 1 or 2")


# ---------------------------------------------------------------------------
# Power-basis collocation matrices
# ---------------------------------------------------------------------------


@njit
def power_matrix_nb(u, exps):
    n, r = u.shape
    p = exps.shape[0]
    out = np.empty((n, p))
    for i in range(n):
        for j in range(p):
            v = 1.0
            for k in range(r):
                e = exps[j, k]
                for _ in range(e):
                    v *= u[i, k]
            out[i, j] = v
    return out


def power_matrix_np(u, exps):
    u = np.asarray(u, dtype=float)
    out = np.ones((u.shape[0], exps.shape[0]))
    for k in range(u.shape[1]):
        out *= u[:, k : k + 1] ** exps[:, k][None, :]
    return out


if USE_NUMBA:
    basis_funs = basis_funs_nb
    oslo_weights = oslo_weights_nb
    eval_cells = eval_cells_nb
    power_matrix = power_matrix_nb
else:
    basis_funs = basis_funs_np
    oslo_weights = oslo_weights_np
    eval_cells = eval_cells_np
    power_matrix = power_matrix_np

BACKEND = "numba" if USE_NUMBA else "numpy"
