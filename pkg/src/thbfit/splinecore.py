"""Univariate and tensor-product B-spline spaces.

Knot vectors are clamped (open). Evaluation is right-continuous at interior
knots and takes the left limit at the right end of the domain, so every point
of the closed domain belongs to exactly one cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import kernels


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class KnotVector:
    """Clamped knot vector of a given degree."""

    def __init__(self, knots, degree: int):
        knots = np.asarray(knots, dtype=float)
        degree = int(degree)
        if knots.ndim != 1:
            raise ValueError("knots must be one-dimensional")
        if degree < 0:
            raise ValueError("degree must be non-negative")
        if not np.all(np.isfinite(knots)):
            raise ValueError("knots must be finite")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        nfuncs = knots.size - degree - 1
        if nfuncs < degree + 1:
            raise ValueError(
                f"{knots.size} knots give {nfuncs} functions, need at least {degree + 1}"
            )
        breaks, mult = np.unique(knots, return_counts=True)
        if breaks.size < 2:
            raise ValueError("knot vector spans an empty interval")
        if np.any(mult > degree + 1):
            raise ValueError("knot multiplicity exceeds degree + 1")
        if mult[0] != degree + 1 or mult[-1] != degree + 1:
            raise ValueError("end knots must have multiplicity degree + 1 (clamped)")

        self.knots = _readonly(knots)
        self.degree = degree
        self.breaks = _readonly(breaks)
        self.num_funcs = int(nfuncs)
        self.num_cells = int(breaks.size - 1)
        # support of function i covers cells first_cell[i] .. last_cell[i]
        self.first_cell = _readonly(
            np.searchsorted(breaks, knots[:nfuncs], side="left"), np.int64
        )
        self.last_cell = _readonly(
            np.searchsorted(breaks, knots[degree + 1 :], side="left") - 1, np.int64
        )
        # knot span index of each cell; functions span-d .. span live there
        self.cell_span = _readonly(
            np.searchsorted(knots, breaks[:-1], side="right") - 1, np.int64
        )

    @classmethod
    def clamped(cls, breaks, degree: int) -> "KnotVector":
        breaks = np.asarray(breaks, dtype=float)
        knots = np.concatenate(
            [np.repeat(breaks[0], degree), breaks, np.repeat(breaks[-1], degree)]
        )
        return cls(knots, degree)

    @property
    def lo(self) -> float:
        return float(self.breaks[0])

    @property
    def hi(self) -> float:
        return float(self.breaks[-1])

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self):
        return f"KnotVector(degree={self.degree}, knots={self.knots.tolist()})"

    def find_cell(self, t):
        """Cell index of each parameter (right-continuous, right end clipped)."""
        t = np.asarray(t, dtype=float)
        c = np.searchsorted(self.breaks, t, side="right") - 1
        return np.clip(c, 0, self.num_cells - 1)

    def first_func(self, cells):
        """Index of the first of the ``degree+1`` functions alive on each cell."""
        return self.cell_span[cells] - self.degree

    def basis(self, t, cells=None):
        """Nonzero basis values at ``t``.

        Returns ``(cells, vals)`` where ``vals[k, a]`` is the value of function
        ``first_func(cells[k]) + a`` at ``t[k]``. Passing ``cells`` evaluates the
        polynomial piece of that cell, which gives one-sided limits at knots.
        """
        t = np.ascontiguousarray(np.atleast_1d(np.asarray(t, dtype=float)))
        if cells is None:
            cells = self.find_cell(t)
        cells = np.asarray(cells, dtype=np.int64)
        spans = np.ascontiguousarray(self.cell_span[cells])
        vals = kernels.basis_funs(self.knots, self.degree, spans, t)
        return cells, vals

    def support(self, i):
        return float(self.knots[i]), float(self.knots[i + self.degree + 1])

    def support_widths(self):
        d = self.degree
        return self.knots[d + 1 :] - self.knots[: self.num_funcs]

    def greville(self):
        return greville_points(self)


def eval_univariate(kv: KnotVector, i: int, t: float) -> float:
    """Value of the ``i``-th B-spline of ``kv`` at ``t``."""
    if not 0 <= i < kv.num_funcs:
        raise IndexError(f"function index {i} out of range 0..{kv.num_funcs - 1}")
    if not kv.lo <= t <= kv.hi:
        raise ValueError(f"parameter {t} outside [{kv.lo}, {kv.hi}]")
    cells, vals = kv.basis([t])
    a = i - int(kv.first_func(cells)[0])
    if 0 <= a <= kv.degree:
        return float(vals[0, a])
    return 0.0


def greville_points(kv: KnotVector) -> np.ndarray:
    d = kv.degree
    if d == 0:
        return 0.5 * (kv.knots[:-1] + kv.knots[1:])
    k = kv.knots
    g = np.lib.stride_tricks.sliding_window_view(k[1:], d)[: kv.num_funcs].sum(axis=1) / d
    # averaging identical knots must return that knot exactly
    return np.clip(g, k[0], k[-1])


def refine_knots(kv: KnotVector) -> KnotVector:
    """Split every nonempty knot interval at its midpoint."""
    breaks = kv.breaks
    mids = 0.5 * (breaks[:-1] + breaks[1:])
    knots = np.sort(np.concatenate([kv.knots, mids]))
    return KnotVector(knots, kv.degree)


def _is_subsequence(coarse: np.ndarray, fine: np.ndarray) -> bool:
    cv, cm = np.unique(coarse, return_counts=True)
    fv, fm = np.unique(fine, return_counts=True)
    pos = np.searchsorted(fv, cv)
    if np.any(pos >= fv.size):
        return False
    return bool(np.all(fv[pos] == cv) and np.all(fm[pos] >= cm))


def refinement_band(coarse: KnotVector, fine: KnotVector):
    """Knot-insertion weights from ``coarse`` to ``fine``.

    Returns ``(start, w)``: fine coefficient ``i`` equals
    ``sum_a w[i, a] * c[start[i] + a]`` for coarse coefficients ``c``.
    """
    if coarse.degree != fine.degree:
        raise ValueError("degree mismatch")
    if coarse.lo != fine.lo or coarse.hi != fine.hi:
        raise ValueError("knot vectors span different intervals")
    if not _is_subsequence(coarse.knots, fine.knots):
        raise ValueError("spaces are not nested")
    d = coarse.degree
    tf = fine.knots[: fine.num_funcs]
    mus = np.searchsorted(coarse.knots, tf, side="right") - 1
    mus = np.minimum(mus, coarse.num_funcs - 1).astype(np.int64)
    w = kernels.oslo_weights(coarse.knots, fine.knots, d, np.ascontiguousarray(mus))
    return mus - d, w


def refinement_matrix(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    start, w = refinement_band(coarse, fine)
    R = np.zeros((fine.num_funcs, coarse.num_funcs))
    rows = np.repeat(np.arange(fine.num_funcs), coarse.degree + 1)
    cols = (start[:, None] + np.arange(coarse.degree + 1)).ravel()
    np.add.at(R, (rows, cols), w.ravel())
    return R


class TensorSpace:
    """Tensor-product B-spline space of one hierarchy level."""

    def __init__(self, kvs, level: int = 0):
        kvs = tuple(kvs)
        if len(kvs) not in (1, 2):
            raise NotImplementedError(f"dimension r={len(kvs)} is unsupported (r must be 1 or 2)")
        self.kvs = kvs
        self.level = int(level)

    @classmethod
    def from_breaks(cls, breaks, degrees, level: int = 0) -> "TensorSpace":
        return cls([KnotVector.clamped(b, d) for b, d in zip(breaks, degrees)], level)

    @classmethod
    def uniform(cls, lo, hi, cells, degrees) -> "TensorSpace":
        breaks = [np.linspace(a, b, n + 1) for a, b, n in zip(lo, hi, cells)]
        return cls.from_breaks(breaks, degrees)

    @property
    def r(self) -> int:
        return len(self.kvs)

    @property
    def degrees(self) -> tuple:
        return tuple(kv.degree for kv in self.kvs)

    @property
    def shape(self) -> tuple:
        return tuple(kv.num_funcs for kv in self.kvs)

    @property
    def cell_shape(self) -> tuple:
        return tuple(kv.num_cells for kv in self.kvs)

    @property
    def num_funcs(self) -> int:
        return int(np.prod(self.shape))

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.cell_shape))

    @property
    def lo(self) -> np.ndarray:
        return np.array([kv.lo for kv in self.kvs])

    @property
    def hi(self) -> np.ndarray:
        return np.array([kv.hi for kv in self.kvs])

    def __eq__(self, other):
        if not isinstance(other, TensorSpace):
            return NotImplemented
        return self.kvs == other.kvs

    def __hash__(self):
        return hash(self.kvs)

    def __repr__(self):
        return f"TensorSpace(level={self.level}, degrees={self.degrees}, cells={self.cell_shape})"

    def check_index(self, J):
        J = tuple(int(j) for j in J)
        if len(J) != self.r or any(not 0 <= j < n for j, n in zip(J, self.shape)):
            raise IndexError(f"multi-index {J} invalid for shape {self.shape}")
        return J

    def support_cells(self, J):
        """Inclusive per-direction cell ranges covered by ``supp B_J``."""
        J = self.check_index(J)
        return tuple(
            (int(kv.first_cell[j]), int(kv.last_cell[j])) for kv, j in zip(self.kvs, J)
        )

    def support_box(self, J):
        J = self.check_index(J)
        lo = np.array([kv.knots[j] for kv, j in zip(self.kvs, J)])
        hi = np.array([kv.knots[j + kv.degree + 1] for kv, j in zip(self.kvs, J)])
        return lo, hi

    def support_boxes(self, multi):
        """Vectorized support boxes; ``multi`` is a tuple of index arrays."""
        lo = np.stack([kv.knots[m] for kv, m in zip(self.kvs, multi)], axis=-1)
        hi = np.stack([kv.knots[m + kv.degree + 1] for kv, m in zip(self.kvs, multi)], axis=-1)
        return lo, hi

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all((X >= self.lo) & (X <= self.hi), axis=1)

    def basis(self, X, cells=None):
        """Per-direction nonzero basis values at points ``X`` of shape (n, r).

        Returns ``(cells, vals)`` with ``cells`` of shape (n, r) and ``vals`` a
        list of (n, d_k+1) arrays.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out_cells = np.empty((X.shape[0], self.r), dtype=np.int64)
        vals = []
        for k, kv in enumerate(self.kvs):
            c, v = kv.basis(X[:, k], None if cells is None else cells[:, k])
            out_cells[:, k] = c
            vals.append(v)
        return out_cells, vals

    def eval_tensor(self, J, X):
        """Values of ``B_J`` at points ``X`` (shape (n, r) or (r,))."""
        J = self.check_index(J)
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if not np.all(self.contains(X)):
            raise ValueError("point outside the space domain")
        cells, vals = self.basis(X)
        out = np.ones(X.shape[0])
        for k, kv in enumerate(self.kvs):
            a = J[k] - kv.first_func(cells[:, k])
            ok = (a >= 0) & (a <= kv.degree)
            v = np.zeros(X.shape[0])
            v[ok] = vals[k][ok, a[ok]]
            out *= v
        return float(out[0]) if single else out

    def evaluate(self, coeffs, X):
        """Evaluate the spline with dense coefficient array ``coeffs``."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != self.shape:
            raise ValueError(f"coefficient shape {coeffs.shape} != {self.shape}")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cells, vals = self.basis(X)
        first = [kv.first_func(cells[:, k]) for k, kv in enumerate(self.kvs)]
        out = np.zeros(X.shape[0])
        for offs in product(*[range(d + 1) for d in self.degrees]):
            idx = tuple(f + o for f, o in zip(first, offs))
            w = np.ones(X.shape[0])
            for k, o in enumerate(offs):
                w *= vals[k][:, o]
            out += w * coeffs[idx]
        return out

    def ravel(self, multi) -> np.ndarray:
        return np.ravel_multi_index(tuple(multi), self.shape).astype(np.int64)

    def unravel(self, keys) -> tuple:
        return np.unravel_index(np.asarray(keys, dtype=np.int64), self.shape)

    def ravel_cells(self, multi) -> np.ndarray:
        return np.ravel_multi_index(tuple(multi), self.cell_shape).astype(np.int64)

    def unravel_cells(self, keys) -> tuple:
        return np.unravel_index(np.asarray(keys, dtype=np.int64), self.cell_shape)

    def find_cells(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([kv.find_cell(X[:, k]) for k, kv in enumerate(self.kvs)], axis=1)


def dyadic_refine(space: TensorSpace) -> TensorSpace:
    return TensorSpace([refine_knots(kv) for kv in space.kvs], space.level + 1)


def two_scale(coarse: TensorSpace, fine: TensorSpace, c) -> np.ndarray:
    """Coefficients in ``fine`` of the spline with coefficients ``c`` in ``coarse``."""
    c = np.asarray(c, dtype=float)
    if coarse.r != fine.r:
        raise ValueError("spaces have different dimensions")
    if c.shape != coarse.shape:
        raise ValueError(f"coefficient shape {c.shape} != {coarse.shape}")
    out = c
    for ax, (kc, kf) in enumerate(zip(coarse.kvs, fine.kvs)):
        R = refinement_matrix(kc, kf)
        out = np.moveaxis(np.tensordot(R, out, axes=(1, ax)), 0, ax)
    return out


# ---------------------------------------------------------------------------
# Local polynomials and their exact B-spline form
# ---------------------------------------------------------------------------


def monomial_exponents(r: int, degree: int) -> np.ndarray:
    """Exponents of all monomials of total degree <= ``degree``, graded lex.

    Within each total degree the order is lexicographically descending, so
    the list for ``degree - 1`` is a prefix of the list for ``degree``.
    """
    rows = []
    for k in range(degree + 1):
        block = [a for a in product(range(k, -1, -1), repeat=r) if sum(a) == k]
        rows.extend(block)
    return np.array(rows, dtype=np.int64).reshape(-1, r)


def poly_dim(r: int, degree: int) -> int:
    from math import comb

    return comb(degree + r, r)


@dataclass(frozen=True)
class LocalPoly:
    """Polynomial in the power basis of the unit box ``(X - lo) / (hi - lo)``."""

    degree: int
    coeffs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def r(self) -> int:
        return len(self.lo)

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.r, self.degree)

    def to_unit(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.lo) / (self.hi - self.lo)

    def __call__(self, X) -> np.ndarray:
        u = np.ascontiguousarray(self.to_unit(X))
        A = kernels.power_matrix(u, self.exponents)
        return A @ self.coeffs


@dataclass(frozen=True)
class CoeffBlock:
    """Dense coefficients for the index box ``start .. start + values.shape - 1``."""

    start: tuple
    values: np.ndarray

    def __getitem__(self, J):
        idx = tuple(int(j) - s for j, s in zip(J, self.start))
        if any(i < 0 or i >= n for i, n in zip(idx, self.values.shape)):
            raise KeyError(f"multi-index {tuple(J)} not covered by this block")
        return float(self.values[idx])

    def indices(self):
        return tuple(range(s, s + n) for s, n in zip(self.start, self.values.shape))


def _box_collocation(kv: KnotVector, a: float, b: float):
    """Interpolation sites and collocation matrix for the functions overlapping [a, b]."""
    d = kv.degree
    c0 = int(kv.find_cell(a))
    c1 = int(np.clip(np.searchsorted(kv.breaks, b, side="left") - 1, c0, kv.num_cells - 1))
    f0 = int(kv.cell_span[c0]) - d
    f1 = int(kv.cell_span[c1])
    inner = kv.knots[(kv.knots > a) & (kv.knots < b)]
    local = KnotVector(np.concatenate([[a] * (d + 1), inner, [b] * (d + 1)]), d)
    sites = greville_points(local)
    cells = np.clip(kv.find_cell(sites), c0, c1)
    cells, vals = kv.basis(sites, cells)
    first = kv.first_func(cells)
    C = np.zeros((sites.size, f1 - f0 + 1))
    for s in range(sites.size):
        C[s, first[s] - f0 : first[s] - f0 + d + 1] = vals[s]
    return f0, sites, C


def poly_to_coeffs(space: TensorSpace, poly: LocalPoly, box=None) -> CoeffBlock:
    """B-spline coefficients reproducing ``poly`` exactly on ``box``.

    Only functions whose support overlaps the box are returned. ``box``
    defaults to the polynomial's own reference box.
    """
    if poly.r != space.r:
        raise ValueError("dimension mismatch")
    exps = poly.exponents
    for k, d in enumerate(space.degrees):
        if exps.size and exps[:, k].max() > d:
            raise ValueError(
                f"polynomial degree {int(exps[:, k].max())} exceeds spline degree {d} "
                f"in direction {k}"
            )
    lo, hi = (poly.lo, poly.hi) if box is None else box
    starts, grids, mats = [], [], []
    for k, kv in enumerate(space.kvs):
        f0, sites, C = _box_collocation(kv, float(lo[k]), float(hi[k]))
        starts.append(f0)
        grids.append(sites)
        mats.append(C)
    mesh = np.meshgrid(*grids, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = poly(pts).reshape(mesh[0].shape)
    for ax, C in enumerate(mats):
        moved = np.moveaxis(vals, ax, 0)
        solved = np.linalg.solve(C, moved.reshape(C.shape[0], -1)).reshape(moved.shape)
        vals = np.moveaxis(solved, 0, ax)
    return CoeffBlock(tuple(starts), vals)
