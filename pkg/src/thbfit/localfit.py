"""Local variable-degree polynomial least-squares fits giving one B-spline
coefficient each."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .densela import lstsq, min_singular_value
from .splinecore import LocalPoly, TensorSpace, monomial_exponents, poly_dim, poly_to_coeffs

__all__ = [
    "GuardConfig",
    "LocalFitFailure",
    "LocalFitResult",
    "LocalPoly",
    "ScatteredDataset",
    "fit_lambda",
    "gather",
    "local_ball",
    "select_degree",
]


class LocalFitFailure(RuntimeError):
    """No data point within K_J enlargements of the local ball."""


class ScatteredDataset:
    """Pairwise distinct sites ``points`` (n, r) with values ``values`` (n,)."""

    def __init__(self, points, values, check_distinct: bool = True):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[0] == 1 and np.ndim(values) == 1 and len(values) != 1:
            points = points.T
        values = np.asarray(values, dtype=float).ravel()
        if points.shape[0] != values.shape[0]:
            raise ValueError("points and values differ in length")
        if points.shape[0] < 1:
            raise ValueError("dataset is empty")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(values))):
            raise ValueError("dataset has non-finite entries")
        if check_distinct and np.unique(points, axis=0).shape[0] != points.shape[0]:
            raise ValueError("dataset has repeated sites")
        points.setflags(write=False)
        values.setflags(write=False)
        self.points = points
        self.values = values

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def r(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    def subset(self, mask) -> "ScatteredDataset":
        return ScatteredDataset(self.points[mask], self.values[mask], check_distinct=False)


@dataclass(frozen=True)
class GuardConfig:
    """Reject local polynomials that leave the local data range.

    The fit is evaluated on a tensor grid of ``degree + 2`` equispaced points
    per direction over the support; any value outside
    ``[min - tau * range, max + tau * range]`` lowers the degree by one.
    """

    tau: float = 0.5


@dataclass(frozen=True)
class LocalFitResult:
    lam: float
    degree: int
    poly: LocalPoly
    n_samples: int
    k: int
    msv: float


def local_ball(space: TensorSpace, J):
    """Center and radius (half the diagonal) of the support box of ``B_J``."""
    lo, hi = space.support_box(J)
    return 0.5 * (lo + hi), 0.5 * float(np.sqrt(np.sum((hi - lo) ** 2)))


def _in_ball(points, center, radius) -> np.ndarray:
    dist = np.sqrt(np.sum((points - center) ** 2, axis=1))
    return np.flatnonzero(dist <= radius)


def _query(F: ScatteredDataset, centers, radii):
    # tree query is a superset filter; membership is decided by _in_ball
    hits = F.tree.query_ball_point(centers, radii * (1 + 1e-9) + 1e-300)
    out = []
    for c, rad, cand in zip(centers, radii, hits):
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        out.append(cand[_in_ball(F.points[cand], c, rad)])
    return out


def gather(F: ScatteredDataset, center, radius: float, K: int):
    """Indices of the data in the first nonempty ball of radius k*radius, k <= K."""
    idx, k = gather_many(F, np.atleast_2d(center), np.array([radius]), np.array([K]))
    if idx[0] is None:
        raise LocalFitFailure(f"no data within {K} x {radius:.6g} of {np.asarray(center)}")
    return idx[0], int(k[0])


def gather_many(F: ScatteredDataset, centers, radii, Ks):
    """Batched ``gather``; failed entries are ``None`` with k = K + 1."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.asarray(radii, dtype=float)
    Ks = np.asarray(Ks, dtype=np.int64)
    if np.any(Ks < 1):
        raise ValueError("K_J must be at least 1")
    n = centers.shape[0]
    result = [None] * n
    ks = np.zeros(n, dtype=np.int64)
    todo = np.arange(n)
    k = 1
    while todo.size:
        found = _query(F, centers[todo], k * radii[todo])
        left = []
        for j, idx in zip(todo, found):
            if idx.size:
                result[j] = idx
                ks[j] = k
            else:
                left.append(j)
        k += 1
        todo = np.array([j for j in left if Ks[j] >= k], dtype=np.int64)
        for j in left:
            if Ks[j] < k:
                ks[j] = Ks[j] + 1
    return result, ks


def collocation(U, degree: int) -> np.ndarray:
    U = np.ascontiguousarray(np.atleast_2d(np.asarray(U, dtype=float)))
    return kernels.power_matrix(U, monomial_exponents(U.shape[1], degree))


def select_degree(U, degree: int, sigma: float):
    """Largest total degree <= ``degree`` whose collocation matrix at the
    scaled sites ``U`` has enough rows and MSV >= ``sigma``.

    Returns ``(d_J, A_J, msv)``. Degree 0 always passes for ``sigma <= 1``.
    """
    if not 0 < sigma <= 1:
        raise ValueError("sigma must lie in (0, 1]")
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n, r = U.shape
    if n < 1:
        raise ValueError("need at least one site")
    A_full = collocation(U, degree)
    for dj in range(degree, -1, -1):
        p = poly_dim(r, dj)
        if n < p:
            continue
        A = A_full[:, :p]
        msv = min_singular_value(A)
        if msv >= sigma:
            return dj, A, msv
    raise AssertionError("degree 0 must pass the singular value gate")


def _guard_grid(lo, hi, degree: int) -> np.ndarray:
    axes = [np.linspace(a, b, degree + 2) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def fit_local(space: TensorSpace, J, X, f, sigma: float, guard: GuardConfig | None = None):
    """Local polynomial for ``B_J`` from sites ``X`` and values ``f``.

    Returns ``(poly, msv)``.
    """
    lo, hi = space.support_box(J)
    d = min(space.degrees)
    U = (np.atleast_2d(X) - lo) / (hi - lo)
    dj, A, msv = select_degree(U, d, sigma)
    while True:
        coeffs = lstsq(A, f)
        poly = LocalPoly(dj, coeffs, lo, hi)
        if guard is None or dj == 0:
            return poly, msv
        vals = poly(_guard_grid(lo, hi, dj))
        fmin, fmax = float(np.min(f)), float(np.max(f))
        slack = guard.tau * (fmax - fmin)
        if np.all((vals >= fmin - slack) & (vals <= fmax + slack)):
            return poly, msv
        dj -= 1
        A = A[:, : poly_dim(U.shape[1], dj)]
        msv = min_singular_value(A)


def fit_lambda(
    space: TensorSpace,
    J,
    F: ScatteredDataset,
    sigma: float,
    K: int,
    guard: GuardConfig | None = None,
) -> LocalFitResult:
    """Coefficient of ``B_J`` from a local least-squares polynomial."""
    J = space.check_index(J)
    center, radius = local_ball(space, J)
    idx, k = gather(F, center, radius, K)
    return _finish(space, J, F, idx, k, sigma, guard)


def _finish(space, J, F, idx, k, sigma, guard) -> LocalFitResult:
    poly, msv = fit_local(space, J, F.points[idx], F.values[idx], sigma, guard)
    lam = poly_to_coeffs(space, poly)[J]
    return LocalFitResult(lam, poly.degree, poly, int(idx.size), int(k), float(msv))


def fit_many(space: TensorSpace, multis, F: ScatteredDataset, sigma: float, Ks, guard=None):
    """``fit_lambda`` for many functions of one level.

    Returns a list of ``LocalFitResult`` or ``None`` for functions whose
    gather failed.
    """
    multis = [tuple(int(j) for j in J) for J in multis]
    if not multis:
        return []
    balls = [local_ball(space, J) for J in multis]
    centers = np.array([b[0] for b in balls])
    radii = np.array([b[1] for b in balls])
    found, ks = gather_many(F, centers, radii, Ks)
    out = []
    for J, idx, k in zip(multis, found, ks):
        out.append(None if idx is None else _finish(space, J, F, idx, k, sigma, guard))
    return out
