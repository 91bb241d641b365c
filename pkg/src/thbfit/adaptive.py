"""Error-driven adaptive construction of THB-spline quasi-interpolants."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainSpec, trim_basis
from .hiermesh import (
    DomainHierarchy,
    QuasiInterpolant,
    _member,
    compute_active_sets,
)
from .localfit import GuardConfig, ScatteredDataset, fit_many
from .splinecore import KnotVector, TensorSpace

CONVERGED = "converged"
FAILURE_INITIAL_LAMBDA = "failure_initial_lambda"
FAILURE_MAX_LEVELS = "failure_max_levels"
FAILURE_LAMBDA = "failure_lambda"


@dataclass(frozen=True)
class FitConfig:
    initial: TensorSpace
    tol: float
    sigma: float = 1e-6
    max_levels: int = 8
    guard: GuardConfig | None = None
    domain: DomainSpec | None = None
    workers: int = 1
    chunk: int = 256

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.sigma <= 1:
            raise ValueError("sigma must lie in (0, 1]")
        if self.max_levels < 2:
            raise ValueError("max_levels must be at least 2")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        for kv in self.initial.kvs:
            if kv.num_cells < kv.degree + 1:
                raise ValueError(
                    f"initial mesh needs at least degree+1 = {kv.degree + 1} cells per direction"
                )

    @property
    def degrees(self) -> tuple:
        return self.initial.degrees


def auxiliary_space(space: TensorSpace) -> TensorSpace:
    """Coarse mesh with cells about twice the size of ``space``'s cells.

    Consecutive cells are merged in pairs (an odd leftover cell joins the last
    pair); a direction left with fewer than ``d + 1`` cells is split
    uniformly into exactly ``d + 1``.
    """
    kvs = []
    for kv in space.kvs:
        b = kv.breaks
        n = b.size - 1
        if n >= 2:
            merged = b[::2].copy()
            if n % 2:
                merged[-1] = b[-1]
            b = merged
        if b.size - 1 < kv.degree + 1:
            b = np.linspace(b[0], b[-1], kv.degree + 2)
        kvs.append(KnotVector.clamped(b, kv.degree))
    return TensorSpace(kvs, level=-1)


def max_radius(space: TensorSpace) -> float:
    """delta: the largest half-diameter over all supports of ``space``."""
    # the squared diameter is separable, so its maximum is the sum of maxima
    return 0.5 * math.sqrt(sum(float(np.max(kv.support_widths())) ** 2 for kv in space.kvs))


def radii(space: TensorSpace, keys) -> np.ndarray:
    """rho_J for the functions with flat keys ``keys``."""
    multi = space.unravel(np.asarray(keys, dtype=np.int64))
    sq = sum(kv.support_widths()[m] ** 2 for kv, m in zip(space.kvs, multi))
    return 0.5 * np.sqrt(sq)


class LevelRadii:
    """delta^l for l = -1, 0, 1, ... of a dyadic level sequence."""

    def __init__(self, spaces):
        self._spaces = spaces
        self._delta = {-1: max_radius(auxiliary_space(spaces[0]))}

    def delta(self, level: int) -> float:
        if level not in self._delta:
            self._delta[level] = max_radius(self._spaces[level])
        return self._delta[level]


def kj_schedule(level: int, rho, radii_: LevelRadii) -> np.ndarray:
    """K_J = ceil(2 delta^{l-1} / rho_J) + 1.

    Ratios within a few ulps of an integer are snapped to it first, so the
    exact geometric cases do not jump by one through roundoff.
    """
    ratio = 2.0 * radii_.delta(level - 1) / np.asarray(rho, dtype=float)
    near = np.round(ratio)
    ratio = np.where(np.abs(ratio - near) <= 1e-12 * np.maximum(1.0, near), near, ratio)
    return (np.ceil(ratio) + 1).astype(np.int64)


@dataclass(frozen=True)
class IterationReport:
    M: int
    elements: tuple
    ndof: int
    e_max: float
    e_rms: float
    degree_counts: tuple

    @property
    def elements_str(self) -> str:
        return "x".join(str(n) for n in self.elements)


@dataclass(frozen=True)
class MarkedSet:
    """Sorted flat keys of the marked active functions on each level."""

    keys: tuple

    def __len__(self):
        return int(sum(k.size for k in self.keys))

    def pairs(self, hierarchy: DomainHierarchy):
        for l, keys in enumerate(self.keys):
            multi = hierarchy.space(l).unravel(keys)
            for i in range(keys.size):
                yield l, tuple(int(m[i]) for m in multi)


@dataclass
class FitOutcome:
    status: str
    qi: QuasiInterpolant | None
    reports: list = field(default_factory=list)
    degrees: list | None = None  # per level: chosen local degree, aligned with qi.coeffs
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def hierarchy(self):
        return None if self.qi is None else self.qi.hierarchy


def compute_errors(q: QuasiInterpolant, F: ScatteredDataset):
    """Residuals |Q(X_i) - f_i| with their maximum and root mean square."""
    e = np.abs(q(F.points) - F.values)
    return e, float(e.max()), float(np.sqrt(np.mean(e * e)))


def _closed_support_functions(space: TensorSpace, X) -> np.ndarray:
    """(n, P) flat keys of the functions whose closed support contains each
    point, with -1 for padding."""
    X = np.atleast_2d(X)
    n = X.shape[0]
    per_dir = []
    for k, kv in enumerate(space.kvs):
        t = kv.knots
        d = kv.degree
        x = X[:, k]
        # i with t_i <= x <= t_{i+d+1}
        i_hi = np.minimum(np.searchsorted(t, x, side="right") - 1, kv.num_funcs - 1)
        i_lo = np.maximum(np.searchsorted(t, x, side="left") - (d + 1), 0)
        width = max(int(np.max(i_hi - i_lo)) + 1, 1)
        cand = i_lo[:, None] + np.arange(width)[None, :]
        ok = cand <= i_hi[:, None]
        per_dir.append((np.minimum(cand, kv.num_funcs - 1), ok))
    keys = np.zeros((n, 1), dtype=np.int64)
    ok = np.ones((n, 1), dtype=bool)
    for k, (cand, okk) in enumerate(per_dir):
        stride = int(np.prod(space.shape[k + 1 :]))
        keys = (keys[:, :, None] + cand[:, None, :] * stride).reshape(n, -1)
        ok = (ok[:, :, None] & okk[:, None, :]).reshape(n, -1)
    return np.where(ok, keys, -1)


def mark(q: QuasiInterpolant, F: ScatteredDataset, e, eps: float) -> MarkedSet:
    """Active functions whose closed support holds a point with e_i > eps."""
    h = q.hierarchy
    bad = F.points[np.asarray(e) > eps]
    keys = []
    for l in range(h.M):
        active = q.coeffs[l][0]
        if bad.shape[0] == 0 or active.size == 0:
            keys.append(np.empty(0, dtype=np.int64))
            continue
        cand = np.unique(_closed_support_functions(h.space(l), bad))
        cand = cand[cand >= 0]
        keys.append(cand[_member(active, cand)])
    return MarkedSet(tuple(keys))


def refinement_cells(h: DomainHierarchy, marked: MarkedSet) -> dict:
    """Active cells, per level, lying inside the support of a marked function."""
    out = {}
    region = np.empty(0, dtype=np.int64)
    for l in range(h.M):
        if l > 0 and region.size:
            region = h.children(l - 1, region)
            region = region[_member(h.omega(l), region)]
        if l < len(marked.keys) and marked.keys[l].size:
            region = np.union1d(region, h.support_cells(l, marked.keys[l]))
        if region.size:
            act = h.active_cells(l)
            cells = region[_member(act, region)]
            if cells.size:
                out[l] = cells
    return out


def refine(h: DomainHierarchy, marked: MarkedSet) -> DomainHierarchy:
    """Dyadically split every active cell inside a marked support."""
    cells = refinement_cells(h, marked)
    return h.refine(cells) if cells else h


def _elements(h: DomainHierarchy) -> tuple:
    return tuple(int(n) for n in h.space(h.M - 1).cell_shape)


def _degree_counts(degrees, dmax: int) -> tuple:
    counts = np.zeros(dmax + 1, dtype=np.int64)
    for d in degrees:
        counts += np.bincount(d, minlength=dmax + 1)[: dmax + 1]
    return tuple(int(c) for c in counts)


def _fit_level(h, level, keys, F, cfg, lr, pool):
    """(lambda, degree, ok) for the level functions ``keys``, in key order."""
    space = h.space(level)
    keys = np.asarray(keys, dtype=np.int64)
    if keys.size == 0:
        return np.empty(0), np.empty(0, dtype=np.int64), np.ones(0, dtype=bool)
    multi = np.stack(space.unravel(keys), axis=1)
    Ks = kj_schedule(level, radii(space, keys), lr)
    spans = [(a, min(a + cfg.chunk, keys.size)) for a in range(0, keys.size, cfg.chunk)]

    def work(span):
        a, b = span
        return fit_many(space, multi[a:b], F, cfg.sigma, Ks[a:b], cfg.guard)

    parts = list(pool.map(work, spans)) if pool is not None else [work(s) for s in spans]
    results = [r for part in parts for r in part]
    ok = np.array([r is not None for r in results], dtype=bool)
    lam = np.array([r.lam if r is not None else np.nan for r in results])
    deg = np.array([r.degree if r is not None else -1 for r in results], dtype=np.int64)
    return lam, deg, ok


def _kept_active(h: DomainHierarchy, dom) -> list:
    act = compute_active_sets(h)
    return [trim_basis(h, dom, l, act[l]) for l in range(h.M)]


def fit_adaptive(F: ScatteredDataset, cfg: FitConfig, on_report=None, on_iteration=None) -> FitOutcome:
    """Adaptive THB quasi-interpolant of ``F`` meeting ``max e_i <= cfg.tol``.

    ``on_report`` is called with each ``IterationReport`` as it is produced,
    ``on_iteration`` with the matching quasi-interpolant.
    """
    if F.r != cfg.initial.r:
        raise ValueError("dataset and initial space differ in dimension")
    if not np.all(cfg.initial.contains(F.points)):
        raise ValueError("data points outside the initial grid")
    if cfg.domain is not None and not np.all(cfg.domain.contains(F.points)):
        raise ValueError("data points outside the domain")
    dmax = min(cfg.degrees)
    h = DomainHierarchy(cfg.initial)
    lr = LevelRadii(h.spaces)
    reports: list = []

    def emit(q, degs):
        e, e_max, e_rms = compute_errors(q, F)
        rep = IterationReport(h.M, _elements(h), q.ndof, e_max, e_rms, _degree_counts(degs, dmax))
        reports.append(rep)
        if on_report is not None:
            on_report(rep)
        if on_iteration is not None:
            on_iteration(q)
        return e, e_max

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        keys0 = _kept_active(h, cfg.domain)[0]
        lam, deg, ok = _fit_level(h, 0, keys0, F, cfg, lr, pool)
        if not ok.all():
            bad = np.stack(h.space(0).unravel(keys0[~ok]), axis=1)
            return FitOutcome(
                FAILURE_INITIAL_LAMBDA,
                None,
                reports,
                message=f"{int((~ok).sum())} level-0 coefficients found no data, first {tuple(bad[0])}",
            )
        coeffs = [(keys0, lam)]
        degs = [deg]
        q = QuasiInterpolant(h, coeffs)
        e, e_max = emit(q, degs)
        while e_max > cfg.tol:
            marked = mark(q, F, e, cfg.tol)
            h_new = refine(h, marked)
            if h_new.M > cfg.max_levels:
                return FitOutcome(
                    FAILURE_MAX_LEVELS, q, reports, degs,
                    message=f"tolerance not met within {cfg.max_levels} levels",
                )
            kept = _kept_active(h_new, cfg.domain)
            new_coeffs, new_degs = [], []
            failed = 0
            for l in range(h_new.M):
                keys = kept[l]
                lam_l = np.empty(keys.size)
                deg_l = np.empty(keys.size, dtype=np.int64)
                if l < len(coeffs):
                    old_k, old_v = coeffs[l]
                    old_d = degs[l]
                    same = _member(old_k, keys)
                    pos = np.searchsorted(old_k, keys[same])
                    lam_l[same] = old_v[pos]
                    deg_l[same] = old_d[pos]
                else:
                    same = np.zeros(keys.size, dtype=bool)
                lam_n, deg_n, ok = _fit_level(h_new, l, keys[~same], F, cfg, lr, pool)
                failed += int((~ok).sum())
                lam_l[~same] = lam_n
                deg_l[~same] = deg_n
                new_coeffs.append((keys, lam_l))
                new_degs.append(deg_l)
            if failed:
                return FitOutcome(
                    FAILURE_LAMBDA, q, reports, degs,
                    message=f"{failed} new coefficients found no data",
                )
            h, coeffs, degs = h_new, new_coeffs, new_degs
            q = QuasiInterpolant(h, coeffs)
            e, e_max = emit(q, degs)
        return FitOutcome(CONVERGED, q, reports, degs)
    finally:
        if pool is not None:
            pool.shutdown()


def support_contains(space: TensorSpace, keys, X) -> np.ndarray:
    """(n_keys, n_points) closed-support membership, for checks and tests."""
    lo, hi = space.support_boxes(space.unravel(np.asarray(keys, dtype=np.int64)))
    X = np.atleast_2d(X)
    return np.all((X[None] >= lo[:, None]) & (X[None] <= hi[:, None]), axis=2)


__all__ = [
    "CONVERGED",
    "FAILURE_INITIAL_LAMBDA",
    "FAILURE_LAMBDA",
    "FAILURE_MAX_LEVELS",
    "FitConfig",
    "FitOutcome",
    "IterationReport",
    "LevelRadii",
    "MarkedSet",
    "auxiliary_space",
    "compute_errors",
    "fit_adaptive",
    "kj_schedule",
    "mark",
    "max_radius",
    "radii",
    "refine",
]
