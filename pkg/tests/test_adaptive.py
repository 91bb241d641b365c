import math

import numpy as np
import pytest

import oracles as O
from helpers import random_hierarchy
from thbfit import adaptive as A
from thbfit.datasets import peak
from thbfit.domain import Box, DomainSpec
from thbfit.hiermesh import DomainHierarchy, QuasiInterpolant, build_truncated, compute_active_sets
from thbfit.localfit import ScatteredDataset
from thbfit.splinecore import LocalPoly, TensorSpace


class _Radii:
    def __init__(self, d):
        self.d = d

    def delta(self, level):
        return self.d


def test_kj_schedule_examples(frozen):
    r = _Radii(1.7)
    assert A.kj_schedule(1, 1.7, r) == 3
    assert A.kj_schedule(1, 3.4, r) == 2
    sp = TensorSpace.uniform([0, 0], [8, 8], [8, 8], (2, 2))
    lr = A.LevelRadii(DomainHierarchy(sp).spaces)
    case = frozen["kj_uniform"]
    assert lr.delta(-1) == pytest.approx(case["delta_m1"])
    rho = A.radii(sp, sp.ravel(np.array([[4], [4]])))
    assert rho[0] == pytest.approx(case["rho"])
    assert A.kj_schedule(0, rho, lr)[0] == case["K"] == 5


def test_kj_at_least_two(rng):
    sp = TensorSpace.from_breaks([np.sort(np.r_[0, 1, rng.uniform(0, 1, 9)])] * 2, (2, 2))
    h = DomainHierarchy(sp)
    lr = A.LevelRadii(h.spaces)
    for l in range(3):
        s = h.space(l)
        assert np.all(A.kj_schedule(l, A.radii(s, np.arange(s.num_funcs)), lr) >= 2)


def test_auxiliary_mesh():
    sp = TensorSpace.from_breaks([np.arange(6.0), np.arange(5.0)], (2, 2))
    aux = A.auxiliary_space(sp)
    # 5 cells merge to [0, 2, 5]; 2 cells < d+1 forces a uniform split into d+1
    assert aux.kvs[0].num_cells == 3 and aux.kvs[0].breaks.tolist() == [0, 5 / 3, 10 / 3, 5]
    assert aux.kvs[1].breaks.tolist() == [0, 4 / 3, 8 / 3, 4]
    lin = A.auxiliary_space(TensorSpace.from_breaks([np.arange(6.0)] * 2, (1, 1)))
    assert lin.kvs[0].breaks.tolist() == [0, 2, 5]  # odd count: last cell merged
    sp = TensorSpace.uniform([0, 0], [1, 1], [15, 15], (2, 2))
    aux = A.auxiliary_space(sp)
    assert aux.cell_shape == (7, 7)
    assert np.diff(aux.kvs[0].breaks)[-1] == pytest.approx(3 / 15)


def test_delta_non_increasing():
    sp = TensorSpace.from_breaks([[0, 0.1, 0.5, 0.6, 1], [0, 0.3, 1]], (1, 1))
    lr = A.LevelRadii(DomainHierarchy(sp).spaces)
    d = [lr.delta(l) for l in range(-1, 5)]
    assert all(a >= b for a, b in zip(d, d[1:]))


def _qi(h, vals):
    act = compute_active_sets(h)
    return QuasiInterpolant(h, [(k, np.full(k.size, vals)) for k in act.keys])


def test_errors_constant_and_zero(rng):
    h = random_hierarchy(rng, levels=3)
    X = rng.uniform(0, 1, (300, 2))
    F = ScatteredDataset(X, np.full(300, 2.0))
    e, e_max, e_rms = A.compute_errors(_qi(h, 2.0), F)
    assert e_max < 1e-12
    F = ScatteredDataset(X, rng.normal(size=300))
    e, e_max, e_rms = A.compute_errors(_qi(h, 0.0), F)
    np.testing.assert_array_equal(e, np.abs(F.values))
    assert e_rms <= e_max


def test_errors_exhaustive_summation(rng):
    h = random_hierarchy(rng, levels=3, cells=(4, 4))
    act = compute_active_sets(h)
    coeffs = [(k, rng.normal(size=k.size)) for k in act.keys]
    q = QuasiInterpolant(h, coeffs)
    X = rng.uniform(0, 1, (500, 2))
    F = ScatteredDataset(X, rng.normal(size=500))
    e, _, _ = A.compute_errors(q, F)
    # sum every active truncated function explicitly
    total = np.zeros(500)
    for l, (keys, vals) in enumerate(coeffs):
        multi = h.space(l).unravel(keys)
        for i in range(keys.size):
            total += vals[i] * build_truncated(h, l, (multi[0][i], multi[1][i]))(X)
    np.testing.assert_allclose(e, np.abs(total - F.values), atol=1e-12)
    # and on a few points against the dense knot-insertion pipeline
    geo = O.geo_from_hierarchy(h)
    sub = X[:25]
    ref = np.zeros(25)
    for l, (keys, vals) in enumerate(coeffs):
        multi = h.space(l).unravel(keys)
        for i in range(keys.size):
            ref += vals[i] * geo.eval_truncated(l, (multi[0][i], multi[1][i]), sub)
    np.testing.assert_allclose(e[:25], np.abs(ref - F.values[:25]), atol=1e-12)


def _single_level():
    sp = TensorSpace.uniform([0, 0], [8, 8], [8, 8], (2, 2))
    return DomainHierarchy(sp)


def test_mark_examples(frozen):
    h = _single_level()
    q = _qi(h, 0.0)
    for name, case in frozen["mark_single_level"].items():
        F = ScatteredDataset(np.array([case["point"], [7.5, 7.5]]), [1.0, 0.0])
        m = A.mark(q, F, np.array([1.0, 0.0]), 0.5)
        got = sorted(J for _, J in m.pairs(h))
        assert got == sorted(tuple(J) for J in case["marked"]), name
    assert len(frozen["mark_single_level"]["interior"]["marked"]) == 9
    F = ScatteredDataset(np.array([[1.0, 1.0]]), [0.0])
    assert len(A.mark(q, F, np.array([0.1]), 0.5)) == 0


def test_mark_only_active(rng):
    h = random_hierarchy(rng, levels=3, cells=(6, 6))
    q = _qi(h, 0.0)
    X = rng.uniform(0, 1, (40, 2))
    m = A.mark(q, ScatteredDataset(X, np.ones(40)), np.ones(40), 0.5)
    act = compute_active_sets(h)
    for l, keys in enumerate(m.keys):
        assert np.all(np.isin(keys, act[l]))
        box = A.support_contains(h.space(l), keys, X)
        assert np.all(box.any(axis=1))
        # every active function holding a point is marked
        hold = act[l][A.support_contains(h.space(l), act[l], X).any(axis=1)]
        np.testing.assert_array_equal(np.sort(hold), keys)


def test_refine_examples():
    h = _single_level()
    assert A.refine(h, A.MarkedSet((np.empty(0, np.int64),))) == h
    key = h.space(0).ravel(np.array([[4], [4]]))
    h2 = A.refine(h, A.MarkedSet((key,)))
    assert h2.M == 2
    assert h2.active_cells(0).size == 64 - 9 and h2.active_cells(1).size == 36


def test_refine_reaches_deeper_active_cells(rng):
    h = random_hierarchy(rng, levels=3, cells=(5, 5), picks=4)
    act = compute_active_sets(h)
    key = act[0][:1]
    cells = A.refinement_cells(h, A.MarkedSet((key, np.empty(0, np.int64), np.empty(0, np.int64))))
    lo, hi = h.space(0).support_boxes(h.space(0).unravel(key))
    for l, c in cells.items():
        clo, chi = h.cell_bounds(l, c)
        assert np.all(clo >= lo[0] - 1e-15) and np.all(chi <= hi[0] + 1e-15)
        assert np.all(np.isin(c, h.active_cells(l)))


def test_error_targeting_soundness(rng):
    h = random_hierarchy(rng, levels=2, cells=(6, 6))
    q = _qi(h, 0.0)
    X = rng.uniform(0, 1, (200, 2))
    e = rng.uniform(0, 1, 200)
    m = A.mark(q, ScatteredDataset(X, np.zeros(200)), e, 0.9)
    cells = A.refinement_cells(h, m)
    bad = X[e > 0.9]
    covered = np.zeros(len(bad), dtype=bool)
    for l, c in cells.items():
        lo, hi = h.cell_bounds(l, c)
        covered |= np.any(np.all((bad[:, None] >= lo[None]) & (bad[:, None] <= hi[None]), axis=2), axis=1)
    assert covered.all()


def _cfg(space, **kw):
    kw.setdefault("sigma", 1e-6)
    return A.FitConfig(space, **kw)


def test_fit_constant_data(rng):
    sp = TensorSpace.uniform([0, 0], [1, 1], [6, 6], (2, 2))
    X = rng.uniform(0, 1, (800, 2))
    out = A.fit_adaptive(ScatteredDataset(X, np.full(800, 3.0)), _cfg(sp, tol=1e-9))
    assert out.status == A.CONVERGED and len(out.reports) == 1
    assert out.reports[0].M == 1 and out.reports[0].e_max < 1e-12


def test_fit_polynomial_converges_at_one_level(rng):
    sp = TensorSpace.uniform([0, 0], [1, 1], [5, 5], (2, 2))
    X = rng.uniform(0, 1, (3000, 2))
    p = LocalPoly(2, rng.normal(size=6), np.zeros(2), np.ones(2))
    out = A.fit_adaptive(ScatteredDataset(X, p(X)), _cfg(sp, tol=1e-8))
    assert out.status == A.CONVERGED and out.reports[-1].M == 1
    assert out.reports[-1].degree_counts == (0, 0, sp.num_funcs)


def test_fit_initial_failure():
    sp = TensorSpace.uniform([0, 0], [10, 10], [10, 10], (2, 2))
    X = np.array([[0.1, 0.1], [0.2, 0.3], [0.4, 0.1]])
    out = A.fit_adaptive(ScatteredDataset(X, [1.0, 2, 3]), _cfg(sp, tol=1e-3))
    assert out.status == A.FAILURE_INITIAL_LAMBDA and out.qi is None


def _peak_data(rng, n=3000):
    X = rng.uniform(-1, 1, (n, 2))
    return ScatteredDataset(X, peak(X))


def test_fit_max_levels_best_effort(rng):
    F = _peak_data(rng)
    sp = TensorSpace.uniform([-1, -1], [1, 1], [8, 8], (2, 2))
    out = A.fit_adaptive(F, _cfg(sp, tol=1e-7, max_levels=2))
    assert out.status == A.FAILURE_MAX_LEVELS
    assert out.qi is not None and out.reports[-1].M == 2


def test_fit_invariants(rng):
    F = _peak_data(rng)
    sp = TensorSpace.uniform([-1, -1], [1, 1], [8, 8], (2, 2))
    qs = []
    out = A.fit_adaptive(F, _cfg(sp, tol=2e-2, max_levels=6), on_iteration=qs.append)
    assert out.status == A.CONVERGED and out.reports[-1].e_max <= 2e-2
    nd = [r.ndof for r in out.reports]
    assert nd == sorted(nd)
    for r, q in zip(out.reports, qs):
        assert r.ndof == compute_active_sets(q.hierarchy).ndof
        assert r.e_rms <= r.e_max
        assert sum(r.degree_counts) == r.ndof
    # coefficients of functions that stay active are reused bit-for-bit
    for a, b in zip(qs, qs[1:]):
        for l in range(a.hierarchy.M):
            ka, va = a.coeffs[l]
            kb, vb = b.coeffs[l]
            common, ia, ib = np.intersect1d(ka, kb, return_indices=True)
            assert np.array_equal(va[ia], vb[ib])


def test_fit_deterministic_across_workers(rng):
    F = _peak_data(rng, 2000)
    sp = TensorSpace.uniform([-1, -1], [1, 1], [8, 8], (2, 2))
    runs = [A.fit_adaptive(F, _cfg(sp, tol=2e-2, max_levels=6, workers=w, chunk=17)) for w in (1, 4)]
    assert runs[0].reports == runs[1].reports
    for (ka, va), (kb, vb) in zip(runs[0].qi.coeffs, runs[1].qi.coeffs):
        assert np.array_equal(ka, kb) and np.array_equal(va, vb)


def test_fit_trimmed_domain(rng):
    X = rng.uniform(0, 1, (4000, 2))
    X = X[~((X[:, 0] > 0.5) & (X[:, 1] > 0.5))]
    F = ScatteredDataset(X, np.sin(3 * X[:, 0]) * X[:, 1])
    dom = DomainSpec(Box((0, 0), (1, 1)), (Box((0.5, 0.5), (1, 1)),))
    sp = TensorSpace.uniform([0, 0], [1, 1], [8, 8], (2, 2))
    out = A.fit_adaptive(F, _cfg(sp, tol=1e-3, domain=dom))
    assert out.status == A.CONVERGED
    full = compute_active_sets(out.qi.hierarchy).ndof
    assert out.qi.ndof < full


def test_config_validation():
    sp = TensorSpace.uniform([0, 0], [1, 1], [2, 2], (2, 2))
    with pytest.raises(ValueError, match="degree"):
        A.FitConfig(sp, tol=1.0)
    sp = TensorSpace.uniform([0, 0], [1, 1], [4, 4], (2, 2))
    for kw in ({"tol": 0.0}, {"tol": 1.0, "sigma": 2.0}, {"tol": 1.0, "max_levels": 1}):
        with pytest.raises(ValueError):
            A.FitConfig(sp, **kw)
