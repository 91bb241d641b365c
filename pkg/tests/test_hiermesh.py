import itertools

import numpy as np
import pytest

import oracles as O
from helpers import quadrant_hierarchy, random_hierarchy
from thbfit.hiermesh import (
    DomainHierarchy,
    QuasiInterpolant,
    build_truncated,
    compute_active_sets,
    eval_qi,
    represent_in_thb,
    truncate_once,
)
from thbfit.splinecore import LocalPoly, TensorSpace, poly_to_coeffs


def _multis(space, keys):
    return sorted(tuple(int(v) for v in J) for J in zip(*space.unravel(keys)))


def _all_truncated(h):
    act = compute_active_sets(h)
    out = []
    for l in range(h.M):
        for J in _multis(h.space(l), act[l]):
            out.append(build_truncated(h, l, J))
    return out


def test_single_level_active_everything():
    sp = TensorSpace.uniform([0, 0], [3, 3], [3, 3], (2, 2))
    h = DomainHierarchy(sp)
    assert h.M == 1
    assert compute_active_sets(h)[0].size == sp.num_funcs
    h2 = DomainHierarchy(sp, [None, []])
    assert h2.M == 1 and compute_active_sets(h2).ndof == sp.num_funcs


def test_quadrant_active_sets_match_oracle(frozen):
    h = quadrant_hierarchy()
    act = compute_active_sets(h)
    for l in range(2):
        got = _multis(h.space(l), act[l])
        assert got == sorted(tuple(J) for J in frozen["quadrant_active"][str(l)])
    assert act.ndof == 112


def test_truncate_once_cases(frozen):
    h = quadrant_hierarchy()
    fine = h.space(1)
    out = truncate_once(np.ones(fine.shape), h, 0)
    zeroed = sorted(tuple(int(v) for v in J) for J in np.argwhere(out == 0))
    assert zeroed == sorted(tuple(J) for J in frozen["quadrant_truncate_zeroed"])
    # nothing refined: identity / everything refined: zero
    sp = h.space(0)
    h_full = DomainHierarchy(sp).refine({0: np.arange(sp.num_cells)})
    np.testing.assert_array_equal(truncate_once(np.ones(fine.shape), h_full, 0), 0.0)
    with pytest.raises(ValueError):
        truncate_once(np.ones(fine.shape), DomainHierarchy(sp), 0)


def test_truncated_matches_oracle(frozen):
    case = frozen["quadrant_truncated"]
    h = quadrant_hierarchy()
    tf = build_truncated(h, 0, tuple(case["J"]))
    np.testing.assert_allclose(tf(np.array(case["X"])), case["values"], atol=1e-12)


def test_truncated_untouched_equals_mother(rng):
    h = quadrant_hierarchy()
    X = rng.uniform(0, 8, (100, 2))
    J = (7, 7)
    tf = build_truncated(h, 0, J)
    np.testing.assert_allclose(tf(X), h.space(0).eval_tensor(J, X), atol=1e-12)
    # finest level functions are their own truncation
    act = compute_active_sets(h)
    J1 = _multis(h.space(1), act[1])[0]
    np.testing.assert_allclose(build_truncated(h, 1, J1)(X), h.space(1).eval_tensor(J1, X), atol=1e-12)


def test_build_truncated_rejects_inactive():
    h = quadrant_hierarchy()
    with pytest.raises(ValueError, match="not active"):
        build_truncated(h, 0, (0, 0))


def test_truncated_against_oracle_random(rng):
    h = random_hierarchy(rng, levels=3, cells=(4, 4), picks=2)
    geo = O.geo_from_hierarchy(h)
    X = rng.uniform(0, 1, (60, 2))
    act = compute_active_sets(h)
    for l in range(h.M):
        for J in _multis(h.space(l), act[l])[:6]:
            np.testing.assert_allclose(build_truncated(h, l, J)(X), geo.eval_truncated(l, J, X), atol=1e-12)


def test_active_sets_against_geometric_oracle(rng):
    for _ in range(3):
        h = random_hierarchy(rng, levels=3, cells=(4, 5), picks=2, nonuniform=True)
        geo = O.geo_from_hierarchy(h)
        act = compute_active_sets(h)
        for l in range(h.M):
            assert _multis(h.space(l), act[l]) == sorted(geo.active(l))


@pytest.mark.parametrize("degrees", [(2, 2), (3, 3), (1, 2)])
def test_convex_partition_of_unity(rng, degrees):
    h = random_hierarchy(rng, degrees=degrees, levels=3, cells=(5, 5))
    X = rng.uniform(0, 1, (300, 2))
    tfs = _all_truncated(h)
    vals = np.array([t(X) for t in tfs])
    assert vals.min() >= -1e-12 and vals.max() <= 1 + 1e-12
    np.testing.assert_allclose(vals.sum(axis=0), 1.0, atol=1e-10)


def test_truncation_support_shrinkage(rng):
    h = random_hierarchy(rng, levels=3, cells=(5, 5))
    X = rng.uniform(0, 1, (500, 2))
    act = compute_active_sets(h)
    for J in _multis(h.space(0), act[0])[::5]:
        lo, hi = h.space(0).support_box(J)
        outside = ~np.all((X >= lo) & (X <= hi), axis=1)
        assert np.all(build_truncated(h, 0, J)(X[outside]) == 0.0)


def test_active_cells_tile_domain(rng):
    for nonuniform in (False, True):
        h = random_hierarchy(rng, levels=4, cells=(5, 4), nonuniform=nonuniform)
        assert h.mesh().volume() == pytest.approx(1.0, abs=1e-12)


def test_qi_constant_and_zero(rng):
    h = random_hierarchy(rng, levels=3)
    act = compute_active_sets(h)
    X = rng.uniform(0, 1, (500, 2))
    ones = QuasiInterpolant(h, [(k, np.ones(k.size)) for k in act.keys])
    np.testing.assert_allclose(eval_qi(ones, X), 1.0, atol=1e-10)
    zero = QuasiInterpolant(h, [(k, np.zeros(k.size)) for k in act.keys])
    np.testing.assert_array_equal(eval_qi(zero, X), 0.0)


def test_qi_matches_exhaustive_sum(rng):
    h = random_hierarchy(rng, levels=3, cells=(4, 4))
    act = compute_active_sets(h)
    coeffs = [(k, rng.normal(size=k.size)) for k in act.keys]
    q = QuasiInterpolant(h, coeffs)
    X = rng.uniform(0, 1, (200, 2))
    total = np.zeros(len(X))
    for l, (keys, vals) in enumerate(coeffs):
        for J, v in zip(_multis(h.space(l), keys), vals[np.argsort(keys)]):
            total += v * build_truncated(h, l, J)(X)
    np.testing.assert_allclose(q(X), total, atol=1e-12)


def test_qi_single_level_polynomial(rng):
    sp = TensorSpace.uniform([0, 0], [4, 3], [4, 3], (2, 2))
    h = DomainHierarchy(sp)
    p = LocalPoly(2, rng.normal(size=6), sp.lo, sp.hi)
    block = poly_to_coeffs(sp, p)
    q = QuasiInterpolant.from_dict(h, {(0, J): block[J] for J in np.ndindex(*sp.shape)})
    X = rng.uniform(sp.lo, sp.hi, (400, 2))
    np.testing.assert_allclose(q(X), p(X), atol=1e-10)


def test_qi_rejects_outside_and_inactive(rng):
    h = quadrant_hierarchy()
    act = compute_active_sets(h)
    q = QuasiInterpolant(h, [(k, np.ones(k.size)) for k in act.keys])
    with pytest.raises(ValueError, match="outside"):
        q(np.array([[9.0, 1.0]]))
    with pytest.raises(ValueError, match="inactive"):
        QuasiInterpolant(h, [(np.array([0]), np.ones(1))])


def test_represent_in_thb(rng):
    for _ in range(3):
        h = random_hierarchy(rng, levels=3, cells=(5, 5))
        base = h.space(0)
        s = rng.normal(size=base.shape)
        q = represent_in_thb(s, h)
        X = rng.uniform(0, 1, (2000, 2))
        assert np.abs(q(X) - base.evaluate(s, X)).max() <= 1e-10 * np.abs(s).max()
    one = represent_in_thb(np.ones(base.shape), h)
    for _, v in one.coeffs:
        np.testing.assert_allclose(v, 1.0, atol=1e-14)
    single = DomainHierarchy(base)
    np.testing.assert_array_equal(represent_in_thb(s, single).coeffs[0][1], s.ravel())


def test_hierarchy_validation():
    sp = TensorSpace.uniform([0, 0], [4, 4], [4, 4], (1, 1))
    with pytest.raises(ValueError, match="incomplete"):
        DomainHierarchy(sp, [None, [(0, 0)]])
    with pytest.raises(ValueError, match="nested"):
        h = DomainHierarchy(sp).refine({0: [0]})
        DomainHierarchy(h.spaces, [None, h.omega(1), h.children(1, h.omega(1))[:4] + 40])


def test_concurrent_truncation_is_consistent(rng):
    from concurrent.futures import ThreadPoolExecutor

    h = random_hierarchy(rng, levels=3)
    act = compute_active_sets(h)
    pairs = [(l, J) for l in range(h.M) for J in _multis(h.space(l), act[l])]
    X = rng.uniform(0, 1, (50, 2))
    with ThreadPoolExecutor(4) as pool:
        vals = list(pool.map(lambda p: build_truncated(h, *p)(X), pairs))
    ref = [build_truncated(h, *p)(X) for p in pairs]
    for a, b in zip(vals, ref):
        np.testing.assert_array_equal(a, b)
