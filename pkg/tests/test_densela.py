import numpy as np
import pytest

import oracles as O
from thbfit.densela import RankDeficientError, lstsq, min_singular_value


def test_msv_examples():
    assert min_singular_value(np.ones((4, 1))) == pytest.approx(2.0, rel=1e-14)
    assert min_singular_value(np.eye(3)) == pytest.approx(1.0, rel=1e-14)


def test_msv_frozen_oracle(frozen):
    for case in frozen["msv_random_8x6"]:
        assert min_singular_value(np.array(case["A"])) == pytest.approx(case["msv"], rel=1e-8)


def test_msv_rank_deficient_and_wide():
    A = np.ones((5, 3))
    assert min_singular_value(A) < 1e-12
    assert min_singular_value(np.ones((2, 3))) == 0.0


def test_msv_rejects_non_finite():
    with pytest.raises(ValueError):
        min_singular_value(np.array([[1.0, np.inf]]))
    with pytest.raises(ValueError):
        min_singular_value(np.zeros((0, 2)))


def test_msv_scaling_and_column_bound(rng):
    for _ in range(20):
        A = rng.normal(size=(int(rng.integers(3, 10)), int(rng.integers(1, 4))))
        c = rng.normal() * 10
        assert min_singular_value(c * A) == pytest.approx(abs(c) * min_singular_value(A), rel=1e-10)
        assert min_singular_value(A) <= np.linalg.norm(A, axis=0).min() * (1 + 1e-12)


def test_lstsq_square_and_consistent(rng):
    A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    b = rng.normal(size=4)
    np.testing.assert_allclose(A @ lstsq(A, b), b, atol=1e-10)
    A = rng.normal(size=(9, 3))
    x0 = rng.normal(size=3)
    np.testing.assert_allclose(lstsq(A, A @ x0), x0, atol=1e-8)


def test_lstsq_normal_equation_oracle(frozen):
    case = frozen["normal_5x2"]
    np.testing.assert_allclose(lstsq(np.array(case["A"]), np.array(case["b"])), case["x"], atol=1e-10)


def test_lstsq_residual_orthogonal(rng):
    for _ in range(20):
        A = rng.normal(size=(12, 5))
        b = rng.normal(size=12)
        r = A @ lstsq(A, b) - b
        assert np.linalg.norm(A.T @ r) <= 1e-8 * np.linalg.norm(A) * np.linalg.norm(b)


def test_lstsq_errors():
    with pytest.raises(ValueError, match="underdetermined"):
        lstsq(np.ones((2, 3)), np.ones(2))
    with pytest.raises(RankDeficientError):
        lstsq(np.ones((4, 2)), np.ones(4))
    with pytest.raises(ValueError):
        lstsq(np.ones((3, 2)), np.ones(4))
