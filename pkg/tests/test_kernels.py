import json
import os
import subprocess
import sys

import numpy as np
import pytest

from thbfit import kernels
from thbfit.splinecore import KnotVector, monomial_exponents, refine_knots

pytestmark = pytest.mark.skipif(not hasattr(kernels, "basis_funs_nb"), reason="kernels missing")


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_basis_funs_backends_agree(degree, rng):
    kv = KnotVector.clamped(np.cumsum(rng.uniform(0.2, 1.0, 9)), degree)
    t = rng.uniform(kv.lo, kv.hi, 500)
    spans = np.ascontiguousarray(kv.cell_span[kv.find_cell(t)])
    a = kernels.basis_funs_nb(kv.knots, degree, spans, t)
    b = kernels.basis_funs_np(kv.knots, degree, spans, t)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


@pytest.mark.parametrize("degree", [1, 2, 4])
def test_oslo_backends_agree(degree, rng):
    kv = KnotVector.clamped(np.cumsum(rng.uniform(0.2, 1.0, 7)), degree)
    fine = refine_knots(kv)
    mus = np.searchsorted(kv.knots, fine.knots[: fine.num_funcs], side="right") - 1
    mus = np.minimum(mus, kv.num_funcs - 1).astype(np.int64)
    a = kernels.oslo_weights_nb(kv.knots, fine.knots, degree, mus)
    b = kernels.oslo_weights_np(kv.knots, fine.knots, degree, mus)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_eval_cells_backends_agree(rng):
    degrees = np.array([2, 3], dtype=np.int64)
    vals = rng.uniform(size=(2, 300, 4))
    table = rng.normal(size=(20, 12))
    rows = rng.integers(0, 20, 300)
    a = kernels.eval_cells_nb(vals, degrees, rows, table)
    b = kernels.eval_cells_np(vals, degrees, rows, table)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


def test_power_matrix_backends_agree(rng):
    u = rng.uniform(-1, 2, (200, 2))
    exps = monomial_exponents(2, 5)
    np.testing.assert_allclose(kernels.power_matrix_nb(u, exps), kernels.power_matrix_np(u, exps), rtol=1e-14)


_SCRIPT = """
import json, numpy as np
from thbfit import kernels
from thbfit.datasets import peak_samples
from thbfit.adaptive import FitConfig, fit_adaptive
from thbfit.localfit import ScatteredDataset
from thbfit.splinecore import TensorSpace
X, f = peak_samples(1500, seed=4)
cfg = FitConfig(TensorSpace.uniform([-1, -1], [1, 1], [8, 8], (2, 2)), 5e-2, max_levels=3)
out = fit_adaptive(ScatteredDataset(X, f), cfg)
print(json.dumps({"backend": kernels.BACKEND, "status": out.status,
                  "rows": [[r.M, r.ndof, r.e_max, r.e_rms] for r in out.reports]}))
"""


def _run(flag):
    env = dict(os.environ, THBFIT_USE_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", _SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def test_env_flag_selects_backend_and_results_match():
    a, b = _run("0"), _run("1")
    assert a["backend"] == "numpy" and b["backend"] == "numba"
    assert a["status"] == b["status"]
    ra, rb = np.array(a["rows"]), np.array(b["rows"])
    np.testing.assert_array_equal(ra[:, :2], rb[:, :2])
    np.testing.assert_allclose(ra[:, 2:], rb[:, 2:], rtol=1e-9)
