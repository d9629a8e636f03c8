"""Compiled and pure-Python coordinate descent must agree."""

import numpy as np
import pytest

from hetsvm import lasso, svm, tuning

from conftest import interaction_design

pytestmark = pytest.mark.skipif(
    len(lasso.available_backends()) < 2,
    reason="compiled extension not built; nothing to compare",
)


def test_both_backends_advertised():
    assert lasso.available_backends() == ["compiled", "python"]
    assert lasso.DEFAULT_BACKEND == "compiled"


@pytest.mark.parametrize("seed", range(6))
def test_lasso_solutions_agree(seed):
    rng = np.random.default_rng(seed)
    n, p = 50, 8
    X = rng.standard_normal((n, p)) * rng.uniform(0.3, 3.0, p)
    y = X @ (rng.uniform(-1, 1, p) * (rng.random(p) < 0.6)) + 0.2 * rng.standard_normal(n)
    prob = lasso.LassoProblem(
        X=X,
        y=y,
        weights=rng.uniform(0.2, 2.0, n),
        penalty=rng.uniform(0.1, 2.0, p),
        loss_scale=rng.uniform(0.05, 1.0),
    )
    a = lasso.solve(prob, backend="compiled")
    b = lasso.solve(prob, backend="python")
    np.testing.assert_allclose(a.coef, b.coef, atol=1e-8)
    assert abs(a.objective - b.objective) < 1e-10
    assert a.backend == "compiled" and b.backend == "python"


def test_svm_fits_agree():
    d = interaction_design(n=150, seed=31)
    pen = svm.PenaltyPair(0.05, 0.08)
    a = svm.fit(d, pen, backend="compiled")
    b = svm.fit(d, pen, backend="python")
    np.testing.assert_allclose(a.effect_coefs, b.effect_coefs, atol=1e-8)
    np.testing.assert_allclose(a.adjust_coefs, b.adjust_coefs, atol=1e-8)
    assert abs(a.intercept - b.intercept) < 1e-8


def test_tuning_selects_same_penalties():
    d = interaction_design(n=100, seed=37)
    a = tuning.search(d, backend="compiled")
    b = tuning.search(d, backend="python")
    assert a.best.lam_effect == pytest.approx(b.best.lam_effect, rel=1e-9)
    assert a.best.lam_adjust == pytest.approx(b.best.lam_adjust, rel=1e-9)
    assert a.best.gcv == pytest.approx(b.best.gcv, rel=1e-9)
