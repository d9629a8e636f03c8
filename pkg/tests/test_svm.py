"""Squared-hinge SVM fitting: closed forms, invariances, serialization."""

import math

import numpy as np
import pytest

from hetsvm import design as dz
from hetsvm import effects, svm
from hetsvm.design import CausalDesign, ColumnMeta
from hetsvm.errors import DataError, DegenerateFitError

from conftest import interaction_design


def _single_treatment_design(y01_t, y01_c, w_t=None, w_c=None):
    """Design with one binary treatment and no adjustment covariates."""
    y01 = np.concatenate([y01_t, y01_c]).astype(np.float64)
    treated = np.concatenate([np.ones(len(y01_t)), np.zeros(len(y01_c))])
    n = y01.shape[0]
    Z, schema, effect_cols = dz.build_interactions(
        treated, np.empty((n, 0)), [], treatment_name="t"
    )
    w = np.ones(n)
    if w_t is not None:
        w = np.concatenate([w_t, w_c]).astype(np.float64)
    return CausalDesign(
        y=2.0 * y01 - 1.0,
        X_effect=Z,
        X_adjust=np.empty((n, 0)),
        weights=w,
        effect_cols=effect_cols,
        adjust_cols=[],
        schema=schema,
    )


def test_near_zero_penalty_recovers_difference_in_means():
    # 7/10 treated successes vs 4/10 control successes
    d = _single_treatment_design([1] * 7 + [0] * 3, [1] * 4 + [0] * 6)
    f = svm.fit(d, svm.PenaltyPair(1e-8, 1e-8))
    eff = effects.estimate(f, d)
    assert abs(eff.ate - 0.30) < 1e-6
    np.testing.assert_allclose(eff.cate, 0.30, atol=1e-6)


def test_unpenalized_arm_margins_are_rescaled_arm_means():
    d = _single_treatment_design([1] * 7 + [0] * 3, [1] * 4 + [0] * 6)
    f = svm.fit(d, svm.PenaltyPair(1e-8, 1e-8))
    # squared hinge is minimized by the weighted mean of +-1 labels per arm
    assert abs(f.intercept - (-0.2)) < 1e-6
    assert abs(f.intercept + f.effect_coefs[0] - 0.4) < 1e-6


def test_hinge_objective_identity():
    rng = np.random.default_rng(0)
    y = np.where(rng.random(40) < 0.5, 1.0, -1.0)
    W = rng.standard_normal(40)
    w = rng.uniform(0.5, 2.0, 40)
    manual = float(sum(wi * max(0.0, 1.0 - yi * Wi) ** 2 for yi, Wi, wi in zip(y, W, w)))
    assert abs(svm.hinge_objective(y, W, w) - manual) < 1e-10
    assert abs(svm.hinge_objective(y, W, w, 1.5) - (manual + 1.5)) < 1e-10


def test_huge_penalty_gives_intercept_only_fit(small_design):
    lam = math.exp(10.0)
    f = svm.fit(small_design, svm.PenaltyPair(lam, lam))
    np.testing.assert_array_equal(f.effect_coefs, 0.0)
    np.testing.assert_array_equal(f.adjust_coefs, 0.0)
    want = float(small_design.weights @ small_design.y) / float(small_design.weights.sum())
    assert abs(f.intercept - want) < 1e-12
    assert f.n_nonzero == 0


def test_coefficients_relate_to_scaled_by_penalty(small_design):
    pen = svm.PenaltyPair(0.31, 2.7)
    f = svm.fit(small_design, pen)
    np.testing.assert_allclose(
        f.effect_coefs * pen.lam_effect, f.effect_coefs_scaled, rtol=1e-12, atol=1e-300
    )
    np.testing.assert_allclose(
        f.adjust_coefs * pen.lam_adjust, f.adjust_coefs_scaled, rtol=1e-12, atol=1e-300
    )


def test_uniform_weight_scaling_is_a_no_op():
    base = interaction_design(n=90, seed=4)
    scaled = interaction_design(n=90, seed=4)
    scaled.weights = base.weights * 7.0  # mean-loss objective ignores the scale
    pen = svm.PenaltyPair(0.05, 0.05)
    a = svm.fit(base, pen)
    b = svm.fit(scaled, pen)
    np.testing.assert_allclose(a.effect_coefs, b.effect_coefs, atol=1e-9)
    np.testing.assert_allclose(a.intercept, b.intercept, atol=1e-9)


def test_duplicated_row_equals_doubled_weight():
    base = interaction_design(n=60, seed=5)
    dup = CausalDesign(
        y=np.concatenate([base.y, base.y[:1]]),
        X_effect=np.vstack([base.X_effect, base.X_effect[:1]]),
        X_adjust=np.vstack([base.X_adjust, base.X_adjust[:1]]),
        weights=np.concatenate([base.weights, [1.0]]),
        effect_cols=base.effect_cols,
        adjust_cols=base.adjust_cols,
        schema=base.schema,
    )
    weighted = interaction_design(n=60, seed=5)
    weighted.weights = base.weights.copy()
    weighted.weights[0] = 2.0
    pen = svm.PenaltyPair(0.08, 0.08)
    a = svm.fit(dup, pen)
    b = svm.fit(weighted, pen)
    np.testing.assert_allclose(a.effect_coefs, b.effect_coefs, atol=1e-8)
    np.testing.assert_allclose(a.adjust_coefs, b.adjust_coefs, atol=1e-8)
    np.testing.assert_allclose(a.intercept, b.intercept, atol=1e-8)


def test_fit_is_a_fixed_point(small_design):
    """Re-fitting from the solution must not move the coefficients."""
    pen = svm.PenaltyPair(0.05, 0.1)
    f = svm.fit(small_design, pen)
    again = svm.fit(small_design, pen, init=f)
    np.testing.assert_allclose(again.effect_coefs, f.effect_coefs, atol=1e-10)
    np.testing.assert_allclose(again.adjust_coefs, f.adjust_coefs, atol=1e-10)
    # the intercept re-centers off the inner solve, so it moves at the
    # solver tolerance rather than the outer fixed-point tolerance
    assert abs(again.intercept - f.intercept) < 1e-8
    assert again.iterations <= 2


def test_solution_satisfies_active_set_stationarity():
    """The scaled coefficients solve the centered LASSO of the final active
    set, verified through the solver's own KKT checker."""
    from hetsvm import lasso

    d = interaction_design(n=200, seed=8)
    pen = svm.PenaltyPair(0.03, 0.06)
    f = svm.fit(d, pen)
    assert f.converged

    X = d.stacked()
    scale = np.concatenate(
        [np.full(d.n_effect, 1.0 / pen.lam_effect), np.full(d.n_adjust, 1.0 / pen.lam_adjust)]
    )
    Xs = X * scale
    b = np.concatenate([f.effect_coefs_scaled, f.adjust_coefs_scaled])
    W = f.intercept + Xs @ b
    mask = (d.y * W) <= 1.0
    wa = d.weights[mask]
    aw = wa.sum()
    xm = (wa @ Xs[mask]) / aw
    ym = float(wa @ d.y[mask]) / aw
    prob = lasso.LassoProblem(
        X=Xs[mask] - xm, y=d.y[mask] - ym, weights=wa, penalty=np.ones(X.shape[1]),
        loss_scale=1.0 / aw,
    )
    assert lasso.kkt_violation(prob, b) <= 2e-7
    # the intercept recenters the active set exactly
    assert abs(f.intercept - (ym - float(xm @ b))) < 1e-10


def test_margins_and_active_set_fields(small_design):
    f = svm.fit(small_design, svm.PenaltyPair(0.1, 0.1))
    X = small_design.stacked()
    coefs = np.concatenate([f.effect_coefs, f.adjust_coefs])
    np.testing.assert_allclose(f.margins, f.intercept + X @ coefs, atol=1e-10)
    np.testing.assert_array_equal(f.active, (small_design.y * f.margins) <= 1.0)


def test_empty_active_set_raises():
    d = _single_treatment_design([1] * 5, [0] * 5)
    perfect = svm.fit(d, svm.PenaltyPair(1e-8, 1e-8))
    # push the separating coefficients far beyond the margin and re-fit
    perfect.effect_coefs = perfect.effect_coefs * 50.0
    perfect.adjust_coefs = perfect.adjust_coefs * 50.0
    perfect.intercept = perfect.intercept * 50.0
    with pytest.raises(DegenerateFitError):
        svm.fit(d, svm.PenaltyPair(1e-8, 1e-8), init=perfect)


def test_zero_margin_classifies_positive():
    f = svm.SvmFit(
        intercept=0.0,
        effect_coefs=np.array([1.0]),
        adjust_coefs=np.zeros(0),
        effect_coefs_scaled=np.array([1.0]),
        adjust_coefs_scaled=np.zeros(0),
        penalties=svm.PenaltyPair(1.0, 1.0),
        objective=0.0,
        converged=True,
        oscillated=False,
        iterations=0,
        lasso_passes=0,
    )
    labels = svm.classify(f, np.array([[0.0], [1.0], [-1.0]]), np.empty((3, 0)))
    np.testing.assert_array_equal(labels, [1.0, 1.0, -1.0])


def test_penalties_must_be_positive():
    with pytest.raises(ValueError):
        svm.PenaltyPair(0.0, 1.0)
    with pytest.raises(ValueError):
        svm.PenaltyPair(1.0, -2.0)


def test_warm_start_shape_mismatch_rejected(small_design, arm_design):
    f = svm.fit(small_design, svm.PenaltyPair(0.1, 0.1))
    with pytest.raises(DataError):
        svm.fit(arm_design, svm.PenaltyPair(0.1, 0.1), init=f)


# ---------------------------------------------------------------------------
# serialization


def test_serialization_round_trip(small_design):
    f = svm.fit(small_design, svm.PenaltyPair(0.07, 0.21))
    text = svm.fit_to_json(f, small_design, extra={"note": 1})
    restored, effect_cols, adjust_cols, schema_info = svm.fit_from_json(text)
    np.testing.assert_array_equal(restored.effect_coefs, f.effect_coefs)
    np.testing.assert_array_equal(restored.adjust_coefs, f.adjust_coefs)
    assert restored.intercept == f.intercept
    assert restored.penalties == f.penalties
    assert [m.name for m in effect_cols] == [m.name for m in small_design.effect_cols]
    assert [m.name for m in adjust_cols] == [m.name for m in small_design.adjust_cols]
    assert schema_info["type"] == "interactions"

    rng = np.random.default_rng(2)
    Xe = rng.standard_normal((5, small_design.n_effect))
    Xa = rng.standard_normal((5, small_design.n_adjust))
    np.testing.assert_array_equal(
        svm.predict_margin(restored, Xe, Xa), svm.predict_margin(f, Xe, Xa)
    )


def test_serialization_is_deterministic(small_design):
    f = svm.fit(small_design, svm.PenaltyPair(0.07, 0.21))
    assert svm.fit_to_json(f, small_design) == svm.fit_to_json(f, small_design)


def test_wrong_format_version_rejected(small_design):
    import json

    f = svm.fit(small_design, svm.PenaltyPair(0.1, 0.1))
    doc = json.loads(svm.fit_to_json(f, small_design))
    doc["format_version"] = "bogus-format-99"
    with pytest.raises(DataError):
        svm.deserialize_fit(doc)
