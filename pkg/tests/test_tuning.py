"""GCV scoring and the alternating penalty search."""

import math

import numpy as np
import pytest

from hetsvm import svm, tuning
from hetsvm.design import CausalDesign, ColumnMeta

from conftest import interaction_design


def _fake_fit(n_nonzero, active, margins_y_prod=None):
    """Hand-built fit whose GCV pieces are known exactly."""
    eff = np.zeros(5)
    eff[:n_nonzero] = 1.0
    return svm.SvmFit(
        intercept=0.0,
        effect_coefs=eff.copy(),
        adjust_coefs=np.zeros(0),
        effect_coefs_scaled=eff.copy(),
        adjust_coefs_scaled=np.zeros(0),
        penalties=svm.PenaltyPair(1.0, 1.0),
        objective=0.0,
        converged=True,
        oscillated=False,
        iterations=1,
        lasso_passes=1,
        margins=margins_y_prod,
        active=np.concatenate([np.ones(active, bool), np.zeros(10 - active, bool)]),
    )


def _tiny_design(y, margins):
    n = len(y)
    return (
        CausalDesign(
            y=np.asarray(y, dtype=np.float64),
            X_effect=np.zeros((n, 5)),
            X_adjust=np.empty((n, 0)),
            weights=np.ones(n),
            effect_cols=[ColumnMeta(name=f"z{k}", kind="indicator") for k in range(5)],
            adjust_cols=[],
        ),
        np.asarray(margins, dtype=np.float64),
    )


def test_gcv_hand_computed_fixture():
    # n=10, two units with slack 0.5 and 1.5, rest fit perfectly; l=2, a=8
    y = [1.0] * 10
    margins = [0.5, -0.5] + [1.2] * 8
    design, W = _tiny_design(y, margins)
    f = _fake_fit(n_nonzero=2, active=8, margins_y_prod=W)
    hinge = 0.5**2 + 1.5**2
    want = hinge / (10 * (1.0 - 2 / 8) ** 2)
    assert abs(tuning.gcv(f, design) - want) < 1e-12


def test_gcv_infinite_when_nonzeros_reach_active_size():
    design, W = _tiny_design([1.0] * 10, [0.0] * 10)
    assert tuning.gcv(_fake_fit(4, 4, W), design) == math.inf
    assert tuning.gcv(_fake_fit(5, 4, W), design) == math.inf
    assert tuning.gcv(_fake_fit(3, 4, W), design) < math.inf


def test_gcv_of_intercept_only_fit_is_mean_slack():
    """With zero coefficients GCV reduces to hinge/n."""
    d = interaction_design(n=80, seed=6)
    lam = math.exp(8.0)
    f = svm.fit(d, svm.PenaltyPair(lam, lam))
    assert f.n_nonzero == 0
    want = svm.hinge_objective(d.y, f.margins, d.weights) / d.n_units
    assert abs(tuning.gcv(f, d) - want) < 1e-12


def test_search_result_not_worse_than_coarse_grid(small_design):
    res = tuning.search(small_design)
    best = res.best
    assert math.isfinite(best.gcv)
    # every coarse grid pair must be no better than the selected pair
    for le in tuning.COARSE_LOG_GRID[::5]:
        for la in tuning.COARSE_LOG_GRID[::5]:
            f = svm.fit(small_design, svm.PenaltyPair(math.exp(le), math.exp(la)))
            assert tuning.gcv(f, small_design) >= best.gcv - 1e-9


def test_search_is_deterministic(small_design):
    a = tuning.search(small_design)
    b = tuning.search(small_design)
    assert a.best.lam_effect == b.best.lam_effect
    assert a.best.lam_adjust == b.best.lam_adjust
    assert a.best.gcv == b.best.gcv


def test_search_ties_resolve_to_larger_penalty():
    """A design with no signal: many penalties give the same all-zero fit,
    and the scan must keep the largest (most regularized) one."""
    rng = np.random.default_rng(3)
    n = 60
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    d = CausalDesign(
        y=y,
        X_effect=rng.standard_normal((n, 2)) * 0.01,
        X_adjust=np.empty((n, 0)),
        weights=np.ones(n),
        effect_cols=[ColumnMeta(name="z1", kind="indicator"), ColumnMeta(name="z2", kind="indicator")],
        adjust_cols=[],
    )
    res = tuning.search(d)
    assert res.best.n_nonzero == 0
    # the largest grid value wins the tie among equal-GCV all-zero fits
    assert math.log(res.best.lam_effect) >= tuning.COARSE_LOG_GRID[-1] - 1e-9


def test_search_trace_records_every_evaluation(small_design):
    res = tuning.search(small_design, keep_trace=True)
    assert res.trace, "expected a non-empty evaluation trace"
    assert res.n_fits == len(res.trace)
    best_seen = min(rec["gcv"] for rec in res.trace)
    assert res.best.gcv <= best_seen + 1e-12


def test_search_respects_custom_grid(small_design):
    res = tuning.search(small_design, log_grid=(0.0,), precision=1.0)
    # only one grid point: the search cannot leave it
    assert abs(math.log(res.best.lam_effect)) < 1e-9
    assert abs(math.log(res.best.lam_adjust)) < 1e-9
    assert res.n_fits == 1


def test_search_grid_order_invariance(small_design):
    fwd = tuning.search(small_design, log_grid=tuple(range(-6, 7, 2)))
    rev = tuning.search(small_design, log_grid=tuple(range(6, -7, -2)))
    assert fwd.best.lam_effect == rev.best.lam_effect
    assert fwd.best.lam_adjust == rev.best.lam_adjust


def test_refinement_improves_or_matches_coarse(small_design):
    coarse = tuning.search(small_design, precision=1.0)
    fine = tuning.search(small_design, precision=1e-4)
    assert fine.best.gcv <= coarse.best.gcv + 1e-12


def test_search_survives_separable_data():
    """Perfect separation must not crash the search; some penalty pair
    still wins on GCV."""
    n = 12
    y = np.concatenate([np.ones(6), -np.ones(6)])
    X = y[:, None] * 5.0
    d = CausalDesign(
        y=y,
        X_effect=X,
        X_adjust=np.empty((n, 0)),
        weights=np.ones(n),
        effect_cols=[ColumnMeta(name="z", kind="indicator")],
        adjust_cols=[],
    )
    res = tuning.search(d, log_grid=tuple(float(k) for k in range(-3, 4)), precision=0.5)
    assert math.isfinite(res.best.gcv)
