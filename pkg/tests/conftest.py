"""Shared fixtures: small seeded causal designs used across test modules."""

import numpy as np
import pytest

from hetsvm import design as dz
from hetsvm.design import CausalDesign, ColumnMeta


def interaction_design(n=120, p=3, seed=0, weights=None):
    """Binary-treatment design with p standardized covariates and a sparse
    true signal; the same construction is reused by the svm/tuning/effects
    tests so fits stay comparable."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    treated = (np.arange(n) % 2 == 0).astype(np.float64)
    logit = 0.8 * treated * x[:, 0] - 0.3 * x[:, 1]
    prob = 1.0 / (1.0 + np.exp(-logit))
    y01 = (rng.random(n) < prob).astype(np.float64)

    stds, metas = [], []
    for j in range(p):
        std, center, scale = dz.standardize_column(x[:, j])
        stds.append(std)
        metas.append(ColumnMeta(name=f"x{j + 1}", kind="main", center=center, scale=scale))
    x_std = np.column_stack(stds)

    Z, schema, effect_cols = dz.build_interactions(
        treated, x_std, [m.name for m in metas], treatment_name="t"
    )
    X_adjust = np.column_stack([np.ones(n), x_std])
    adjust_cols = [ColumnMeta(name="const", kind="constant")] + metas
    w = np.ones(n) if weights is None else dz.normalize_weights(weights)
    return CausalDesign(
        y=2.0 * y01 - 1.0,
        X_effect=Z,
        X_adjust=X_adjust,
        weights=w,
        effect_cols=effect_cols,
        adjust_cols=adjust_cols,
        schema=schema,
    )


def factorial_design(n_per_arm=40, n_arms=4, seed=3):
    """Multi-arm design: arm 0 is baseline, arm effects step up by 0.25."""
    rng = np.random.default_rng(seed)
    arm = np.repeat(np.arange(n_arms), n_per_arm)
    n = arm.shape[0]
    probs = 0.35 + 0.25 * np.minimum(arm, 2) / 2.0
    y01 = (rng.random(n) < probs[np.arange(n) % n_arms][arm]).astype(np.float64)
    # deterministic outcome pattern would be degenerate; keep random draws
    y01 = (rng.random(n) < (0.3 + 0.15 * arm)).astype(np.float64)
    table = {"arm": np.array([str(a) for a in arm], dtype=object)}
    Z, schema, effect_cols = dz.encode_factorial(table, ["arm"])
    x = rng.standard_normal(n)
    std, center, scale = dz.standardize_column(x)
    return CausalDesign(
        y=2.0 * y01 - 1.0,
        X_effect=Z,
        X_adjust=np.column_stack([np.ones(n), std]),
        weights=np.ones(n),
        effect_cols=effect_cols,
        adjust_cols=[
            ColumnMeta(name="const", kind="constant"),
            ColumnMeta(name="x1", kind="main", center=center, scale=scale),
        ],
        schema=schema,
    )


@pytest.fixture
def small_design():
    return interaction_design()


@pytest.fixture
def arm_design():
    return factorial_design()
