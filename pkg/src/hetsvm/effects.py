"""Treatment effect summaries derived from a fitted model.

Effects compare counterfactual margins.  For a factorial design the
counterfactual row for combination t is the matching indicator row (the
baseline is all zeros); for an interaction design setting the treatment
to 1 recomputes every treatment-covariate column from the unit's
standardized covariates.

With W(t) the counterfactual margin and W* its clamp onto [-1, 1]:

    CTE  = (sign W(t) - sign W(0)) / 2   in {-1, 0, +1},  sign(0) = +1
    CATE = (W*(t) - W*(0)) / 2           in [-1, 1]
    ATE  = weighted mean of the CATEs

Values here live on the probability-difference scale in [-1, 1]; interface
layers report them multiplied by 100 (percentage points).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import CausalDesign, FactorialSchema, InteractionSchema
from .errors import DataError, NotEstimableError
from .svm import SvmFit, predict_margin

__all__ = [
    "cte",
    "cate",
    "ate",
    "rank_treatments",
    "group_extremes",
    "cate_from_margins",
    "TreatmentEffects",
    "RankedTreatment",
    "UnitEffect",
    "GroupExtremes",
]


def _sign(W):
    return np.where(W >= 0.0, 1.0, -1.0)


def _clamp(W):
    return np.clip(W, -1.0, 1.0)


def cate_from_margins(W_t, W_0) -> np.ndarray:
    """CATE given counterfactual margins under treatment and control."""
    return 0.5 * (_clamp(W_t) - _clamp(W_0))


def _combo_index(schema: FactorialSchema, treatment: str) -> int:
    try:
        return schema.labels.index(treatment)
    except ValueError:
        raise NotEstimableError(
            f"treatment '{treatment}' has no indicator column "
            "(unobserved or baseline combination)"
        ) from None


def counterfactual_margins(fit: SvmFit, design: CausalDesign, treatment) -> tuple[np.ndarray, np.ndarray]:
    """Margins (W_t, W_0) for every design unit under the two counterfactuals."""
    schema = design.schema
    n = design.n_units
    W0 = predict_margin(fit, np.zeros((n, design.n_effect)), design.X_adjust)
    if isinstance(schema, FactorialSchema):
        j = _combo_index(schema, str(treatment))
        Wt = W0 + fit.effect_coefs[j]
        return Wt, W0
    if isinstance(schema, InteractionSchema):
        if treatment not in (1, "1", schema.treatment, None):
            raise NotEstimableError(f"unknown treatment '{treatment}' for this design")
        Zt = np.column_stack([np.ones(n), schema.covariates_std])
        Wt = predict_margin(fit, Zt, design.X_adjust)
        return Wt, W0
    raise DataError("design carries no treatment schema")


@dataclass
class TreatmentEffects:
    """Per-unit and average effects of one treatment."""

    treatment: str
    cte: np.ndarray
    cate: np.ndarray
    ate: float


def cte(fit: SvmFit, design: CausalDesign, treatment=None) -> np.ndarray:
    """Conditional treatment effect of classification, per unit."""
    Wt, W0 = counterfactual_margins(fit, design, treatment)
    return 0.5 * (_sign(Wt) - _sign(W0))


def cate(fit: SvmFit, design: CausalDesign, treatment=None) -> np.ndarray:
    """Conditional average treatment effect, per unit."""
    Wt, W0 = counterfactual_margins(fit, design, treatment)
    return cate_from_margins(Wt, W0)


def ate(fit: SvmFit, design: CausalDesign, treatment=None) -> float:
    """Design-weighted average of the per-unit CATEs."""
    c = cate(fit, design, treatment)
    w = design.weights
    return float(w @ c) / float(w.sum())


def estimate(fit: SvmFit, design: CausalDesign, treatment=None) -> TreatmentEffects:
    Wt, W0 = counterfactual_margins(fit, design, treatment)
    c = cate_from_margins(Wt, W0)
    w = design.weights
    label = str(treatment) if treatment is not None else _default_label(design)
    return TreatmentEffects(
        treatment=label,
        cte=0.5 * (_sign(Wt) - _sign(W0)),
        cate=c,
        ate=float(w @ c) / float(w.sum()),
    )


def _default_label(design: CausalDesign) -> str:
    if isinstance(design.schema, InteractionSchema):
        return design.schema.treatment
    raise NotEstimableError("a factorial design needs an explicit treatment label")


@dataclass
class RankedTreatment:
    treatment: str
    ate: float
    coef_nonzero: bool


def rank_treatments(fit: SvmFit, design: CausalDesign) -> list[RankedTreatment]:
    """All encoded treatments sorted by estimated ATE, descending.

    Exact ties order by treatment label so the ranking is deterministic.
    """
    schema = design.schema
    if isinstance(schema, FactorialSchema):
        labels = schema.labels
    elif isinstance(schema, InteractionSchema):
        labels = [schema.treatment]
    else:
        raise DataError("design carries no treatment schema")
    w = design.weights
    wsum = float(w.sum())
    n = design.n_units
    W0 = predict_margin(fit, np.zeros((n, design.n_effect)), design.X_adjust)
    rows = []
    for j, label in enumerate(labels):
        if isinstance(schema, FactorialSchema):
            Wt = W0 + fit.effect_coefs[j]
            nz = fit.effect_coefs_scaled[j] != 0.0
        else:
            Zt = np.column_stack([np.ones(n), schema.covariates_std])
            Wt = predict_margin(fit, Zt, design.X_adjust)
            nz = bool(np.any(fit.effect_coefs_scaled != 0.0))
        a = float(w @ cate_from_margins(Wt, W0)) / wsum
        rows.append(RankedTreatment(treatment=label, ate=a, coef_nonzero=bool(nz)))
    rows.sort(key=lambda r: (-r.ate, r.treatment))
    return rows


@dataclass
class UnitEffect:
    index: int
    cate: float
    weight: float
    covariates: dict


@dataclass
class GroupExtremes:
    treatment: str
    top: list[UnitEffect]
    bottom: list[UnitEffect]


def _original_covariates(design: CausalDesign, i: int) -> dict:
    out = {}
    for j, meta in enumerate(design.adjust_cols):
        if meta.kind == "main":
            out[meta.name] = design.X_adjust[i, j] * meta.scale + meta.center
    return out


def group_extremes(fit: SvmFit, design: CausalDesign, k: int, treatment=None) -> GroupExtremes:
    """The k units with the largest and smallest estimated CATEs.

    Ties break toward the lower unit index.  Covariate profiles are reported
    on the original (de-standardized) scale.
    """
    eff = estimate(fit, design, treatment)
    idx = np.arange(design.n_units)
    order_desc = np.lexsort((idx, -eff.cate))
    order_asc = np.lexsort((idx, eff.cate))
    k = min(k, design.n_units)

    def row(i):
        return UnitEffect(
            index=int(i),
            cate=float(eff.cate[i]),
            weight=float(design.weights[i]),
            covariates=_original_covariates(design, int(i)),
        )

    top = [row(i) for i in order_desc[:k]]
    bottom = [row(i) for i in order_asc[:k]]
    return GroupExtremes(treatment=eff.treatment, top=top, bottom=bottom)
