"""Sparse squared-hinge SVM fit by iterated LASSO on the margin-active set.

The estimator minimizes, over intercept mu and coefficient blocks
(beta for the causal columns, gamma for the adjustment columns),

    sum_i w_i * max(0, 1 - y_i W_i)^2 + lam_e * ||beta||_1 + lam_a * ||gamma||_1

with margins W_i = mu + x_effect_i'beta + x_adjust_i'gamma and y_i = +/-1.
Rescaling columns by 1/lambda and coefficients by lambda turns each step
into a LASSO with unit penalty: on the current active set
A = {i : y_i W_i <= 1} the squared hinge equals the squared residual, so we
alternate (1) a weighted LASSO on the centered active rows, (2) an intercept
update, (3) a margin update, and (4) an active set refresh, until the
coefficients stop moving or the active set repeats.

Fits are value objects carrying both coefficient scales, the final margins
and active set, and convergence diagnostics, and serialize to JSON with
stable key order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import lasso
from .design import CausalDesign, ColumnMeta, FactorialSchema, InteractionSchema
from .errors import DataError, DegenerateFitError

logger = logging.getLogger(__name__)

FIT_FORMAT_VERSION = 1
DEFAULT_MAX_ITER = 200
DEFAULT_COEF_TOL = 1e-6


@dataclass(frozen=True)
class PenaltyPair:
    """L1 penalty levels for the causal and adjustment blocks."""

    lam_effect: float
    lam_adjust: float

    def __post_init__(self):
        if self.lam_effect <= 0 or self.lam_adjust <= 0:
            raise ValueError("penalties must be strictly positive")


@dataclass
class SvmFit:
    """Fitted model with diagnostics.

    effect_coefs / adjust_coefs are on the original column scale;
    the _scaled versions carry the penalty rescaling (scaled = lam * coef)
    under which every nonzero coefficient costs one unit of penalty.
    margins and active refer to the rows the model was fit on and are None
    on fits restored from JSON.
    """

    intercept: float
    effect_coefs: np.ndarray
    adjust_coefs: np.ndarray
    effect_coefs_scaled: np.ndarray
    adjust_coefs_scaled: np.ndarray
    penalties: PenaltyPair
    objective: float
    converged: bool
    oscillated: bool
    iterations: int
    lasso_passes: int
    margins: np.ndarray | None = None
    active: np.ndarray | None = None

    @property
    def n_nonzero(self) -> int:
        return int(
            np.count_nonzero(self.effect_coefs_scaled)
            + np.count_nonzero(self.adjust_coefs_scaled)
        )

    @property
    def n_nonzero_effect(self) -> int:
        return int(np.count_nonzero(self.effect_coefs_scaled))

    @property
    def active_size(self) -> int:
        if self.active is None:
            raise DataError("fit restored from JSON carries no active set")
        return int(np.count_nonzero(self.active))


def hinge_objective(y, margins, weights, l1_term: float = 0.0) -> float:
    """Weighted squared hinge loss plus an optional penalty term."""
    slack = np.maximum(0.0, 1.0 - y * margins)
    return float(weights @ (slack * slack)) + l1_term


def fit(
    design: CausalDesign,
    penalties: PenaltyPair,
    init: SvmFit | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    coef_tol: float = DEFAULT_COEF_TOL,
    backend: str | None = None,
    _stacked: np.ndarray | None = None,
) -> SvmFit:
    """Fit the penalized squared-hinge SVM at one penalty pair.

    init warm-starts both the coefficients and the first active set from an
    earlier fit (typically a neighboring point on the penalty grid).
    _stacked lets the tuning loop pass a precomputed design.stacked().
    """
    y = design.y
    w = design.weights
    n_effect = design.n_effect
    X = design.stacked() if _stacked is None else _stacked
    n, p = X.shape

    scale = np.empty(p)
    scale[:n_effect] = 1.0 / penalties.lam_effect
    scale[n_effect:] = 1.0 / penalties.lam_adjust
    Xs = X * scale
    unit_penalty = np.ones(p)

    b = np.zeros(p)
    if init is not None:
        orig = np.concatenate([init.effect_coefs, init.adjust_coefs])
        if orig.shape != (p,):
            raise DataError("warm-start fit has a different number of columns")
        b[:] = orig / scale
        mu = init.intercept
        W = mu + Xs @ b
    else:
        W = np.zeros(n)

    seen: dict[bytes, int] = {}
    prev_key = None
    best = None
    prev_obj = np.inf
    mu = 0.0
    converged = False
    oscillated = False
    total_passes = 0
    iterations = 0

    for iterations in range(1, max_iter + 1):
        mask = (y * W) <= 1.0
        if not mask.any():
            raise DegenerateFitError(
                "margin active set is empty; penalties are too weak for this data"
            )
        key = mask.tobytes()
        if key == prev_key:
            converged = True
            iterations -= 1
            break
        if key in seen:
            oscillated = True
            logger.warning(
                "active set cycle detected at iteration %d; keeping the best iterate",
                iterations,
            )
            if best is not None:
                _, b, mu, W = best
            iterations -= 1
            break
        seen[key] = iterations
        prev_key = key

        wa = w[mask]
        aw = wa.sum()
        Xa = Xs[mask]
        ya = y[mask]
        xm = (wa @ Xa) / aw
        ym = float(wa @ ya) / aw

        problem = lasso.LassoProblem(
            X=Xa - xm,
            y=ya - ym,
            weights=wa,
            penalty=unit_penalty,
            loss_scale=1.0 / aw,
            conv_scale=scale,
        )
        b_prev = b
        sol = lasso.solve(problem, warm_start=b_prev, backend=backend)
        total_passes += sol.passes
        b = sol.coef
        mu = ym - float(xm @ b)
        W = mu + Xs @ b

        obj = hinge_objective(y, W, w, float(np.abs(b).sum()))
        if best is None or obj < best[0]:
            best = (obj, b, mu, W)
        if obj > prev_obj * (1.0 + 1e-12) + 1e-15:
            oscillated = True
        prev_obj = obj

        if float(np.max(np.abs(b - b_prev) * scale, initial=0.0)) < coef_tol:
            converged = True
            break
    else:
        logger.warning("active set iteration hit the %d-iteration cap", max_iter)
        if best is not None:
            _, b, mu, W = best

    if not converged and best is not None:
        _, b, mu, W = best

    active = (y * W) <= 1.0
    objective = hinge_objective(y, W, w, float(np.abs(b).sum()))
    return SvmFit(
        intercept=float(mu),
        effect_coefs=b[:n_effect] * scale[:n_effect],
        adjust_coefs=b[n_effect:] * scale[n_effect:],
        effect_coefs_scaled=b[:n_effect].copy(),
        adjust_coefs_scaled=b[n_effect:].copy(),
        penalties=penalties,
        objective=objective,
        converged=converged,
        oscillated=oscillated,
        iterations=iterations,
        lasso_passes=total_passes,
        margins=W,
        active=active,
    )


def predict_margin(fit: SvmFit, X_effect, X_adjust) -> np.ndarray:
    """Margins mu + Xe'beta + Xa'gamma for new rows (original column scale)."""
    X_effect = np.atleast_2d(np.asarray(X_effect, dtype=np.float64))
    X_adjust = np.atleast_2d(np.asarray(X_adjust, dtype=np.float64))
    return fit.intercept + X_effect @ fit.effect_coefs + X_adjust @ fit.adjust_coefs


def classify(fit: SvmFit, X_effect, X_adjust) -> np.ndarray:
    """Predicted labels in {-1, +1}; a zero margin classifies as +1."""
    W = predict_margin(fit, X_effect, X_adjust)
    return np.where(W >= 0.0, 1.0, -1.0)


def _meta_to_dict(meta: ColumnMeta) -> dict:
    return {
        "name": meta.name,
        "kind": meta.kind,
        "center": meta.center,
        "scale": meta.scale,
    }


def _schema_to_dict(schema) -> dict:
    if isinstance(schema, FactorialSchema):
        return {
            "type": "factorial",
            "factors": schema.factors,
            "baseline": list(schema.baseline),
            "labels": schema.labels,
            "combos": [list(c) for c in schema.combos],
        }
    if isinstance(schema, InteractionSchema):
        return {
            "type": "interactions",
            "treatment": schema.treatment,
            "covariates": schema.covariate_names,
        }
    return {"type": "none"}


def serialize_fit(fit: SvmFit, design: CausalDesign | None = None, extra: dict | None = None) -> dict:
    """JSON-ready dict for a fit, including design column metadata."""
    doc = {
        "format_version": FIT_FORMAT_VERSION,
        "penalties": {
            "lam_effect": fit.penalties.lam_effect,
            "lam_adjust": fit.penalties.lam_adjust,
        },
        "intercept": fit.intercept,
        "effect_coefs": fit.effect_coefs.tolist(),
        "adjust_coefs": fit.adjust_coefs.tolist(),
        "effect_coefs_scaled": fit.effect_coefs_scaled.tolist(),
        "adjust_coefs_scaled": fit.adjust_coefs_scaled.tolist(),
        "objective": fit.objective,
        "converged": fit.converged,
        "oscillated": fit.oscillated,
        "iterations": fit.iterations,
        "n_nonzero": fit.n_nonzero,
        "active_size": int(np.count_nonzero(fit.active)) if fit.active is not None else None,
    }
    if design is not None:
        doc["effect_columns"] = [_meta_to_dict(m) for m in design.effect_cols]
        doc["adjust_columns"] = [_meta_to_dict(m) for m in design.adjust_cols]
        doc["schema"] = _schema_to_dict(design.schema)
    if extra:
        doc.update(extra)
    return doc


def fit_to_json(fit: SvmFit, design: CausalDesign | None = None, extra: dict | None = None) -> str:
    return json.dumps(serialize_fit(fit, design, extra), sort_keys=True, indent=2)


def deserialize_fit(doc: dict):
    """Rebuild (fit, effect_cols, adjust_cols, schema_info) from a JSON dict.

    The restored fit carries no margins or active set; predictions work.
    """
    if doc.get("format_version") != FIT_FORMAT_VERSION:
        raise DataError(f"unsupported fit format version {doc.get('format_version')!r}")
    pen = PenaltyPair(doc["penalties"]["lam_effect"], doc["penalties"]["lam_adjust"])
    fit_obj = SvmFit(
        intercept=float(doc["intercept"]),
        effect_coefs=np.asarray(doc["effect_coefs"], dtype=np.float64),
        adjust_coefs=np.asarray(doc["adjust_coefs"], dtype=np.float64),
        effect_coefs_scaled=np.asarray(doc["effect_coefs_scaled"], dtype=np.float64),
        adjust_coefs_scaled=np.asarray(doc["adjust_coefs_scaled"], dtype=np.float64),
        penalties=pen,
        objective=float(doc["objective"]),
        converged=bool(doc["converged"]),
        oscillated=bool(doc["oscillated"]),
        iterations=int(doc["iterations"]),
        lasso_passes=0,
        margins=None,
        active=None,
    )
    effect_cols = [ColumnMeta(**m) for m in doc.get("effect_columns", [])]
    adjust_cols = [ColumnMeta(**m) for m in doc.get("adjust_columns", [])]
    schema_info = doc.get("schema", {"type": "none"})
    return fit_obj, effect_cols, adjust_cols, schema_info


def fit_from_json(text: str):
    return deserialize_fit(json.loads(text))
