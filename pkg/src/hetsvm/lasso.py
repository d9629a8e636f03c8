"""Weighted LASSO solver used inside the hinge-loss active-set iteration.

Minimizes

    loss_scale * sum_i w_i (y_i - x_i'b)^2  +  sum_j penalty_j |b_j|

by cyclic coordinate descent with soft thresholding.  Two interchangeable
backends implement the inner loop: a compiled Cython kernel and a NumPy
fallback.  The compiled one is preferred when importable; set
``HETSVM_BACKEND=python`` or ``HETSVM_BACKEND=compiled`` to force a choice.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import _cd_python
from .errors import ConfigError

logger = logging.getLogger(__name__)

try:
    from . import _cd_kernel
except ImportError:  # pragma: no cover - depends on the build environment
    _cd_kernel = None

_env = os.environ.get("HETSVM_BACKEND", "").strip().lower()
if _env == "python":
    DEFAULT_BACKEND = "python"
elif _env == "compiled":
    if _cd_kernel is None:
        raise ImportError(
            "HETSVM_BACKEND=compiled but the hetsvm._cd_kernel extension is not built"
        )
    DEFAULT_BACKEND = "compiled"
elif _env:
    raise ImportError(f"unknown HETSVM_BACKEND value '{_env}'")
else:
    DEFAULT_BACKEND = "compiled" if _cd_kernel is not None else "python"

DEFAULT_CONV_TOL = 1e-7
DEFAULT_KKT_TOL = 1e-7
DEFAULT_MAX_PASSES = 10_000
_STAGE_PASSES = 128


def available_backends() -> list[str]:
    out = ["python"]
    if _cd_kernel is not None:
        out.insert(0, "compiled")
    return out


def soft_threshold(z, t):
    """Elementwise soft thresholding sign(z) * max(|z| - t, 0)."""
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@dataclass
class LassoProblem:
    """One penalized weighted least squares instance.

    penalty gives the per-coordinate L1 factors.  conv_scale optionally
    reweights the convergence metric per coordinate (the hinge-loss loop
    uses it to measure changes on the unrescaled coefficient scale); it
    defaults to ones.
    """

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    penalty: np.ndarray
    loss_scale: float = 1.0
    conv_scale: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.penalty = np.asarray(self.penalty, dtype=np.float64)
        n, p = self.X.shape
        if self.y.shape != (n,):
            raise ValueError("y length does not match X")
        if self.weights.shape != (n,):
            raise ValueError("weights length does not match X")
        if self.penalty.shape != (p,):
            raise ValueError("penalty length does not match X")
        for name in ("X", "y", "weights", "penalty"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(self.penalty < 0):
            raise ValueError("penalty factors must be nonnegative")
        if self.conv_scale is None:
            self.conv_scale = np.ones(p)
        else:
            self.conv_scale = np.asarray(self.conv_scale, dtype=np.float64)
            if self.conv_scale.shape != (p,):
                raise ValueError("conv_scale length does not match X")


@dataclass
class LassoSolution:
    coef: np.ndarray
    objective: float
    passes: int
    converged: bool
    kkt_violation: float
    backend: str = field(default="")

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coef))


def objective_value(problem: LassoProblem, coef) -> float:
    """Evaluate the penalized objective at an arbitrary coefficient vector."""
    r = problem.y - problem.X @ coef
    loss = problem.loss_scale * float(problem.weights @ (r * r))
    return loss + float(problem.penalty @ np.abs(coef))


def kkt_violation(problem: LassoProblem, coef) -> float:
    """Largest subgradient slack at ``coef`` with a freshly computed residual."""
    coef = np.asarray(coef, dtype=np.float64)
    r = problem.y - problem.X @ coef
    g = 2.0 * problem.loss_scale * (problem.X.T @ (problem.weights * r))
    worst = 0.0
    at_zero = coef == 0.0
    if np.any(at_zero):
        worst = float(np.max(np.maximum(np.abs(g[at_zero]) - problem.penalty[at_zero], 0.0)))
    active = ~at_zero
    if np.any(active):
        slack = np.abs(g[active] - problem.penalty[active] * np.sign(coef[active]))
        worst = max(worst, float(np.max(slack)))
    return worst


def _exact_finish(problem: LassoProblem, b: np.ndarray, kkt_tol: float):
    """Solve the sign-restricted normal equations on the current support.

    Coordinate descent pins down the support and signs long before it
    polishes the last digits, so once they stop moving the optimum solves a
    small linear system: 2s*Xs'WXs b = 2s*Xs'Wy - penalty*sign.  Returns
    (coef, objective, kkt) when the solution keeps the assumed signs and
    satisfies the full KKT conditions, else None (descent continues).
    """
    support = np.flatnonzero(b)
    if support.size == 0 or support.size > problem.X.shape[0]:
        return None
    sigma = np.sign(b[support])
    Xs = problem.X[:, support]
    wXs = Xs * problem.weights[:, None]
    s2 = 2.0 * problem.loss_scale
    A = s2 * (wXs.T @ Xs)
    rhs = s2 * (wXs.T @ problem.y) - problem.penalty[support] * sigma
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)) or np.any(sol * sigma < 0.0):
        return None
    coef = np.zeros_like(b)
    coef[support] = sol
    kkt = kkt_violation(problem, coef)
    if kkt > kkt_tol:
        return None
    return coef, objective_value(problem, coef), kkt


def solve(
    problem: LassoProblem,
    warm_start=None,
    conv_tol: float = DEFAULT_CONV_TOL,
    kkt_tol: float = DEFAULT_KKT_TOL,
    max_passes: int = DEFAULT_MAX_PASSES,
    backend: str | None = None,
    objective_trace: list | None = None,
) -> LassoSolution:
    """Run coordinate descent, optionally from a warm start.

    Descent runs in stages; between stages, once the support and signs have
    stabilized, an exact solve of the sign-restricted normal equations
    finishes the last digits (rejected unless it satisfies the full KKT
    conditions without increasing the objective).  objective_trace, when
    given a list, receives the objective value after every coordinate pass;
    that diagnostic path always runs the Python backend.  Non-convergence
    within max_passes is logged and reported via ``converged`` rather than
    raised.
    """
    name = backend or DEFAULT_BACKEND
    if objective_trace is not None:
        name = "python"
    if name not in available_backends():
        raise ConfigError(f"backend '{name}' is not available")

    n, p = problem.X.shape
    b = np.zeros(p)
    if warm_start is not None:
        warm = np.asarray(warm_start, dtype=np.float64)
        if warm.shape != (p,):
            raise ValueError("warm_start length does not match X")
        b[:] = warm

    if name == "compiled":
        X = np.asfortranarray(problem.X)
        y = np.ascontiguousarray(problem.y)
        w = np.ascontiguousarray(problem.weights)
        penalty = np.ascontiguousarray(problem.penalty)
        conv_scale = np.ascontiguousarray(problem.conv_scale)

        def run_stage(cap):
            return _cd_kernel.cd_solve(
                X, y, w, penalty, float(problem.loss_scale), conv_scale,
                float(conv_tol), float(kkt_tol), int(cap), b,
            )
    else:

        def run_stage(cap):
            return _cd_python.cd_solve(
                problem.X, problem.y, problem.weights, problem.penalty,
                float(problem.loss_scale), problem.conv_scale,
                float(conv_tol), float(kkt_tol), int(cap), b,
                objective_trace=objective_trace,
            )

    total_passes = 0
    converged = False
    kkt = float("inf")
    obj = float("inf")
    budget = int(max_passes)
    stage = min(_STAGE_PASSES, budget)
    while budget > 0:
        passes, converged, kkt, obj = run_stage(min(stage, budget))
        total_passes += int(passes)
        budget -= int(passes)
        if converged:
            break
        finish = _exact_finish(problem, b, kkt_tol)
        if finish is not None and finish[1] <= obj + 1e-9 * (1.0 + abs(obj)):
            b[:] = finish[0]
            obj, kkt = finish[1], finish[2]
            converged = True
            if objective_trace is not None:
                objective_trace.append(obj)
            break
        stage *= 2

    if not converged:
        logger.warning(
            "coordinate descent hit the %d-pass cap (kkt violation %.3e)", max_passes, kkt
        )
    return LassoSolution(
        coef=b,
        objective=float(obj),
        passes=total_passes,
        converged=bool(converged),
        kkt_violation=float(kkt),
        backend=name,
    )
