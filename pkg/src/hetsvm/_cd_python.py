"""NumPy fallback for the cyclic coordinate descent kernel.

Mirrors ``_cd_kernel.pyx`` update for update so both backends agree to
floating-point noise.  This version can additionally record the objective
after every pass, which the compiled kernel does not support.
"""

from __future__ import annotations

import numpy as np


def _soft(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _pass_over(X, WX, penalty, s, conv_scale, colnorm, r, b, indices):
    delta = 0.0
    for j in indices:
        cj = colnorm[j]
        if cj <= 0.0:
            if b[j] != 0.0:
                d = -b[j]
                np.subtract(r, d * X[:, j], out=r)
                delta = max(delta, abs(d) * conv_scale[j])
                b[j] = 0.0
            continue
        num = 2.0 * s * (WX[:, j] @ r + b[j] * cj)
        bj = _soft(num, penalty[j]) / (2.0 * s * cj)
        d = bj - b[j]
        if d != 0.0:
            np.subtract(r, d * X[:, j], out=r)
            b[j] = bj
            delta = max(delta, abs(d) * conv_scale[j])
    return delta


def _kkt_violation(WX, penalty, s, r, b):
    if b.shape[0] == 0:
        return 0.0
    g = 2.0 * s * (WX.T @ r)
    viol = np.where(
        b == 0.0,
        np.maximum(np.abs(g) - penalty, 0.0),
        np.abs(g - penalty * np.sign(b)),
    )
    return float(viol.max())


def cd_solve(
    X,
    y,
    w,
    penalty,
    loss_scale,
    conv_scale,
    conv_tol,
    kkt_tol,
    max_passes,
    b,
    objective_trace=None,
):
    """Cyclic coordinate descent on the weighted penalized least squares

        loss_scale * sum_i w_i (y_i - x_i'b)^2 + sum_j penalty_j |b_j|

    ``b`` is updated in place (warm starts welcome).  Returns
    (passes, converged, kkt_violation, objective).

    Convergence needs both a small pass delta, measured as
    max_j |change_j| * conv_scale_j < conv_tol, and the stationarity
    conditions satisfied to kkt_tol.  Full passes alternate with passes over
    the currently nonzero coordinates.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, p = X.shape
    s = float(loss_scale)
    WX = X * w[:, None]
    colnorm = np.einsum("ij,ij->j", WX, X)
    r = y - X @ b

    def objective():
        return s * float(w @ (r * r)) + float(penalty @ np.abs(b))

    passes = 0
    converged = False
    while passes < max_passes:
        delta = _pass_over(X, WX, penalty, s, conv_scale, colnorm, r, b, range(p))
        passes += 1
        if objective_trace is not None:
            objective_trace.append(objective())
        if delta < conv_tol:
            r[:] = y - X @ b
            if _kkt_violation(WX, penalty, s, r, b) <= kkt_tol:
                converged = True
                break
            continue
        active = np.flatnonzero(b)
        while passes < max_passes:
            delta = _pass_over(X, WX, penalty, s, conv_scale, colnorm, r, b, active)
            passes += 1
            if objective_trace is not None:
                objective_trace.append(objective())
            if delta < conv_tol:
                break

    r[:] = y - X @ b
    return passes, converged, _kkt_violation(WX, penalty, s, r, b), objective()
