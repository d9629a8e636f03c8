# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled cyclic coordinate descent kernel.

Same update sequence as ``_cd_python.cd_solve``; kept in lockstep so the two
backends disagree only by floating-point rounding.
"""

from libc.math cimport fabs

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef double _pass_over(
    double[::1, :] X,
    double[::1] w,
    double[::1] penalty,
    double s,
    double[::1] conv_scale,
    double[::1] colnorm,
    double[::1] r,
    double[::1] b,
    long[::1] idx,
    Py_ssize_t m,
) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t k, j, i
    cdef double delta = 0.0
    cdef double cj, g, num, t, bj, d, ad
    for k in range(m):
        j = idx[k]
        cj = colnorm[j]
        if cj <= 0.0:
            if b[j] != 0.0:
                d = -b[j]
                for i in range(n):
                    r[i] -= d * X[i, j]
                ad = fabs(d) * conv_scale[j]
                if ad > delta:
                    delta = ad
                b[j] = 0.0
            continue
        g = 0.0
        for i in range(n):
            g += w[i] * X[i, j] * r[i]
        num = 2.0 * s * (g + b[j] * cj)
        t = penalty[j]
        if num > t:
            bj = (num - t) / (2.0 * s * cj)
        elif num < -t:
            bj = (num + t) / (2.0 * s * cj)
        else:
            bj = 0.0
        d = bj - b[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= d * X[i, j]
            b[j] = bj
            ad = fabs(d) * conv_scale[j]
            if ad > delta:
                delta = ad
    return delta


cdef void _refresh_residual(
    double[::1, :] X, double[::1] y, double[::1] b, double[::1] r
) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double bj
    for i in range(n):
        r[i] = y[i]
    for j in range(p):
        bj = b[j]
        if bj != 0.0:
            for i in range(n):
                r[i] -= bj * X[i, j]


cdef double _kkt_violation(
    double[::1, :] X,
    double[::1] w,
    double[::1] penalty,
    double s,
    double[::1] r,
    double[::1] b,
) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double worst = 0.0
    cdef double g, v
    for j in range(p):
        g = 0.0
        for i in range(n):
            g += w[i] * X[i, j] * r[i]
        g *= 2.0 * s
        if b[j] == 0.0:
            v = fabs(g) - penalty[j]
            if v < 0.0:
                v = 0.0
        elif b[j] > 0.0:
            v = fabs(g - penalty[j])
        else:
            v = fabs(g + penalty[j])
        if v > worst:
            worst = v
    return worst


def cd_solve(
    double[::1, :] X,
    double[::1] y,
    double[::1] w,
    double[::1] penalty,
    double loss_scale,
    double[::1] conv_scale,
    double conv_tol,
    double kkt_tol,
    int max_passes,
    double[::1] b,
):
    """See ``_cd_python.cd_solve`` for the contract."""
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double s = loss_scale
    cdef double delta, kkt, obj
    cdef int passes = 0
    cdef bint converged = False

    r_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] r = r_arr
    colnorm_arr = np.empty(p, dtype=np.float64)
    cdef double[::1] colnorm = colnorm_arr
    full_arr = np.arange(p, dtype=np.int64)
    cdef long[::1] full_idx = full_arr
    cdef long[::1] active_idx
    cdef Py_ssize_t n_active
    cdef double c, xij

    with nogil:
        for j in range(p):
            c = 0.0
            for i in range(n):
                xij = X[i, j]
                c += w[i] * xij * xij
            colnorm[j] = c
        _refresh_residual(X, y, b, r)

    while passes < max_passes:
        with nogil:
            delta = _pass_over(X, w, penalty, s, conv_scale, colnorm, r, b, full_idx, p)
        passes += 1
        if delta < conv_tol:
            with nogil:
                _refresh_residual(X, y, b, r)
                kkt = _kkt_violation(X, w, penalty, s, r, b)
            if kkt <= kkt_tol:
                converged = True
                break
            continue
        active_arr = np.flatnonzero(np.asarray(b)).astype(np.int64)
        active_idx = active_arr
        n_active = active_idx.shape[0]
        while passes < max_passes:
            with nogil:
                delta = _pass_over(
                    X, w, penalty, s, conv_scale, colnorm, r, b, active_idx, n_active
                )
            passes += 1
            if delta < conv_tol:
                break

    with nogil:
        _refresh_residual(X, y, b, r)
        kkt = _kkt_violation(X, w, penalty, s, r, b)
        obj = 0.0
        for i in range(n):
            obj += w[i] * r[i] * r[i]
        obj *= s
        for j in range(p):
            obj += penalty[j] * fabs(b[j])

    return passes, converged, kkt, obj
