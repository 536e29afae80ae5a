# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled calibration kernels.

Same contract as the numpy twins in solver.py / baseline.py: a 13-tuple
(status, fx, fy, normal, rho, mu, lam_t, lam_b, x_b, x_t, v, sv, focal_resid)
with status 0 on success (see posedist._backend.STATUS_KINDS). The point of
this module is per-call latency: one Monte Carlo study makes tens of
thousands of calls on matrices with 3-100 rows, where numpy dispatch
overhead dominates. Numerics: one-sided Jacobi for the N x 3 singular
vector, modified Gram-Schmidt for the small least-squares solves.
"""

import numpy as np

from libc.math cimport fabs, hypot, isfinite, sqrt
from libc.stdlib cimport free, malloc

cdef double RANK_RATIO_MIN = 1e-12
cdef double SEGMENT_SIN_MIN = 1e-6
cdef double INFINITY_RATIO = 1e-9


cdef inline void _cross3(const double* a, const double* b, double* out) noexcept:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef int _jacobi_svd3(double* a, Py_ssize_t n, double* v, double* sigma) noexcept:
    """One-sided Jacobi SVD of an n x 3 row-major matrix (a is overwritten).

    On exit the columns of a are orthogonal with norms sigma[j], and v
    (3 x 3 row-major) holds the right singular vectors as columns.
    """
    cdef Py_ssize_t i
    cdef int sweep, p, q
    cdef double app, aqq, apq, zeta, t, cs, sn, t1, t2
    for i in range(9):
        v[i] = 0.0
    v[0] = v[4] = v[8] = 1.0
    cdef bint converged
    for sweep in range(60):
        converged = True
        for p in range(2):
            for q in range(p + 1, 3):
                app = 0.0
                aqq = 0.0
                apq = 0.0
                for i in range(n):
                    app += a[3 * i + p] * a[3 * i + p]
                    aqq += a[3 * i + q] * a[3 * i + q]
                    apq += a[3 * i + p] * a[3 * i + q]
                if apq == 0.0 or fabs(apq) <= 1e-15 * sqrt(app * aqq):
                    continue
                converged = False
                zeta = (aqq - app) / (2.0 * apq)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                cs = 1.0 / sqrt(1.0 + t * t)
                sn = cs * t
                for i in range(n):
                    t1 = a[3 * i + p]
                    t2 = a[3 * i + q]
                    a[3 * i + p] = cs * t1 - sn * t2
                    a[3 * i + q] = sn * t1 + cs * t2
                for i in range(3):
                    t1 = v[3 * i + p]
                    t2 = v[3 * i + q]
                    v[3 * i + p] = cs * t1 - sn * t2
                    v[3 * i + q] = sn * t1 + cs * t2
        if converged:
            break
    for p in range(3):
        app = 0.0
        for i in range(n):
            app += a[3 * i + p] * a[3 * i + p]
        sigma[p] = sqrt(app)
    return 0


cdef void _canonical_sign(double* v) noexcept:
    cdef int idx
    for idx in (2, 1, 0):
        if v[idx] != 0.0:
            if v[idx] < 0.0:
                v[0] = -v[0]
                v[1] = -v[1]
                v[2] = -v[2]
            return


cdef int _smallest_singular(double* rows, Py_ssize_t n, double* v_out, double* sv_out) noexcept:
    """Null direction of an n x 3 system; 0 ok, 2 rank-deficient."""
    cdef double vmat[9]
    cdef double sigma[3]
    cdef int jmin = 0, jmax = 0, jmid, j
    _jacobi_svd3(rows, n, vmat, sigma)
    for j in range(1, 3):
        if sigma[j] < sigma[jmin]:
            jmin = j
        if sigma[j] > sigma[jmax]:
            jmax = j
    jmid = 3 - jmin - jmax
    if jmin == jmax:  # all singular values equal (e.g. zero matrix)
        jmid = jmin
    if sigma[jmid] <= RANK_RATIO_MIN * sigma[jmax]:
        return 2
    v_out[0] = vmat[0 + jmin]
    v_out[1] = vmat[3 + jmin]
    v_out[2] = vmat[6 + jmin]
    _canonical_sign(v_out)
    sv_out[0] = sigma[jmin]
    return 0


cdef int _scaled_depths(
    const double* top_h,
    const double* bot_h,
    Py_ssize_t n,
    const double* v,
    double h,
    double* lam_t,
    double* lam_b,
) noexcept:
    """Per-person MGS solve of [top | -bot] (lt, lb)^T = h v; 0 ok, 6 degenerate."""
    cdef Py_ssize_t i
    cdef int j
    cdef double c1[3]
    cdef double c2[3]
    cdef double q1[3]
    cdef double w[3]
    cdef double rhs[3]
    cdef double r11, r12, r22, c2n, y1, y2
    for j in range(3):
        rhs[j] = h * v[j]
    for i in range(n):
        for j in range(3):
            c1[j] = top_h[3 * i + j]
            c2[j] = -bot_h[3 * i + j]
        r11 = sqrt(c1[0] * c1[0] + c1[1] * c1[1] + c1[2] * c1[2])
        if r11 == 0.0:
            return 6
        for j in range(3):
            q1[j] = c1[j] / r11
        r12 = q1[0] * c2[0] + q1[1] * c2[1] + q1[2] * c2[2]
        c2n = sqrt(c2[0] * c2[0] + c2[1] * c2[1] + c2[2] * c2[2])
        for j in range(3):
            w[j] = c2[j] - r12 * q1[j]
        r22 = sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
        if r22 <= SEGMENT_SIN_MIN * c2n:
            return 6
        y1 = q1[0] * rhs[0] + q1[1] * rhs[1] + q1[2] * rhs[2]
        y2 = (w[0] * rhs[0] + w[1] * rhs[1] + w[2] * rhs[2]) / r22
        lam_b[i] = y2 / r22
        lam_t[i] = (y1 - r12 * lam_b[i]) / r11
    return 0


cdef int _solve_focal(
    const double* v,
    const double* bot_h,
    const double* lam_b,
    Py_ssize_t n,
    bint fx_eq_fy,
    double* fx_out,
    double* fy_out,
    double* resid_out,
) noexcept:
    """MGS least squares on the pairwise system; 0 ok, 3 ill-cond, 4 nonpositive."""
    cdef Py_ssize_t m = n * (n - 1) // 2
    cdef double* buf = <double*> malloc(3 * m * sizeof(double))
    if buf == NULL:
        return 3
    cdef Py_ssize_t i, j, r = 0
    cdef int c
    cdef double d0, d1, d2
    for i in range(n):
        for j in range(i + 1, n):
            d0 = lam_b[i] * bot_h[3 * i] - lam_b[j] * bot_h[3 * j]
            d1 = lam_b[i] * bot_h[3 * i + 1] - lam_b[j] * bot_h[3 * j + 1]
            d2 = lam_b[i] * bot_h[3 * i + 2] - lam_b[j] * bot_h[3 * j + 2]
            buf[3 * r] = v[0] * d0
            buf[3 * r + 1] = v[1] * d1
            buf[3 * r + 2] = -v[2] * d2  # y entry
            r += 1

    cdef double s1, s2, nrm1, nrm2, r12, r22, y1, y2, rs, col, resid
    cdef int status = 0
    if fx_eq_fy:
        nrm1 = 0.0
        y1 = 0.0
        nrm2 = 0.0
        for r in range(m):
            col = buf[3 * r] + buf[3 * r + 1]
            nrm1 += col * col
            y1 += col * buf[3 * r + 2]
            if fabs(col) > nrm2:
                nrm2 = fabs(col)
        if nrm2 == 0.0 or nrm1 <= (RANK_RATIO_MIN * nrm2) ** 2:
            status = 3
        else:
            s1 = y1 / nrm1
            s2 = s1
    else:
        # q1 = col1 / |col1|; orthogonalize col2 against it
        nrm1 = 0.0
        for r in range(m):
            nrm1 += buf[3 * r] * buf[3 * r]
        nrm1 = sqrt(nrm1)
        nrm2 = 0.0
        for r in range(m):
            nrm2 += buf[3 * r + 1] * buf[3 * r + 1]
        nrm2 = sqrt(nrm2)
        if nrm1 == 0.0 or nrm2 == 0.0:
            status = 3
        else:
            r12 = 0.0
            for r in range(m):
                r12 += (buf[3 * r] / nrm1) * buf[3 * r + 1]
            r22 = 0.0
            y1 = 0.0
            y2 = 0.0
            for r in range(m):
                col = buf[3 * r + 1] - r12 * (buf[3 * r] / nrm1)
                r22 += col * col
                y1 += (buf[3 * r] / nrm1) * buf[3 * r + 2]
                y2 += col * buf[3 * r + 2]
            r22 = sqrt(r22)
            if r22 <= RANK_RATIO_MIN * (nrm1 if nrm1 > nrm2 else nrm2):
                status = 3
            else:
                s2 = (y2 / r22) / r22
                s1 = (y1 - r12 * s2) / nrm1
    if status == 0:
        if s1 <= 0.0 or s2 <= 0.0:
            status = 4
        else:
            fx_out[0] = 1.0 / sqrt(s1)
            fy_out[0] = 1.0 / sqrt(s2)
            resid = 0.0
            for r in range(m):
                rs = buf[3 * r] * s1 + buf[3 * r + 1] * s2 - buf[3 * r + 2]
                resid += rs * rs
            resid_out[0] = sqrt(resid)
    free(buf)
    return status


cdef int _finalize(
    const double[:, ::1] top,
    const double[:, ::1] bot,
    const double* v,
    double fx,
    double fy,
    double h,
    double* lam_t,
    double* lam_b,
    Py_ssize_t n,
    double[::1] normal_out,
    double[:, ::1] xb_out,
    double[:, ::1] xt_out,
    double* rho_out,
    double* mu_out,
) noexcept:
    """Scale recovery, cheirality, back-projection, plane offset; 0 ok, 5 fail."""
    cdef double mu = sqrt((v[0] / fx) ** 2 + (v[1] / fy) ** 2 + v[2] ** 2)
    cdef Py_ssize_t i
    cdef bint all_pos = True, all_neg = True
    for i in range(n):
        if lam_t[i] <= 0.0 or lam_b[i] <= 0.0:
            all_pos = False
        if lam_t[i] >= 0.0 or lam_b[i] >= 0.0:
            all_neg = False
    if all_neg:
        mu = -mu
    elif not all_pos:
        return 5

    cdef double nx = (v[0] / fx) / mu
    cdef double ny = (v[1] / fy) / mu
    cdef double nz = v[2] / mu
    cdef double nn = sqrt(nx * nx + ny * ny + nz * nz)
    nx /= nn
    ny /= nn
    nz /= nn

    cdef double sx = 0.0, sy = 0.0, sz = 0.0
    for i in range(n):
        lam_t[i] /= mu
        lam_b[i] /= mu
        xt_out[i, 0] = lam_t[i] * top[i, 0] / fx
        xt_out[i, 1] = lam_t[i] * top[i, 1] / fy
        xt_out[i, 2] = lam_t[i]
        xb_out[i, 0] = lam_b[i] * bot[i, 0] / fx
        xb_out[i, 1] = lam_b[i] * bot[i, 1] / fy
        xb_out[i, 2] = lam_b[i]
        sx += xb_out[i, 0] + xt_out[i, 0]
        sy += xb_out[i, 1] + xt_out[i, 1]
        sz += xb_out[i, 2] + xt_out[i, 2]
    cdef double rho = 0.5 * h - 0.5 * (nx * sx + ny * sy + nz * sz) / n
    if rho <= 0.0:
        return 5
    normal_out[0] = nx
    normal_out[1] = ny
    normal_out[2] = nz
    rho_out[0] = rho
    mu_out[0] = mu
    return 0


_FAIL = (None,) * 12


def direct_calibrate(double[:, ::1] top, double[:, ::1] bot, double h, bint fx_eq_fy):
    """Compiled twin of solver._calibrate_arrays_python."""
    cdef Py_ssize_t n = top.shape[0]
    if n != bot.shape[0] or top.shape[1] != 2 or bot.shape[1] != 2:
        raise ValueError("top and bot must both be (N, 2)")
    if n < 2 or (n < 3 and not fx_eq_fy):
        return (1,) + _FAIL

    cdef double* top_h = <double*> malloc(3 * n * sizeof(double))
    cdef double* bot_h = <double*> malloc(3 * n * sizeof(double))
    cdef double* rows = <double*> malloc(3 * n * sizeof(double))
    cdef double* lam_t = <double*> malloc(n * sizeof(double))
    cdef double* lam_b = <double*> malloc(n * sizeof(double))
    if top_h == NULL or bot_h == NULL or rows == NULL or lam_t == NULL or lam_b == NULL:
        free(top_h); free(bot_h); free(rows); free(lam_t); free(lam_b)
        raise MemoryError()

    cdef double v[3]
    cdef double sv = 0.0, fx = 0.0, fy = 0.0, resid = 0.0, rho = 0.0, mu = 0.0
    cdef Py_ssize_t i
    cdef int status = 0
    try:
        for i in range(n):
            top_h[3 * i] = top[i, 0]
            top_h[3 * i + 1] = top[i, 1]
            top_h[3 * i + 2] = 1.0
            bot_h[3 * i] = bot[i, 0]
            bot_h[3 * i + 1] = bot[i, 1]
            bot_h[3 * i + 2] = 1.0
            _cross3(&top_h[3 * i], &bot_h[3 * i], &rows[3 * i])
        status = _smallest_singular(rows, n, v, &sv)
        if status:
            return (status,) + _FAIL
        status = _scaled_depths(top_h, bot_h, n, v, h, lam_t, lam_b)
        if status:
            return (status,) + _FAIL
        status = _solve_focal(v, bot_h, lam_b, n, fx_eq_fy, &fx, &fy, &resid)
        if status:
            return (status,) + _FAIL

        normal = np.empty(3)
        xb = np.empty((n, 3))
        xt = np.empty((n, 3))
        status = _finalize(
            top, bot, v, fx, fy, h, lam_t, lam_b, n, normal, xb, xt, &rho, &mu
        )
        if status:
            return (status,) + _FAIL
        lam_t_arr = np.empty(n)
        lam_b_arr = np.empty(n)
        for i in range(n):
            lam_t_arr[i] = lam_t[i]
            lam_b_arr[i] = lam_b[i]
        v_arr = np.array([v[0], v[1], v[2]])
        return (0, fx, fy, normal, rho, mu, lam_t_arr, lam_b_arr, xb, xt, v_arr, sv, resid)
    finally:
        free(top_h); free(bot_h); free(rows); free(lam_t); free(lam_b)


cdef int _horizon_fit(
    const double* top_h,
    const double* bot_h,
    Py_ssize_t n,
    double* line_out,
    double* rms_out,
) noexcept:
    """TLS horizon line through the pairwise intersection points; 0 ok, 8 fail."""
    cdef Py_ssize_t i, j
    cdef double lt[3]
    cdef double lb[3]
    cdef double hp[3]
    cdef double norm, px, py
    cdef double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0
    cdef double maxabs = 0.0
    cdef Py_ssize_t count = 0
    for i in range(n):
        for j in range(i + 1, n):
            _cross3(&top_h[3 * i], &top_h[3 * j], lt)
            _cross3(&bot_h[3 * i], &bot_h[3 * j], lb)
            _cross3(lt, lb, hp)
            norm = sqrt(hp[0] * hp[0] + hp[1] * hp[1] + hp[2] * hp[2])
            if fabs(hp[2]) <= INFINITY_RATIO * norm:
                continue
            px = hp[0] / hp[2]
            py = hp[1] / hp[2]
            sx += px
            sy += py
            sxx += px * px
            sxy += px * py
            syy += py * py
            if fabs(px) > maxabs:
                maxabs = fabs(px)
            if fabs(py) > maxabs:
                maxabs = fabs(py)
            count += 1
    if count < 2:
        return 8
    cdef double mx = sx / count
    cdef double my = sy / count
    cdef double a = sxx - count * mx * mx
    cdef double b = sxy - count * mx * my
    cdef double c = syy - count * my * my
    cdef double disc = sqrt((a - c) * (a - c) + 4.0 * b * b)
    cdef double lam_min = 0.5 * (a + c - disc)
    cdef double lam_max = 0.5 * (a + c + disc)
    cdef double bound = maxabs * maxabs
    if bound < 1.0:
        bound = 1.0
    if lam_max <= RANK_RATIO_MIN * bound:
        return 8
    cdef double d0, d1
    if fabs(b) > 0.0:
        d0 = lam_min - c
        d1 = b
        if fabs(lam_min - a) > fabs(d0):
            d0 = b
            d1 = lam_min - a
    else:
        if a <= c:
            d0 = 1.0
            d1 = 0.0
        else:
            d0 = 0.0
            d1 = 1.0
    norm = sqrt(d0 * d0 + d1 * d1)
    d0 /= norm
    d1 /= norm
    line_out[0] = d0
    line_out[1] = d1
    line_out[2] = -(d0 * mx + d1 * my)
    rms_out[0] = sqrt((lam_min if lam_min > 0.0 else 0.0) / count)
    return 0


def baseline_calibrate(double[:, ::1] top, double[:, ::1] bot, double h, bint fx_eq_fy):
    """Compiled twin of baseline._baseline_arrays_python."""
    cdef Py_ssize_t n = top.shape[0]
    if n != bot.shape[0] or top.shape[1] != 2 or bot.shape[1] != 2:
        raise ValueError("top and bot must both be (N, 2)")
    if n < 3:
        return (1,) + _FAIL

    cdef double* top_h = <double*> malloc(3 * n * sizeof(double))
    cdef double* bot_h = <double*> malloc(3 * n * sizeof(double))
    cdef double* rows = <double*> malloc(3 * n * sizeof(double))
    cdef double* lam_t = <double*> malloc(n * sizeof(double))
    cdef double* lam_b = <double*> malloc(n * sizeof(double))
    if top_h == NULL or bot_h == NULL or rows == NULL or lam_t == NULL or lam_b == NULL:
        free(top_h); free(bot_h); free(rows); free(lam_t); free(lam_b)
        raise MemoryError()

    cdef double p[3]
    cdef double line[3]
    cdef double sv = 0.0, rms = 0.0, fx = 0.0, fy = 0.0, rho = 0.0, mu = 0.0
    cdef double w, rx, ry, pnorm
    cdef Py_ssize_t i
    cdef int status = 0
    try:
        for i in range(n):
            top_h[3 * i] = top[i, 0]
            top_h[3 * i + 1] = top[i, 1]
            top_h[3 * i + 2] = 1.0
            bot_h[3 * i] = bot[i, 0]
            bot_h[3 * i + 1] = bot[i, 1]
            bot_h[3 * i + 2] = 1.0
            _cross3(&top_h[3 * i], &bot_h[3 * i], &rows[3 * i])
            w = hypot(rows[3 * i], rows[3 * i + 1])
            if w <= 0.0:
                return (6,) + _FAIL
            rows[3 * i] /= w
            rows[3 * i + 1] /= w
            rows[3 * i + 2] /= w
        status = _smallest_singular(rows, n, p, &sv)
        if status:
            return (status,) + _FAIL
        status = _horizon_fit(top_h, bot_h, n, line, &rms)
        if status:
            return (status,) + _FAIL

        pnorm = sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        if fabs(p[2]) <= INFINITY_RATIO * pnorm:
            return (7,) + _FAIL
        if fabs(line[2]) <= INFINITY_RATIO * hypot(line[0], line[1]):
            return (8,) + _FAIL
        rx = (p[0] * line[2]) / (line[0] * p[2])
        ry = (p[1] * line[2]) / (line[1] * p[2])
        if fx_eq_fy:
            rx = 0.5 * (rx + ry)
            ry = rx
        if not isfinite(rx) or not isfinite(ry) or rx <= 0.0 or ry <= 0.0:
            return (4,) + _FAIL
        fx = sqrt(rx)
        fy = sqrt(ry)

        status = _scaled_depths(top_h, bot_h, n, p, h, lam_t, lam_b)
        if status:
            return (status,) + _FAIL
        normal = np.empty(3)
        xb = np.empty((n, 3))
        xt = np.empty((n, 3))
        status = _finalize(
            top, bot, p, fx, fy, h, lam_t, lam_b, n, normal, xb, xt, &rho, &mu
        )
        if status:
            return (status,) + _FAIL
        lam_t_arr = np.empty(n)
        lam_b_arr = np.empty(n)
        for i in range(n):
            lam_t_arr[i] = lam_t[i]
            lam_b_arr[i] = lam_b[i]
        p_arr = np.array([p[0], p[1], p[2]])
        return (0, fx, fy, normal, rho, mu, lam_t_arr, lam_b_arr, xb, xt, p_arr, sv, rms)
    finally:
        free(top_h); free(bot_h); free(rows); free(lam_t); free(lam_b)
