# cython: language_level=3
"""Compiled implementation of the numeric kernels.

Mirrors robustfair._kernels._core_py operation for operation; keep the two
in sync.  The pure version is the reference; this one exists to make the
hot loops (envelope descent, profile golden sections, the saddle inner
loop) cheap enough for large sweeps.
"""

import numpy as np

cimport cython
from libc.math cimport sqrt

cdef double _INVPHI = (sqrt(5.0) - 1.0) / 2.0
cdef int _GOLDEN_ITERS = 80
cdef double _TINY = 1e-300

VARIANT_INFLATE = 0
VARIANT_KINK_G2 = 1
VARIANT_KINK_G1 = 2


# ---------------------------------------------------------------------------
# Max-of-quadratics minimization (shared fallback engine)
# ---------------------------------------------------------------------------


@cython.boundscheck(False)
@cython.wraparound(False)
cdef double _quad_value(const double[:, :, :] m_stack, const double[:, :] e_stack,
                        const double[:] k_stack, const double[:] b, int k, int p) noexcept nogil:
    cdef double acc = k_stack[k]
    cdef double row
    cdef int i, j
    for i in range(p):
        row = 0.0
        for j in range(p):
            row += m_stack[k, i, j] * b[j]
        acc += b[i] * row - 2.0 * e_stack[k, i] * b[i]
    return acc


@cython.boundscheck(False)
@cython.wraparound(False)
def envelope_min_descent(m_stack, e_stack, k_stack, starts, n_iters, step_scale):
    """Minimize max_i (b' M_i b - 2 E_i' b + k_i) by multi-start subgradient descent.

    Same contract as the reference backend: normalized subgradient steps on a
    step_scale / sqrt(iter + 1) schedule, best iterate over all starts and
    iterations wins.  Returns (beta, value, branch).
    """
    cdef const double[:, :, :] ms = np.ascontiguousarray(m_stack, dtype=np.float64)
    cdef const double[:, :] es = np.ascontiguousarray(e_stack, dtype=np.float64)
    cdef const double[:] ks = np.ascontiguousarray(k_stack, dtype=np.float64)
    b_arr = np.array(starts, dtype=np.float64, copy=True)
    cdef double[:, :] b = b_arr
    cdef int n_starts = b_arr.shape[0]
    cdef int p = b_arr.shape[1]
    cdef int n_branches = ms.shape[0]
    cdef long long total_iters = int(n_iters)
    cdef double scale = float(step_scale)

    best_val_arr = np.full(n_starts, np.inf)
    best_beta_arr = b_arr.copy()
    best_branch_arr = np.zeros(n_starts, dtype=np.int64)
    cdef double[:] best_val = best_val_arr
    cdef double[:, :] best_beta = best_beta_arr
    cdef long long[:] best_branch = best_branch_arr

    grad_arr = np.zeros(p, dtype=np.float64)
    cdef double[:] grad = grad_arr

    cdef long long it
    cdef int s, k, i, j, active
    cdef double cur, val, gnorm, step, factor, row

    with nogil:
        for it in range(total_iters + 1):
            for s in range(n_starts):
                active = 0
                cur = _quad_value(ms, es, ks, b[s], 0, p)
                for k in range(1, n_branches):
                    val = _quad_value(ms, es, ks, b[s], k, p)
                    if val > cur:
                        cur = val
                        active = k
                if cur < best_val[s]:
                    best_val[s] = cur
                    best_branch[s] = active
                    for i in range(p):
                        best_beta[s, i] = b[s, i]
                if it == total_iters:
                    continue
                gnorm = 0.0
                for i in range(p):
                    row = 0.0
                    for j in range(p):
                        row += ms[active, i, j] * b[s, j]
                    grad[i] = 2.0 * (row - es[active, i])
                    gnorm += grad[i] * grad[i]
                gnorm = sqrt(gnorm)
                step = scale / sqrt(it + 1.0)
                if gnorm > _TINY:
                    factor = step / gnorm
                    for i in range(p):
                        b[s, i] -= factor * grad[i]

    cdef int winner = 0
    cdef double best = best_val[0]
    for s in range(1, n_starts):
        if best_val[s] < best:
            best = best_val[s]
            winner = s
    return best_beta_arr[winner].copy(), float(best_val[winner]), int(best_branch[winner])


# ---------------------------------------------------------------------------
# Rank-one attack profiles
# ---------------------------------------------------------------------------


cdef double _g_value(double t, double r1, double r2, double bn, double eta,
                     double cg, double dg) noexcept nogil:
    cdef double s = sqrt(max(eta * eta - t * t, 0.0))
    cdef double first = cg * (r1 + t * bn) * (r1 + t * bn)
    cdef double w
    if dg >= 0.0:
        w = r2 + s * bn
        return first + dg * w * w
    w = r2 - s * bn
    if w < 0.0:
        w = 0.0
    return first + dg * w * w


cdef double _h_value(double t, double r1, double r2, double bn, double eta,
                     double ch, double dh) noexcept nogil:
    cdef double s = sqrt(max(eta * eta - t * t, 0.0))
    cdef double second = dh * (r2 + s * bn) * (r2 + s * bn)
    cdef double w
    if ch >= 0.0:
        w = r1 + t * bn
        return second + ch * w * w
    w = r1 - t * bn
    if w < 0.0:
        w = 0.0
    return second + ch * w * w


cdef double _golden_g(double lo, double hi, double r1, double r2, double bn,
                      double eta, double cg, double dg) noexcept nogil:
    cdef double a = lo
    cdef double b = hi
    cdef double h, c, d
    cdef int i
    for i in range(_GOLDEN_ITERS):
        h = b - a
        c = b - _INVPHI * h
        d = a + _INVPHI * h
        if _g_value(c, r1, r2, bn, eta, cg, dg) >= _g_value(d, r1, r2, bn, eta, cg, dg):
            b = d
        else:
            a = c
    return 0.5 * (a + b)


cdef double _golden_h(double lo, double hi, double r1, double r2, double bn,
                      double eta, double ch, double dh) noexcept nogil:
    cdef double a = lo
    cdef double b = hi
    cdef double h, c, d
    cdef int i
    for i in range(_GOLDEN_ITERS):
        h = b - a
        c = b - _INVPHI * h
        d = a + _INVPHI * h
        if _h_value(c, r1, r2, bn, eta, ch, dh) >= _h_value(d, r1, r2, bn, eta, ch, dh):
            b = d
        else:
            a = c
    return 0.5 * (a + b)


@cython.boundscheck(False)
@cython.wraparound(False)
def profile_best_t_batch(r1, r2, bn, eta, cg, dg, ch, dh):
    """Maximize both rank-one profiles over the group-1 budget split.

    Same contract as the reference backend: returns (side, branch, t, value)
    arrays with side 0/1 for g/h (ties to g), branch 0 inflate-both, 1
    residual-zeroing, 2 partial-deflation, pinned to 0 for zero models.
    """
    r1_arr = np.ascontiguousarray(r1, dtype=np.float64)
    r2_arr = np.ascontiguousarray(r2, dtype=np.float64)
    bn_arr = np.ascontiguousarray(bn, dtype=np.float64)
    cdef const double[:] r1v = r1_arr
    cdef const double[:] r2v = r2_arr
    cdef const double[:] bnv = bn_arr
    cdef int n = r1_arr.shape[0]
    cdef double eta_f = float(eta)
    cdef double cg_f = float(cg)
    cdef double dg_f = float(dg)
    cdef double ch_f = float(ch)
    cdef double dh_f = float(dh)

    side_arr = np.zeros(n, dtype=np.int64)
    branch_arr = np.zeros(n, dtype=np.int64)
    t_arr = np.zeros(n, dtype=np.float64)
    value_arr = np.zeros(n, dtype=np.float64)
    cdef long long[:] side = side_arr
    cdef long long[:] branch = branch_arr
    cdef double[:] t_star = t_arr
    cdef double[:] value = value_arr

    cdef int i, j, n_cand, best_j
    cdef double a, b, c, t0, safe, v, best_v, tg, vg, th, vh, st, slack
    cdef double cand[4]

    with nogil:
        for i in range(n):
            a = r1v[i]
            b = r2v[i]
            c = bnv[i]
            safe = c if c > 0.0 else 1.0

            # --- g side ---
            if dg_f >= 0.0:
                cand[0] = 0.0
                cand[1] = eta_f
                cand[2] = _golden_g(0.0, eta_f, a, b, c, eta_f, cg_f, dg_f)
                n_cand = 3
            else:
                t0 = sqrt(max(eta_f * eta_f - (b / safe) * (b / safe), 0.0))
                if c <= 0.0:
                    t0 = 0.0
                cand[0] = 0.0
                cand[1] = t0
                cand[2] = eta_f
                cand[3] = _golden_g(t0, eta_f, a, b, c, eta_f, cg_f, dg_f)
                n_cand = 4
            best_j = 0
            best_v = _g_value(cand[0], a, b, c, eta_f, cg_f, dg_f)
            for j in range(1, n_cand):
                v = _g_value(cand[j], a, b, c, eta_f, cg_f, dg_f)
                if v > best_v:
                    best_v = v
                    best_j = j
            tg = cand[best_j]
            vg = best_v

            # --- h side ---
            if ch_f >= 0.0:
                cand[0] = 0.0
                cand[1] = eta_f
                cand[2] = _golden_h(0.0, eta_f, a, b, c, eta_f, ch_f, dh_f)
                n_cand = 3
            else:
                t0 = a / safe
                if t0 > eta_f:
                    t0 = eta_f
                if c <= 0.0:
                    t0 = 0.0
                cand[0] = 0.0
                cand[1] = t0
                cand[2] = eta_f
                cand[3] = _golden_h(0.0, t0, a, b, c, eta_f, ch_f, dh_f)
                n_cand = 4
            best_j = 0
            best_v = _h_value(cand[0], a, b, c, eta_f, ch_f, dh_f)
            for j in range(1, n_cand):
                v = _h_value(cand[j], a, b, c, eta_f, ch_f, dh_f)
                if v > best_v:
                    best_v = v
                    best_j = j
            th = cand[best_j]
            vh = best_v

            if vh > vg:
                side[i] = 1
                t_star[i] = th
                value[i] = vh
            else:
                side[i] = 0
                t_star[i] = tg
                value[i] = vg

            st = sqrt(max(eta_f * eta_f - t_star[i] * t_star[i], 0.0))
            slack = 1e-12 * (1.0 + (a if a >= 0.0 else -a)
                             + (b if b >= 0.0 else -b)
                             + eta_f * (c if c >= 0.0 else -c))
            branch[i] = 0
            if side[i] == 0 and dg_f < 0.0:
                branch[i] = 1 if b <= st * c + slack else 2
            if side[i] == 1 and ch_f < 0.0:
                branch[i] = 1 if a <= t_star[i] * c + slack else 2
            if c <= 0.0:
                branch[i] = 0
                t_star[i] = 0.0

    return side_arr, branch_arr, t_arr, value_arr


# ---------------------------------------------------------------------------
# Rank-one defense saddle pieces
# ---------------------------------------------------------------------------


@cython.boundscheck(False)
@cython.wraparound(False)
cdef double _piece_core(const double[:, :] x1, const double[:] y1,
                        const double[:, :] x2, const double[:] y2,
                        double c, double d, int variant, double eta,
                        const double[:] beta, double t,
                        double[:] gb, double* gt_out) noexcept nogil:
    """Shared value/gradient evaluation; writes grad_beta into gb."""
    cdef int n1 = x1.shape[0]
    cdef int n2 = x2.shape[0]
    cdef int p = beta.shape[0]
    cdef int i, j
    cdef double r1 = 0.0, r2 = 0.0, bn = 0.0
    cdef double acc, s, dsdt, u, v, w, value, coef1, coef2, coefb

    # Residual norms.  Gradients of the norms reuse the residuals, so the
    # matrix-vector products are done in two passes over each group.
    for i in range(p):
        gb[i] = 0.0
        bn += beta[i] * beta[i]
    bn = sqrt(bn)
    s = sqrt(max(eta * eta - t * t, 0.0))
    dsdt = -t / max(s, 1e-9)

    for i in range(n1):
        acc = y1[i]
        for j in range(p):
            acc -= x1[i, j] * beta[j]
        r1 += acc * acc
    r1 = sqrt(r1)
    for i in range(n2):
        acc = y2[i]
        for j in range(p):
            acc -= x2[i, j] * beta[j]
        r2 += acc * acc
    r2 = sqrt(r2)

    # Piece value and the scalar weights multiplying grad(r1), grad(r2),
    # grad(bn) inside grad_beta, plus the t derivative.
    coef1 = 0.0
    coef2 = 0.0
    coefb = 0.0
    if variant == 0:
        u = r1 + t * bn
        v = r2 + s * bn
        value = c * u * u + d * v * v
        coef1 = 2.0 * c * u
        coef2 = 2.0 * d * v
        coefb = 2.0 * c * u * t + 2.0 * d * v * s
        gt_out[0] = 2.0 * c * u * bn + 2.0 * d * v * bn * dsdt
    elif variant == 1:
        u = r1 + t * bn
        w = r2 - s * bn
        value = c * u * u
        coef1 = 2.0 * c * u
        coefb = 2.0 * c * u * t
        gt_out[0] = 2.0 * c * u * bn
        if w > 0.0:
            value += d * w * w
            coef2 = 2.0 * d * w
            coefb -= 2.0 * d * w * s
            gt_out[0] += 2.0 * d * w * (-bn * dsdt)
    else:
        w = r1 - t * bn
        v = r2 + s * bn
        value = d * v * v
        coef2 = 2.0 * d * v
        coefb = 2.0 * d * v * s
        gt_out[0] = 2.0 * d * v * bn * dsdt
        if w > 0.0:
            value += c * w * w
            coef1 = 2.0 * c * w
            coefb -= 2.0 * c * w * t
            gt_out[0] += 2.0 * c * w * (-bn)

    # grad_beta = coef1*grad(r1) + coef2*grad(r2) + coefb*grad(bn), with
    # grad(r_g) = -X_g' res_g / r_g and grad(bn) = beta/bn (0 at kinks).
    if coef1 != 0.0 and r1 > _TINY:
        for i in range(n1):
            acc = y1[i]
            for j in range(p):
                acc -= x1[i, j] * beta[j]
            acc = coef1 * (-acc) / r1
            for j in range(p):
                gb[j] += acc * x1[i, j]
    if coef2 != 0.0 and r2 > _TINY:
        for i in range(n2):
            acc = y2[i]
            for j in range(p):
                acc -= x2[i, j] * beta[j]
            acc = coef2 * (-acc) / r2
            for j in range(p):
                gb[j] += acc * x2[i, j]
    if coefb != 0.0 and bn > _TINY:
        for j in range(p):
            gb[j] += coefb * beta[j] / bn
    return value


def piece_value_grad(x1, y1, x2, y2, c, d, variant, eta, beta, t):
    """Value and gradients of one smooth saddle piece at (beta, t).

    Same contract as the reference backend: returns (value, grad_beta,
    grad_t) with subgradient 0 at kinks and the derivative of
    s = sqrt(eta^2 - t^2) clamped near t = eta.
    """
    if int(variant) not in (0, 1, 2):
        raise ValueError(f"unknown saddle piece variant {variant}")
    x1_arr = np.ascontiguousarray(x1, dtype=np.float64)
    y1_arr = np.ascontiguousarray(y1, dtype=np.float64)
    x2_arr = np.ascontiguousarray(x2, dtype=np.float64)
    y2_arr = np.ascontiguousarray(y2, dtype=np.float64)
    beta_arr = np.ascontiguousarray(beta, dtype=np.float64)
    gb_arr = np.zeros(beta_arr.shape[0], dtype=np.float64)
    cdef double gt = 0.0
    cdef double value = _piece_core(
        x1_arr, y1_arr, x2_arr, y2_arr, float(c), float(d), int(variant),
        float(eta), beta_arr, float(t), gb_arr, &gt,
    )
    return float(value), gb_arr, float(gt)


@cython.boundscheck(False)
@cython.wraparound(False)
def gda_saddle(x1, y1, x2, y2, c, d, variant, eta, beta_c, t_c, rho, b_beta,
               step, max_iter, tol):
    """Projected gradient descent-ascent on one proximally regularized piece.

    Same contract as the reference backend: simultaneous projected steps on
    piece(beta, t) + rho*||beta - beta_c||^2 - rho*(t - t_c)^2, stopping at
    projected-gradient residual `tol` or after `max_iter` iterations.
    Returns (beta, t, iterations, residual).
    """
    if int(variant) not in (0, 1, 2):
        raise ValueError(f"unknown saddle piece variant {variant}")
    x1_arr = np.ascontiguousarray(x1, dtype=np.float64)
    y1_arr = np.ascontiguousarray(y1, dtype=np.float64)
    x2_arr = np.ascontiguousarray(x2, dtype=np.float64)
    y2_arr = np.ascontiguousarray(y2, dtype=np.float64)
    center_arr = np.ascontiguousarray(beta_c, dtype=np.float64)
    beta_arr = center_arr.copy()
    cdef const double[:, :] x1v = x1_arr
    cdef const double[:] y1v = y1_arr
    cdef const double[:, :] x2v = x2_arr
    cdef const double[:] y2v = y2_arr
    cdef const double[:] center = center_arr
    cdef double[:] beta = beta_arr
    cdef int p = beta_arr.shape[0]
    new_arr = np.zeros(p, dtype=np.float64)
    gb_arr = np.zeros(p, dtype=np.float64)
    cdef double[:] new_beta = new_arr
    cdef double[:] gb = gb_arr

    cdef double c_f = float(c)
    cdef double d_f = float(d)
    cdef int var = int(variant)
    cdef double eta_f = float(eta)
    cdef double t = float(t_c)
    cdef double tc_f = float(t_c)
    cdef double rho_f = float(rho)
    cdef double radius = float(b_beta)
    cdef double step_f = float(step)
    cdef long long cap = int(max_iter)
    cdef double tol_f = float(tol)

    cdef double residual = np.inf
    cdef long long it = 0
    cdef double gt, norm, new_t, move
    cdef int i

    with nogil:
        for it in range(1, cap + 1):
            _piece_core(x1v, y1v, x2v, y2v, c_f, d_f, var, eta_f, beta, t, gb, &gt)
            norm = 0.0
            for i in range(p):
                new_beta[i] = beta[i] - step_f * (gb[i] + 2.0 * rho_f * (beta[i] - center[i]))
                norm += new_beta[i] * new_beta[i]
            norm = sqrt(norm)
            if norm > radius:
                for i in range(p):
                    new_beta[i] *= radius / norm
            new_t = t + step_f * (gt - 2.0 * rho_f * (t - tc_f))
            if new_t < 0.0:
                new_t = 0.0
            elif new_t > eta_f:
                new_t = eta_f
            move = (new_t - t) * (new_t - t)
            for i in range(p):
                move += (new_beta[i] - beta[i]) * (new_beta[i] - beta[i])
                beta[i] = new_beta[i]
            residual = sqrt(move) / step_f
            t = new_t
            if residual <= tol_f:
                break

    return beta_arr, float(t), int(it), float(residual)
