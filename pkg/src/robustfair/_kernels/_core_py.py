"""Pure-NumPy reference implementation of the numeric kernels.

The compiled backend mirrors these routines operation for operation; keep
the two in sync.  All functions are deterministic given their inputs.
"""

from __future__ import annotations

import numpy as np

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_ITERS = 80
_TINY = 1e-300

# Saddle piece variants: 0 inflates both group residuals, 1 carries the
# max{0, r2 - s*B} kink on the group-2 term, 2 the max{0, r1 - t*B} kink on
# the group-1 term.
VARIANT_INFLATE = 0
VARIANT_KINK_G2 = 1
VARIANT_KINK_G1 = 2


# ---------------------------------------------------------------------------
# Max-of-quadratics minimization (shared fallback engine)
# ---------------------------------------------------------------------------


def envelope_min_descent(m_stack, e_stack, k_stack, starts, n_iters, step_scale):
    """Minimize max_i (b' M_i b - 2 E_i' b + k_i) by multi-start subgradient descent.

    Normalized subgradient steps with a diminishing schedule
    step_scale / sqrt(iter + 1); the best iterate over all starts and
    iterations is returned.

    Parameters
    ----------
    m_stack : (K, p, p) array of symmetric matrices.
    e_stack : (K, p) array.
    k_stack : (K,) array.
    starts : (S, p) array of initial points.
    n_iters : int
    step_scale : float

    Returns
    -------
    (beta, value, branch) with branch the active index at the best iterate.
    """
    m_stack = np.asarray(m_stack, dtype=float)
    e_stack = np.asarray(e_stack, dtype=float)
    k_stack = np.asarray(k_stack, dtype=float)
    b = np.array(starts, dtype=float, copy=True)
    n_starts = b.shape[0]

    best_val = np.full(n_starts, np.inf)
    best_beta = b.copy()
    best_branch = np.zeros(n_starts, dtype=np.int64)

    for it in range(int(n_iters)):
        vals = np.einsum("sp,kpq,sq->sk", b, m_stack, b) - 2.0 * b @ e_stack.T
        vals += k_stack
        active = np.argmax(vals, axis=1)
        cur = vals[np.arange(n_starts), active]
        improved = cur < best_val
        if np.any(improved):
            best_val[improved] = cur[improved]
            best_beta[improved] = b[improved]
            best_branch[improved] = active[improved]
        grad = 2.0 * (
            np.einsum("spq,sq->sp", m_stack[active], b) - e_stack[active]
        )
        gnorm = np.sqrt(np.sum(grad * grad, axis=1))
        step = step_scale / np.sqrt(it + 1.0)
        scale = np.where(gnorm > _TINY, step / np.maximum(gnorm, _TINY), 0.0)
        b -= scale[:, None] * grad

    vals = np.einsum("sp,kpq,sq->sk", b, m_stack, b) - 2.0 * b @ e_stack.T
    vals += k_stack
    active = np.argmax(vals, axis=1)
    cur = vals[np.arange(n_starts), active]
    improved = cur < best_val
    best_val[improved] = cur[improved]
    best_beta[improved] = b[improved]
    best_branch[improved] = active[improved]

    winner = int(np.argmin(best_val))
    return best_beta[winner].copy(), float(best_val[winner]), int(best_branch[winner])


# ---------------------------------------------------------------------------
# Rank-one attack profiles
# ---------------------------------------------------------------------------


def _golden_max(f, lo, hi):
    """Vectorized golden-section maximization of f over [lo, hi] elementwise."""
    a = np.array(lo, dtype=float, copy=True)
    b = np.array(hi, dtype=float, copy=True)
    for _ in range(_GOLDEN_ITERS):
        h = b - a
        c = b - _INVPHI * h
        d = a + _INVPHI * h
        keep_left = f(c) >= f(d)
        b = np.where(keep_left, d, b)
        a = np.where(keep_left, a, c)
    return 0.5 * (a + b)


def _g_value(t, r1, r2, bn, eta, cg, dg):
    """Worst g-side value given group-1 budget split t, elementwise."""
    s = np.sqrt(np.maximum(eta * eta - t * t, 0.0))
    first = cg * (r1 + t * bn) ** 2
    if dg >= 0.0:
        return first + dg * (r2 + s * bn) ** 2
    return first + dg * np.maximum(r2 - s * bn, 0.0) ** 2


def _h_value(t, r1, r2, bn, eta, ch, dh):
    """Worst h-side value given group-1 budget split t, elementwise."""
    s = np.sqrt(np.maximum(eta * eta - t * t, 0.0))
    second = dh * (r2 + s * bn) ** 2
    if ch >= 0.0:
        return second + ch * (r1 + t * bn) ** 2
    return second + ch * np.maximum(r1 - t * bn, 0.0) ** 2


def profile_best_t_batch(r1, r2, bn, eta, cg, dg, ch, dh):
    """Maximize both rank-one profiles over the group-1 budget split.

    Parameters
    ----------
    r1, r2, bn : (S,) arrays
        Group residual norms and ||beta|| per model.
    eta : float
        Total attack budget.
    cg, dg, ch, dh : float
        Rank-one coefficient table.

    Returns
    -------
    (side, branch, t, value) arrays of shape (S,).  side is 0 for the g
    profile and 1 for h (ties go to g); branch is 0 for the inflate-both
    piece, 1 for the residual-zeroing piece, 2 for the partial-deflation
    piece; t is the maximizing group-1 split and value the attained maximum.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    bn = np.asarray(bn, dtype=float)
    eta = float(eta)
    n = r1.shape[0]
    zeros = np.zeros(n)
    etas = np.full(n, eta)
    pos = bn > 0.0
    safe_bn = np.where(pos, bn, 1.0)

    def gval(t):
        return _g_value(t, r1, r2, bn, eta, cg, dg)

    def hval(t):
        return _h_value(t, r1, r2, bn, eta, ch, dh)

    # Candidate splits are stacked along a leading axis of shape (k, n) so
    # the per-model residual arrays broadcast across candidates.

    # --- g side ---
    if dg >= 0.0:
        cand_g = np.stack([zeros, etas, _golden_max(gval, zeros, etas)], axis=0)
    else:
        # Kink where the group-2 residual is exactly zeroed by the leftover
        # budget; below it the deflation term vanishes and the profile grows
        # monotonically, above it the smooth partial-deflation piece applies.
        t0 = np.sqrt(np.maximum(eta * eta - (r2 / safe_bn) ** 2, 0.0))
        t0 = np.where(pos, t0, 0.0)
        cand_g = np.stack(
            [zeros, t0, etas, _golden_max(gval, t0, etas)], axis=0
        )
    vg = gval(cand_g)
    ig = np.argmax(vg, axis=0)
    t_g = cand_g[ig, np.arange(n)]
    val_g = vg[ig, np.arange(n)]

    # --- h side ---
    if ch >= 0.0:
        cand_h = np.stack([zeros, etas, _golden_max(hval, zeros, etas)], axis=0)
    else:
        t0 = np.where(pos, np.minimum(r1 / safe_bn, eta), 0.0)
        cand_h = np.stack(
            [zeros, t0, etas, _golden_max(hval, zeros, t0)], axis=0
        )
    vh = hval(cand_h)
    ih = np.argmax(vh, axis=0)
    t_h = cand_h[ih, np.arange(n)]
    val_h = vh[ih, np.arange(n)]

    side = (val_h > val_g).astype(np.int64)
    t_star = np.where(side == 1, t_h, t_g)
    value = np.where(side == 1, val_h, val_g)

    # Branch tags at the winning split.
    s_star = np.sqrt(np.maximum(eta * eta - t_star * t_star, 0.0))
    slack = 1e-12 * (1.0 + np.abs(r1) + np.abs(r2) + eta * np.abs(bn))
    branch = np.zeros(n, dtype=np.int64)
    if dg < 0.0:
        g_zeroed = r2 <= s_star * bn + slack
        branch = np.where(side == 0, np.where(g_zeroed, 1, 2), branch)
    if ch < 0.0:
        h_zeroed = r1 <= t_star * bn + slack
        branch = np.where(side == 1, np.where(h_zeroed, 1, 2), branch)

    # A zero model is immune to feature perturbations: the profiles are
    # constant in t and the tags above are meaningless, so pin them.
    branch = np.where(pos, branch, 0)
    t_star = np.where(pos, t_star, 0.0)
    return side, branch, t_star, value


# ---------------------------------------------------------------------------
# Rank-one defense saddle pieces
# ---------------------------------------------------------------------------


def piece_value_grad(x1, y1, x2, y2, c, d, variant, eta, beta, t):
    """Value and gradients of one smooth saddle piece at (beta, t).

    Returns (value, grad_beta, grad_t).  Kinks (zero residuals, zero beta,
    the max{0,.} corners) take subgradient 0; the derivative of
    s = sqrt(eta^2 - t^2) is clamped near t = eta.
    """
    beta = np.asarray(beta, dtype=float)
    res1 = y1 - x1 @ beta
    res2 = y2 - x2 @ beta
    r1 = float(np.linalg.norm(res1))
    r2 = float(np.linalg.norm(res2))
    bn = float(np.linalg.norm(beta))
    s = np.sqrt(max(eta * eta - t * t, 0.0))

    g_r1 = -(x1.T @ res1) / r1 if r1 > _TINY else np.zeros_like(beta)
    g_r2 = -(x2.T @ res2) / r2 if r2 > _TINY else np.zeros_like(beta)
    g_bn = beta / bn if bn > _TINY else np.zeros_like(beta)
    dsdt = -t / max(s, 1e-9)

    if variant == VARIANT_INFLATE:
        u = r1 + t * bn
        v = r2 + s * bn
        value = c * u * u + d * v * v
        gb = 2.0 * c * u * (g_r1 + t * g_bn) + 2.0 * d * v * (g_r2 + s * g_bn)
        gt = 2.0 * c * u * bn + 2.0 * d * v * bn * dsdt
    elif variant == VARIANT_KINK_G2:
        u = r1 + t * bn
        w = r2 - s * bn
        value = c * u * u + (d * w * w if w > 0.0 else 0.0)
        gb = 2.0 * c * u * (g_r1 + t * g_bn)
        gt = 2.0 * c * u * bn
        if w > 0.0:
            gb = gb + 2.0 * d * w * (g_r2 - s * g_bn)
            gt += 2.0 * d * w * (-bn * dsdt)
    elif variant == VARIANT_KINK_G1:
        w = r1 - t * bn
        v = r2 + s * bn
        value = d * v * v + (c * w * w if w > 0.0 else 0.0)
        gb = 2.0 * d * v * (g_r2 + s * g_bn)
        gt = 2.0 * d * v * bn * dsdt
        if w > 0.0:
            gb = gb + 2.0 * c * w * (g_r1 - t * g_bn)
            gt += 2.0 * c * w * (-bn)
    else:
        raise ValueError(f"unknown saddle piece variant {variant}")
    return float(value), gb, float(gt)


def gda_saddle(
    x1,
    y1,
    x2,
    y2,
    c,
    d,
    variant,
    eta,
    beta_c,
    t_c,
    rho,
    b_beta,
    step,
    max_iter,
    tol,
):
    """Projected gradient descent-ascent on one proximally regularized piece.

    Solves min over beta in the radius-b_beta ball, max over t in [0, eta] of

        piece(beta, t) + rho*||beta - beta_c||^2 - rho*(t - t_c)^2

    with simultaneous projected steps of fixed size `step`.  Terminates when
    the projected-gradient residual ||z+ - z|| / step drops to `tol` or after
    `max_iter` iterations.

    Returns (beta, t, iterations, residual).
    """
    beta = np.array(beta_c, dtype=float, copy=True)
    t = float(t_c)
    residual = np.inf
    it = 0
    for it in range(1, int(max_iter) + 1):
        _, gb, gt = piece_value_grad(x1, y1, x2, y2, c, d, variant, eta, beta, t)
        new_beta = beta - step * (gb + 2.0 * rho * (beta - beta_c))
        norm = float(np.linalg.norm(new_beta))
        if norm > b_beta:
            new_beta *= b_beta / norm
        new_t = t + step * (gt - 2.0 * rho * (t - t_c))
        new_t = min(max(new_t, 0.0), eta)
        residual = float(
            np.sqrt(np.sum((new_beta - beta) ** 2) + (new_t - t) ** 2) / step
        )
        beta = new_beta
        t = new_t
        if residual <= tol:
            break
    return beta, t, it, residual
