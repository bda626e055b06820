"""Numeric kernels: correctness of both backends and their agreement."""

from __future__ import annotations

import importlib.util

import numpy as np
import pytest

import oracles
from robustfair import _kernels
from robustfair._kernels import (
    VARIANT_INFLATE,
    VARIANT_KINK_G1,
    VARIANT_KINK_G2,
    envelope_min_descent,
    gda_saddle,
    piece_value_grad,
    profile_best_t_batch,
)
from robustfair._kernels import _core_py

_HAS_COMPILED = (
    importlib.util.find_spec("robustfair._kernels._core") is not None
)


def _piece_problem(seed=5, y2_scale=3.0):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal((4, 3))
    y1 = rng.standard_normal(4)
    x2 = rng.standard_normal((5, 3))
    y2 = y2_scale * rng.standard_normal(5)
    beta = rng.standard_normal(3)
    return x1, y1, x2, y2, beta


def test_backend_name_is_reported():
    assert _kernels.BACKEND_NAME in ("compiled", "python")
    if _HAS_COMPILED:
        assert _kernels.BACKEND_NAME == "compiled"


def test_envelope_recovers_single_quadratic_minimum():
    rng = np.random.default_rng(0)
    center = rng.standard_normal(3)
    m_stack = np.eye(3)[None]
    e_stack = center[None]
    k_stack = np.array([float(center @ center)])
    starts = np.vstack([np.zeros(3), rng.standard_normal((6, 3))])
    beta, value, branch = envelope_min_descent(
        m_stack, e_stack, k_stack, starts, 800, 1.0
    )
    assert abs(value) <= 1e-10
    assert np.linalg.norm(beta - center) <= 1e-8
    assert branch == 0


def test_envelope_balances_two_quadratics():
    a = 1.5
    m_stack = np.array([[[1.0]], [[1.0]]])
    e_stack = np.array([[a], [-a]])
    k_stack = np.array([a * a, a * a])
    starts = np.array([[3.0], [-2.0]])
    beta, value, branch = envelope_min_descent(
        m_stack, e_stack, k_stack, starts, 2000, 1.0
    )
    assert value == pytest.approx(a * a, rel=1e-10)
    assert abs(beta[0]) <= 1e-8
    assert branch in (0, 1)


def test_envelope_value_consistent_with_returned_point():
    rng = np.random.default_rng(3)
    m_stack = np.stack([np.eye(2), 2.0 * np.eye(2)])
    e_stack = rng.standard_normal((2, 2))
    k_stack = rng.standard_normal(2)
    starts = rng.standard_normal((4, 2))
    beta, value, branch = envelope_min_descent(
        m_stack, e_stack, k_stack, starts, 300, 0.8
    )
    vals = [
        beta @ m_stack[i] @ beta - 2.0 * e_stack[i] @ beta + k_stack[i]
        for i in range(2)
    ]
    assert value == pytest.approx(max(vals), rel=1e-12)
    assert vals[branch] == pytest.approx(max(vals), rel=1e-12)


def test_profile_dominates_dense_grid():
    rng = np.random.default_rng(7)
    for _ in range(40):
        r1, r2, bn = rng.uniform(0.0, 3.0, 3)
        eta = float(rng.uniform(0.3, 3.0))
        cg, dh = rng.uniform(0.01, 1.0, 2)
        dg, ch = rng.uniform(-1.0, 1.0, 2)
        side, branch, t, val = profile_best_t_batch(
            np.array([r1]), np.array([r2]), np.array([bn]), eta, cg, dg, ch, dh
        )
        ts = np.linspace(0.0, eta, 20001)
        grid = np.maximum(
            _grid_profile(ts, r1, r2, bn, eta, cg, dg, "g"),
            _grid_profile(ts, r1, r2, bn, eta, ch, dh, "h"),
        )
        best = float(grid.max())
        scale = 1.0 + abs(best)
        assert val[0] >= best - 1e-9 * scale
        assert val[0] <= best + 1e-3 * scale
        attained = max(
            float(_grid_profile(np.array([t[0]]), r1, r2, bn, eta, cg, dg, "g")[0]),
            float(_grid_profile(np.array([t[0]]), r1, r2, bn, eta, ch, dh, "h")[0]),
        )
        assert attained == pytest.approx(val[0], abs=1e-12 * scale)


def _grid_profile(ts, r1, r2, bn, eta, first, second, which):
    ss = np.sqrt(np.maximum(eta * eta - ts * ts, 0.0))
    if which == "g":
        lead = first * (r1 + ts * bn) ** 2
        if second >= 0.0:
            tail = second * (r2 + ss * bn) ** 2
        else:
            tail = second * np.maximum(r2 - ss * bn, 0.0) ** 2
    else:
        tail = second * (r2 + ss * bn) ** 2
        if first >= 0.0:
            lead = first * (r1 + ts * bn) ** 2
        else:
            lead = first * np.maximum(r1 - ts * bn, 0.0) ** 2
    return lead + tail


def test_profile_branch_tags():
    # Zero group-2 residual with a negative d: the whole budget lands on
    # group 1 and the leftover trivially covers r2.
    side, branch, t, val = profile_best_t_batch(
        np.array([1.0]), np.array([0.0]), np.array([1.0]), 1.0,
        50.0, -0.5, 0.01, 0.01,
    )
    assert side[0] == 0
    assert branch[0] == 1
    assert t[0] == pytest.approx(1.0, abs=1e-9)
    assert val[0] == pytest.approx(50.0 * 4.0, rel=1e-9)

    # Group-2 residual too large to zero out: partial deflation.
    side, branch, t, val = profile_best_t_batch(
        np.array([1.0]), np.array([10.0]), np.array([1.0]), 1.0,
        50.0, -0.5, 0.01, 0.01,
    )
    assert side[0] == 0
    assert branch[0] == 2

    # Nonnegative coefficients never leave the inflate-both piece.
    side, branch, t, val = profile_best_t_batch(
        np.array([1.0]), np.array([2.0]), np.array([1.5]), 1.0,
        0.5, 0.25, 0.25, 0.5,
    )
    assert branch[0] == 0


def test_profile_zero_model_is_immune():
    r1, r2 = 1.3, 0.8
    side, branch, t, val = profile_best_t_batch(
        np.array([r1]), np.array([r2]), np.array([0.0]), 2.0,
        0.6, -0.3, -0.2, 0.7,
    )
    assert t[0] == 0.0
    assert branch[0] == 0
    want = max(0.6 * r1**2 - 0.3 * r2**2, -0.2 * r1**2 + 0.7 * r2**2)
    assert val[0] == pytest.approx(want, rel=1e-13)


def test_profile_batch_matches_single_calls():
    rng = np.random.default_rng(11)
    r1 = np.abs(rng.standard_normal(9))
    r2 = np.abs(rng.standard_normal(9))
    bn = np.abs(rng.standard_normal(9))
    bn[4] = 0.0
    args = (1.4, 0.8, -0.35, -0.15, 0.95)
    batch = profile_best_t_batch(r1, r2, bn, *args)
    for i in range(9):
        single = profile_best_t_batch(
            r1[i : i + 1], r2[i : i + 1], bn[i : i + 1], *args
        )
        assert single[0][0] == batch[0][i]
        assert single[1][0] == batch[1][i]
        assert single[2][0] == pytest.approx(batch[2][i], abs=1e-12)
        assert single[3][0] == pytest.approx(batch[3][i], rel=1e-13)


def test_piece_value_matches_closed_formula():
    x1, y1, x2, y2, beta = _piece_problem()
    c, d, eta, t = 0.4, -0.2, 1.5, 0.7
    r1 = float(np.linalg.norm(y1 - x1 @ beta))
    r2 = float(np.linalg.norm(y2 - x2 @ beta))
    bn = float(np.linalg.norm(beta))
    s = np.sqrt(eta * eta - t * t)

    val, _, _ = piece_value_grad(x1, y1, x2, y2, c, d, VARIANT_INFLATE, eta, beta, t)
    assert val == pytest.approx(c * (r1 + t * bn) ** 2 + d * (r2 + s * bn) ** 2, rel=1e-13)

    val, _, _ = piece_value_grad(x1, y1, x2, y2, c, d, VARIANT_KINK_G2, eta, beta, t)
    want = c * (r1 + t * bn) ** 2 + d * max(0.0, r2 - s * bn) ** 2
    assert val == pytest.approx(want, rel=1e-13)

    val, _, _ = piece_value_grad(x1, y1, x2, y2, c, d, VARIANT_KINK_G1, eta, beta, t)
    want = d * (r2 + s * bn) ** 2 + c * max(0.0, r1 - t * bn) ** 2
    assert val == pytest.approx(want, rel=1e-13)


def test_piece_gradients_match_finite_differences():
    x1, y1, x2, y2, beta = _piece_problem(seed=9, y2_scale=4.0)
    c, d, eta, t = 0.6, -0.3, 1.5, 0.6
    for variant in (VARIANT_INFLATE, VARIANT_KINK_G2, VARIANT_KINK_G1):
        val, gb, gt = piece_value_grad(x1, y1, x2, y2, c, d, variant, eta, beta, t)
        scale = 1.0 + abs(val)

        def fb(b, v=variant):
            return piece_value_grad(x1, y1, x2, y2, c, d, v, eta, b, t)[0]

        def ft(tt, v=variant):
            return piece_value_grad(x1, y1, x2, y2, c, d, v, eta, beta, float(tt))[0]

        fd_b = oracles.fd_gradient(fb, beta, h=1e-6)
        fd_t = (ft(t + 1e-6) - ft(t - 1e-6)) / 2e-6
        assert np.allclose(gb, fd_b, rtol=1e-5, atol=1e-6 * scale)
        assert gt == pytest.approx(fd_t, rel=1e-5, abs=1e-6 * scale)


def test_piece_rejects_unknown_variant():
    x1, y1, x2, y2, beta = _piece_problem()
    with pytest.raises(ValueError, match="variant"):
        piece_value_grad(x1, y1, x2, y2, 0.4, 0.2, 7, 1.5, beta, 0.5)


def test_gda_respects_both_feasible_sets():
    x1, y1, x2, y2, beta = _piece_problem(seed=2)
    out_beta, out_t, iters, _ = gda_saddle(
        x1, y1, x2, y2, 0.5, 0.4, VARIANT_INFLATE, 1.5,
        beta, 0.7, 1.0, 2.0, 1e3, 50, 0.0,
    )
    assert np.linalg.norm(out_beta) <= 2.0 * (1.0 + 1e-12)
    assert 0.0 <= out_t <= 1.5


def test_gda_converges_to_update_fixed_point():
    x1, y1, x2, y2, beta = _piece_problem(seed=5)
    c, d, eta, rho, b_beta, step, tol = 0.4, 0.2, 1.5, 5.0, 10.0, 1e-3, 1e-9
    out_beta, out_t, iters, residual = gda_saddle(
        x1, y1, x2, y2, c, d, VARIANT_INFLATE, eta,
        beta, 0.7, rho, b_beta, step, 20000, tol,
    )
    assert iters < 20000
    assert residual <= tol
    _, gb, gt = piece_value_grad(
        x1, y1, x2, y2, c, d, VARIANT_INFLATE, eta, out_beta, out_t
    )
    nb = out_beta - step * (gb + 2.0 * rho * (out_beta - beta))
    if np.linalg.norm(nb) > b_beta:
        nb *= b_beta / np.linalg.norm(nb)
    nt = min(max(out_t + step * (gt - 2.0 * rho * (out_t - 0.7)), 0.0), eta)
    manual = np.sqrt(np.sum((nb - out_beta) ** 2) + (nt - out_t) ** 2) / step
    assert manual <= 2.0 * tol


@pytest.mark.skipif(not _HAS_COMPILED, reason="compiled backend not built")
def test_backends_agree():
    from robustfair._kernels import _core

    rng = np.random.default_rng(13)

    center = rng.standard_normal(3)
    m_stack = np.stack([np.eye(3), 2.0 * np.eye(3)])
    e_stack = np.stack([center, -center])
    k_stack = np.array([float(center @ center), 1.0])
    starts = np.vstack([np.zeros(3), rng.standard_normal((5, 3))])
    got_c = _core.envelope_min_descent(m_stack, e_stack, k_stack, starts, 800, 1.0)
    got_p = _core_py.envelope_min_descent(m_stack, e_stack, k_stack, starts, 800, 1.0)
    assert np.allclose(got_c[0], got_p[0], atol=1e-10)
    assert got_c[1] == pytest.approx(got_p[1], abs=1e-12)
    assert got_c[2] == got_p[2]

    r1 = np.abs(rng.standard_normal(7))
    r2 = np.abs(rng.standard_normal(7))
    bn = np.abs(rng.standard_normal(7))
    bn[3] = 0.0
    for coeffs in [(0.3, 0.2, 0.1, 0.4), (0.3, -0.2, -0.1, 0.4)]:
        out_c = _core.profile_best_t_batch(r1, r2, bn, 1.7, *coeffs)
        out_p = _core_py.profile_best_t_batch(r1, r2, bn, 1.7, *coeffs)
        assert np.array_equal(out_c[0], out_p[0])
        assert np.array_equal(out_c[1], out_p[1])
        assert np.allclose(out_c[2], out_p[2], atol=1e-6)
        assert np.allclose(out_c[3], out_p[3], atol=1e-12)

    x1, y1, x2, y2, beta = _piece_problem()
    for variant in (VARIANT_INFLATE, VARIANT_KINK_G2, VARIANT_KINK_G1):
        out_c = _core.piece_value_grad(
            x1, y1, x2, y2, 0.4, -0.2, variant, 1.5, beta, 0.7
        )
        out_p = _core_py.piece_value_grad(
            x1, y1, x2, y2, 0.4, -0.2, variant, 1.5, beta, 0.7
        )
        assert out_c[0] == pytest.approx(out_p[0], abs=1e-12)
        assert np.allclose(out_c[1], out_p[1], atol=1e-12)
        assert out_c[2] == pytest.approx(out_p[2], abs=1e-12)

    got_c = _core.gda_saddle(
        x1, y1, x2, y2, 0.4, 0.2, VARIANT_INFLATE, 1.5,
        beta, 0.7, 5.0, 10.0, 1e-3, 4000, 1e-9,
    )
    got_p = _core_py.gda_saddle(
        x1, y1, x2, y2, 0.4, 0.2, VARIANT_INFLATE, 1.5,
        beta, 0.7, 5.0, 10.0, 1e-3, 4000, 1e-9,
    )
    assert np.allclose(got_c[0], got_p[0], atol=1e-10)
    assert got_c[1] == pytest.approx(got_p[1], abs=1e-10)
    assert got_c[2] == got_p[2]
