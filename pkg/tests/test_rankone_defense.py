"""Minimax defense against rank-one data perturbations."""

from __future__ import annotations

import csv
import subprocess
import sys

import numpy as np
import pytest

import oracles
from robustfair._kernels import (
    VARIANT_INFLATE,
    VARIANT_KINK_G1,
    VARIANT_KINK_G2,
    piece_value_grad,
)
from robustfair.dataset import Dataset, demo_synth_params, synth_generate
from robustfair.errors import ValidationError
from robustfair.objective import TradeoffConfig, rankone_coeffs
from robustfair.rankone_attack import best_rankone, h_profile
from robustfair.rankone_defense import (
    envelope_value,
    ipp_solve,
    robust_fit_rankone,
    solve_sp_closed,
    split_subproblems,
    weak_convexity_constants,
)


@pytest.fixture(scope="module")
def ds_desk():
    return synth_generate(demo_synth_params(seed=0, m=12, n2=12, p=3))


@pytest.fixture(scope="module")
def pinned_ds():
    """Group-1 targets sit exactly on a reference model; group 2 is offset."""
    rng = np.random.default_rng(5)
    x = rng.standard_normal((12, 2))
    beta_bar = np.array([1.2, -0.7])
    y = np.concatenate([x[:6] @ beta_bar, x[6:] @ beta_bar + 3.0])
    return Dataset(features=x, targets=y, m=6), beta_bar


@pytest.fixture(scope="module")
def fitted_full_regime(ds_desk, tmp_path_factory):
    """Defense run in the four-piece regime with its step trace on disk."""
    path = tmp_path_factory.mktemp("trace") / "steps.csv"
    model = robust_fit_rankone(
        ds_desk, TradeoffConfig(lam=1.5, eta=1.5), trace_path=str(path)
    )
    return model, path


def _phi_min(ds, eta):
    """Direct multi-start minimum of the coincident-sides envelope."""

    def phi(beta):
        resid = float(np.linalg.norm(ds.targets - ds.features @ beta))
        return (resid + eta * float(np.linalg.norm(beta))) ** 2 / ds.n

    _, val = oracles.minimize_multistart(phi, oracles.envelope_starts(ds, 10, seed=4))
    return val


# ---------------------------------------------------------------------------
# Curvature constants and piece enumeration
# ---------------------------------------------------------------------------


def test_constants_match_hand_formulas(ds_desk):
    cfg = TradeoffConfig(lam=1.5, eta=1.5)
    cons = weak_convexity_constants(ds_desk, cfg)
    ols, *_ = np.linalg.lstsq(ds_desk.features, ds_desk.targets, rcond=None)
    assert cons.b_beta == 10.0 * max(1.0, float(np.linalg.norm(ols)))

    co = rankone_coeffs(ds_desk.n, ds_desk.m, cfg.lam)
    s1 = float(np.linalg.norm(ds_desk.features[: ds_desk.m], 2))
    s2 = float(np.linalg.norm(ds_desk.features[ds_desk.m :], 2))
    rho1 = 2.0 * cfg.lam * (1.0 / 12 + 1.0 / 12) * cons.b_beta**2 + 1e-9
    rho2 = (
        2.0
        * max(
            max(0.0, -co.d_g) * (s2 + cfg.eta) ** 2,
            max(0.0, -co.c_h) * (s1 + cfg.eta) ** 2,
        )
        + 1e-9
    )
    assert cons.rho1 == rho1
    assert cons.rho2 == rho2
    assert cons.prox_rho() == 2.0 * max(rho1, rho2) + 1.0

    flat = weak_convexity_constants(ds_desk, TradeoffConfig(lam=0.0, eta=1.5))
    assert flat.rho1 == pytest.approx(1e-9)
    assert flat.rho2 == pytest.approx(1e-9)


def test_constants_reject_degenerate_radius(ds_desk):
    cfg = TradeoffConfig(lam=0.5, eta=1.0)
    for bad in (0.0, -2.0, np.inf, np.nan):
        with pytest.raises(ValidationError):
            weak_convexity_constants(ds_desk, cfg, b_beta=bad)


def test_piece_enumeration_follows_coefficient_signs():
    flat = split_subproblems(rankone_coeffs(24, 12, 0.0))
    assert [(d.name, d.solver, d.variant) for d in flat] == [
        ("g_a", "ipp", VARIANT_INFLATE)
    ]
    assert flat[0].cc == pytest.approx(1.0 / 24) and flat[0].dd == pytest.approx(1.0 / 24)

    smooth = split_subproblems(rankone_coeffs(24, 12, 0.2))
    assert [(d.name, d.solver) for d in smooth] == [("g_a", "ipp"), ("h_a", "ipp")]

    full = split_subproblems(rankone_coeffs(24, 12, 1.5))
    assert [(d.name, d.solver, d.variant) for d in full] == [
        ("g_b1", "closed", VARIANT_KINK_G2),
        ("g_b2", "ipp", VARIANT_KINK_G2),
        ("h_b1", "closed", VARIANT_KINK_G1),
        ("h_b2", "ipp", VARIANT_KINK_G1),
    ]

    mixed = split_subproblems(rankone_coeffs(24, 16, 0.5))
    assert [(d.name, d.solver, d.variant) for d in mixed] == [
        ("g_b1", "closed", VARIANT_KINK_G2),
        ("g_b2", "ipp", VARIANT_KINK_G2),
        ("h_a", "ipp", VARIANT_INFLATE),
    ]


def test_piece_curvature_respects_weak_convexity_bounds(ds_desk):
    x1, y1 = ds_desk.features[:12], ds_desk.targets[:12]
    x2, y2 = ds_desk.features[12:], ds_desk.targets[12:]
    rng = np.random.default_rng(9)
    for lam in (0.3, 1.5):
        cfg = TradeoffConfig(lam=lam, eta=1.5)
        cons = weak_convexity_constants(ds_desk, cfg)
        for desc in split_subproblems(rankone_coeffs(24, 12, lam)):
            for _ in range(25):
                beta = rng.standard_normal(3)
                beta *= rng.uniform(0.1, 0.9) * cons.b_beta / np.linalg.norm(beta)
                t = rng.uniform(0.05, 0.95) * cfg.eta

                def in_t(tv):
                    return piece_value_grad(
                        x1, y1, x2, y2, desc.cc, desc.dd, desc.variant,
                        cfg.eta, beta, float(tv[0]),
                    )[0]

                def in_beta(bv):
                    return piece_value_grad(
                        x1, y1, x2, y2, desc.cc, desc.dd, desc.variant,
                        cfg.eta, bv, t,
                    )[0]

                d2t = oracles.fd_second_directional(in_t, np.array([t]), np.array([1.0]), h=1e-4)
                unit = rng.standard_normal(3)
                unit /= np.linalg.norm(unit)
                d2b = oracles.fd_second_directional(in_beta, beta, unit, h=1e-4)
                assert d2t <= 1.05 * cons.rho1 + 1e-3
                assert d2b >= -(1.05 * cons.rho2) - 1e-3


# ---------------------------------------------------------------------------
# Closed residual-zeroing pieces
# ---------------------------------------------------------------------------


def test_zeroing_piece_value_pinned_by_exact_fit_group(pinned_ds):
    ds, beta_bar = pinned_ds
    cfg = TradeoffConfig(lam=1.2, eta=0.8)
    co = rankone_coeffs(ds.n, ds.m, cfg.lam)
    assert co.c_h < 0.0

    # With the group-1 residual already zero, spending nothing on group 1
    # leaves the whole budget to inflate group 2.
    norm = float(np.linalg.norm(beta_bar))
    r2 = float(np.linalg.norm(ds.targets[6:] - ds.features[6:] @ beta_bar))
    pinned = co.d_h * (r2 + cfg.eta * norm) ** 2
    assert h_profile(0.0, beta_bar, ds, co, cfg.eta) == pytest.approx(pinned, rel=1e-12)

    desc = next(d for d in split_subproblems(co) if d.name == "h_b1")
    cand = solve_sp_closed(desc, ds, cfg)
    assert cand.value <= pinned + 1e-9


def test_zeroing_feasibility_flag_tracks_budget(pinned_ds):
    ds, _ = pinned_ds
    co = rankone_coeffs(ds.n, ds.m, 1.2)
    desc = next(d for d in split_subproblems(co) if d.name == "h_b1")
    lean = solve_sp_closed(desc, ds, TradeoffConfig(lam=1.2, eta=0.8))
    roomy = solve_sp_closed(desc, ds, TradeoffConfig(lam=1.2, eta=3.0))
    assert not lean.feasible
    assert roomy.feasible
    with pytest.raises(ValueError):
        roomy.beta[0] = 1.0


def test_solvers_reject_mismatched_pieces(ds_desk):
    cfg = TradeoffConfig(lam=1.5, eta=1.5)
    cons = weak_convexity_constants(ds_desk, cfg)
    descs = split_subproblems(rankone_coeffs(24, 12, 1.5))
    closed = next(d for d in descs if d.solver == "closed")
    saddle = next(d for d in descs if d.solver == "ipp")
    with pytest.raises(ValidationError):
        ipp_solve(closed, ds_desk, cfg, cons)
    with pytest.raises(ValidationError):
        solve_sp_closed(saddle, ds_desk, cfg, cons)


# ---------------------------------------------------------------------------
# Proximal point solver
# ---------------------------------------------------------------------------


def test_saddle_solver_finds_the_flat_regime_optimum(ds_desk):
    cfg = TradeoffConfig(lam=0.0, eta=1.5)
    cons = weak_convexity_constants(ds_desk, cfg)
    desc = split_subproblems(rankone_coeffs(24, 12, 0.0))[0]
    res = ipp_solve(desc, ds_desk, cfg, cons)

    assert res.stationary
    assert res.residual <= 1e-4
    assert len(res.trace) == res.outer_iters

    values = [row[2] for row in res.trace]
    assert values[-1] == res.value
    assert values[-1] <= values[0] + 1e-9 * (1.0 + abs(values[0]))
    for prev, nxt in zip(values, values[1:]):
        assert nxt <= prev + 1e-3 * (1.0 + abs(prev))

    direct = _phi_min(ds_desk, cfg.eta)
    assert res.value == pytest.approx(direct, rel=1e-6)

    # The inner split must sit where the exact attack puts its budget.
    attack = best_rankone(res.beta, ds_desk, cfg)
    assert attack.value == pytest.approx(res.value, rel=1e-9)
    assert abs(attack.eta_c1 - res.t) <= 1e-3


# ---------------------------------------------------------------------------
# Full defense
# ---------------------------------------------------------------------------


def test_defense_without_fairness_weight_matches_direct_envelope(ds_desk):
    cfg = TradeoffConfig(lam=0.0, eta=1.5)
    model = robust_fit_rankone(ds_desk, cfg)
    assert model.source == "rankone_defense"
    diag = model.diagnostics
    assert diag.case_label == "ipp(g_a)"
    assert diag.certified_value == model.minimax_value
    assert diag.claimed_value <= diag.certified_value + 1e-6
    assert model.minimax_value == pytest.approx(_phi_min(ds_desk, cfg.eta), rel=1e-6)


def test_defense_full_regime_is_deterministic_and_certified(ds_desk, fitted_full_regime):
    model, _ = fitted_full_regime
    diag = model.diagnostics
    assert model.minimax_value == pytest.approx(7.423386972917834, rel=1e-6)
    assert diag.case_label.startswith(("closed(", "ipp(", "fallback"))
    assert diag.claimed_value <= diag.certified_value + 1e-6
    assert diag.stationary
    assert diag.b_beta > 0.0 and diag.rho1 > 0.0 and diag.rho2 > 0.0

    again = robust_fit_rankone(ds_desk, TradeoffConfig(lam=1.5, eta=1.5))
    assert np.array_equal(model.beta, again.beta)
    assert model.minimax_value == again.minimax_value


def test_defended_value_is_attained_by_the_exact_attack(ds_desk, fitted_full_regime):
    model, _ = fitted_full_regime
    attack = best_rankone(np.asarray(model.beta), ds_desk, TradeoffConfig(lam=1.5, eta=1.5))
    assert attack.value == pytest.approx(model.minimax_value, rel=1e-12)


def test_defense_trace_file_layout(fitted_full_regime):
    model, path = fitted_full_regime
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["piece", "outer_iter", "residual", "value"]
    body = rows[1:]
    assert len(body) == len(model.diagnostics.trace)
    assert sorted({row[0] for row in body}) == ["g_b2", "h_b2"]
    last_by_piece = {}
    for piece, outer, residual, value in body:
        float(value)
        last_by_piece[piece] = (int(outer), float(residual))
    for outer, residual in last_by_piece.values():
        assert outer >= 1
        assert residual <= 1e-4


def test_saddle_trajectory_is_stable_across_processes(ds_desk):
    # Interpreter hash salting must not leak into solver randomness.
    cfg = TradeoffConfig(lam=0.0, eta=1.5)
    cons = weak_convexity_constants(ds_desk, cfg)
    desc = split_subproblems(rankone_coeffs(24, 12, 0.0))[0]
    here = ipp_solve(desc, ds_desk, cfg, cons)

    script = (
        "import numpy as np\n"
        "from robustfair.dataset import demo_synth_params, synth_generate\n"
        "from robustfair.objective import TradeoffConfig, rankone_coeffs\n"
        "from robustfair.rankone_defense import ipp_solve, split_subproblems, "
        "weak_convexity_constants\n"
        "ds = synth_generate(demo_synth_params(seed=0, m=12, n2=12, p=3))\n"
        "cfg = TradeoffConfig(lam=0.0, eta=1.5)\n"
        "res = ipp_solve(split_subproblems(rankone_coeffs(24, 12, 0.0))[0], ds, cfg, "
        "weak_convexity_constants(ds, cfg))\n"
        "print(repr(res.value), res.outer_iters, repr(res.t))\n"
    )
    out = subprocess.run(
        [sys.executable, "-c", script], capture_output=True, text=True, check=True
    )
    value, outers, t_split = out.stdout.split()
    assert float(value) == here.value
    assert int(outers) == here.outer_iters
    assert float(t_split) == here.t


def test_envelope_value_dominates_dense_split_grids(ds_desk):
    cfg = TradeoffConfig(lam=0.7, eta=1.2)
    beta = np.array([0.4, -1.1, 0.2])
    ts = np.linspace(0.0, cfg.eta, 2001)
    args = (
        beta,
        ds_desk.features[:12],
        ds_desk.targets[:12],
        ds_desk.features[12:],
        ds_desk.targets[12:],
        cfg.lam,
        cfg.eta,
    )
    grid = max(
        float(oracles.profile_grid("g", ts, *args).max()),
        float(oracles.profile_grid("h", ts, *args).max()),
    )
    val = envelope_value(beta, ds_desk, cfg)
    scale = 1.0 + abs(grid)
    assert val >= grid - 1e-9 * scale
    assert val <= grid + 1e-3 * scale
