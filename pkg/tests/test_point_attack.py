"""Worst-case single-point insertion attack."""

from __future__ import annotations

import numpy as np
import pytest

import oracles
from robustfair.dataset import Dataset
from robustfair.errors import ValidationError
from robustfair.objective import TradeoffConfig, objective_l
from robustfair.point_attack import (
    AdversarialPoint,
    apply_point,
    best_point,
    orthogonal_to,
)


def _ols(ds):
    return oracles.pinv_fit(ds.features, ds.targets)


def test_lambda_zero_attack_is_aligned_closed_form():
    ds = oracles.make_dataset(seed=3, m=6, n2=5, p=3)
    cfg = TradeoffConfig(lam=0.0, eta=1.8)
    beta = _ols(ds)
    pt = best_point(beta, ds, cfg)
    assert pt.mode == "aligned"
    assert pt.branch == "g1"
    assert pt.g0 == 1
    rss = float(np.sum((ds.targets - ds.features @ beta) ** 2))
    want = (cfg.eta**2 * (1.0 + float(beta @ beta)) + rss) / (ds.n + 1)
    assert pt.achieved_value == pytest.approx(want, rel=1e-12)


def test_small_lambda_point_sits_on_the_residual_ray(desk_ds):
    cfg = TradeoffConfig(lam=0.2, eta=2.0)
    beta = _ols(desk_ds)
    pt = best_point(beta, desk_ds, cfg)
    assert pt.mode == "aligned"
    b = np.append(beta, -1.0)
    want = cfg.eta * b / np.linalg.norm(b)
    assert np.allclose(pt.stacked(), want, atol=1e-12)


def test_attack_dominates_monte_carlo(desk_ds):
    cfg = TradeoffConfig(lam=0.7, eta=2.0)
    beta = _ols(desk_ds)
    pt = best_point(beta, desk_ds, cfg)
    rng = np.random.default_rng(42)
    mc = oracles.mc_point_max(
        beta, desk_ds.x1, desk_ds.y1, desk_ds.x2, desk_ds.y2,
        cfg.lam, cfg.eta, 20000, rng,
    )
    assert pt.achieved_value >= mc - 1e-9 * (1.0 + abs(mc))


def test_insertion_reproduces_achieved_value():
    rng = np.random.default_rng(17)
    for seed in range(5):
        ds = oracles.make_dataset(seed=30 + seed, m=6, n2=5, p=3)
        cfg = TradeoffConfig(
            lam=float(rng.uniform(0.0, 2.0)), eta=float(rng.uniform(0.5, 3.0))
        )
        beta = rng.standard_normal(ds.p)
        pt = best_point(beta, ds, cfg)
        poisoned = apply_point(ds, pt)
        got = objective_l(beta, poisoned, cfg)
        assert got == pytest.approx(
            pt.achieved_value, abs=1e-9 * (1.0 + abs(pt.achieved_value))
        )


def test_orthogonal_to_axis_vector():
    b = np.array([0.0, 0.0, -1.0])
    r = orthogonal_to(b)
    assert np.allclose(r, [1.0, 0.0, 0.0], atol=1e-15)


def test_orthogonal_to_is_unit_orthogonal_and_deterministic():
    rng = np.random.default_rng(8)
    for _ in range(20):
        b = rng.standard_normal(4)
        r = orthogonal_to(b)
        assert abs(float(r @ b)) <= 1e-12 * np.linalg.norm(b)
        assert np.linalg.norm(r) == pytest.approx(1.0, abs=1e-12)
        assert np.array_equal(r, orthogonal_to(b))
    with pytest.raises(ValidationError):
        orthogonal_to(np.zeros(3))


def _orthogonal_instance():
    """Group 1 fit exactly, group 2 far off, lam large: h1 wins with a
    negative energy coefficient, so the best point is residual-free."""
    rng = np.random.default_rng(21)
    x = rng.standard_normal((8, 2))
    beta = rng.standard_normal(2)
    y = np.concatenate([x[:4] @ beta, x[4:] @ beta + 10.0])
    ds = Dataset(features=x, targets=y, m=4)
    return ds, beta, TradeoffConfig(lam=2.0, eta=1.5)


def test_orthogonal_mode_triggers_and_any_direction_ties():
    ds, beta, cfg = _orthogonal_instance()
    pt = best_point(beta, ds, cfg)
    assert pt.mode == "orthogonal"
    assert pt.branch == "h1"
    base = objective_l(beta, apply_point(ds, pt), cfg)
    assert base == pytest.approx(pt.achieved_value, abs=1e-9 * (1 + abs(base)))

    b = np.append(beta, -1.0)
    rng = np.random.default_rng(4)
    for _ in range(3):
        probe = rng.standard_normal(b.size)
        probe -= (probe @ b) / (b @ b) * b
        probe *= cfg.eta / np.linalg.norm(probe)
        alt = AdversarialPoint(
            x0=probe[:-1], y0=float(probe[-1]), g0=pt.g0,
            achieved_value=pt.achieved_value, branch=pt.branch, mode="orthogonal",
        )
        other = objective_l(beta, apply_point(ds, alt), cfg)
        assert other == pytest.approx(base, abs=1e-10 * (1.0 + abs(base)))


def test_zero_energy_point_reduces_to_reweighting():
    ds = oracles.make_dataset(seed=12, m=5, n2=6, p=3)
    cfg = TradeoffConfig(lam=0.4, eta=1.0)
    beta = _ols(ds)
    pt = AdversarialPoint(
        x0=np.zeros(ds.p), y0=0.0, g0=1,
        achieved_value=0.0, branch="g1", mode="aligned",
    )
    poisoned = apply_point(ds, pt)
    r1 = ds.y1 - ds.x1 @ beta
    r2 = ds.y2 - ds.x2 @ beta
    s1, s2 = float(r1 @ r1), float(r2 @ r2)
    want = (s1 + s2 + 0.0) / (ds.n + 1) + cfg.lam * abs(
        s1 / (ds.m + 1) - s2 / ds.n2
    )
    assert objective_l(beta, poisoned, cfg) == pytest.approx(want, rel=1e-12)


def test_apply_point_group_bookkeeping():
    ds = oracles.make_dataset(seed=2, m=4, n2=5, p=2)
    pt1 = AdversarialPoint(
        x0=np.array([1.0, 2.0]), y0=3.0, g0=1,
        achieved_value=0.0, branch="g1", mode="aligned",
    )
    out1 = apply_point(ds, pt1)
    assert out1.m == ds.m + 1
    assert out1.n == ds.n + 1
    assert np.array_equal(out1.features[ds.m], pt1.x0)
    assert out1.targets[ds.m] == 3.0

    pt2 = AdversarialPoint(
        x0=np.array([1.0, 2.0]), y0=3.0, g0=2,
        achieved_value=0.0, branch="h2", mode="aligned",
    )
    out2 = apply_point(ds, pt2)
    assert out2.m == ds.m
    assert out2.n == ds.n + 1
    assert np.array_equal(out2.features[-1], pt2.x0)


def test_group_two_branch_gets_group_two_label():
    rng = np.random.default_rng(33)
    x = rng.standard_normal((8, 2))
    beta = rng.standard_normal(2)
    y = np.concatenate([x[:4] @ beta + 10.0, x[4:] @ beta])
    ds = Dataset(features=x, targets=y, m=4)
    pt = best_point(beta, ds, TradeoffConfig(lam=2.0, eta=1.5))
    assert pt.branch in ("g2", "h2")
    assert pt.g0 == 2


def test_value_grows_with_budget(desk_ds):
    beta = _ols(desk_ds)
    vals = [
        best_point(beta, desk_ds, TradeoffConfig(lam=0.3, eta=eta)).achieved_value
        for eta in (0.5, 1.5, 4.0)
    ]
    assert vals[0] < vals[1] < vals[2]


def test_validation():
    with pytest.raises(ValidationError):
        AdversarialPoint(
            x0=np.zeros(2), y0=0.0, g0=3,
            achieved_value=0.0, branch="g1", mode="aligned",
        )
    with pytest.raises(ValidationError):
        AdversarialPoint(
            x0=np.zeros(2), y0=0.0, g0=1,
            achieved_value=0.0, branch="g9", mode="aligned",
        )
    with pytest.raises(ValidationError):
        AdversarialPoint(
            x0=np.zeros(2), y0=0.0, g0=1,
            achieved_value=0.0, branch="g1", mode="sideways",
        )
    ds = oracles.make_dataset(seed=1, m=3, n2=3, p=2)
    pt = AdversarialPoint(
        x0=np.zeros(4), y0=0.0, g0=1,
        achieved_value=0.0, branch="g1", mode="aligned",
    )
    with pytest.raises(ValidationError):
        apply_point(ds, pt)


def test_point_json_round_trip_fields(desk_ds):
    pt = best_point(
        _ols(desk_ds), desk_ds, TradeoffConfig(lam=0.2, eta=2.0)
    )
    blob = pt.to_json()
    assert blob["g0"] in (1, 2)
    assert blob["branch"] == pt.branch
    assert blob["mode"] == pt.mode
    assert np.allclose(blob["x0"], pt.x0)
