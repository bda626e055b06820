"""Dataset loading, synthesis, and statistics."""

from __future__ import annotations

import numpy as np
import pytest

import oracles
from robustfair.dataset import (
    Dataset,
    SynthParams,
    compute_stats,
    demo_synth_params,
    load_csv,
    save_csv,
    synth_generate,
)
from robustfair.errors import ParseError, ValidationError


def test_load_csv_reorders_group_one_first(tmp_path):
    path = tmp_path / "mixed.csv"
    path.write_text(
        "x0,x1,target,group\n"
        "1.0,2.0,3.0,2\n"
        "4.0,5.0,6.0,1\n"
        "7.0,8.0,9.0,2\n"
        "10.0,11.0,12.0,1\n"
    )
    ds = load_csv(path)
    assert ds.m == 2
    assert ds.n == 4
    expected_x = np.array([[4.0, 5.0], [10.0, 11.0], [1.0, 2.0], [7.0, 8.0]])
    expected_y = np.array([6.0, 12.0, 3.0, 9.0])
    assert np.array_equal(ds.features, expected_x)
    assert np.array_equal(ds.targets, expected_y)


def test_load_csv_blank_target_names_the_row(tmp_path):
    path = tmp_path / "blank.csv"
    path.write_text(
        "x0,target,group\n"
        "1.0,2.0,1\n"
        "3.0,,2\n"
    )
    with pytest.raises(ParseError, match="row 3.*target"):
        load_csv(path)


def test_load_csv_rejects_empty_group(tmp_path):
    path = tmp_path / "onegroup.csv"
    path.write_text(
        "x0,target,group\n"
        "1.0,2.0,1\n"
        "3.0,4.0,1\n"
    )
    with pytest.raises(ValidationError, match="both groups"):
        load_csv(path)


def test_load_csv_rejects_bad_group_label(tmp_path):
    path = tmp_path / "badgroup.csv"
    path.write_text(
        "x0,target,group\n"
        "1.0,2.0,1\n"
        "3.0,4.0,3\n"
    )
    with pytest.raises(ParseError, match="group must be 1 or 2"):
        load_csv(path)


def test_load_csv_missing_required_column(tmp_path):
    path = tmp_path / "noheader.csv"
    path.write_text("x0,x1,group\n1.0,2.0,1\n3.0,4.0,2\n")
    with pytest.raises(ParseError, match="target"):
        load_csv(path)


def test_load_csv_feature_subset(tmp_path):
    path = tmp_path / "subset.csv"
    path.write_text(
        "x0,x1,target,group\n"
        "1.0,2.0,3.0,1\n"
        "4.0,5.0,6.0,2\n"
    )
    ds = load_csv(path, feature_cols=["x1"])
    assert ds.p == 1
    assert np.array_equal(ds.features, np.array([[2.0], [5.0]]))
    with pytest.raises(ParseError, match="unknown feature"):
        load_csv(path, feature_cols=["x9"])


def test_csv_round_trip_is_bit_exact(tmp_path):
    ds = synth_generate(demo_synth_params(seed=3, m=7, n2=5, p=4))
    path = tmp_path / "round.csv"
    save_csv(ds, path)
    back = load_csv(path)
    assert back.m == ds.m
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.targets, ds.targets)


def test_noiseless_synth_targets_are_exact():
    b = np.array([0.5, -1.25, 2.0])
    params = SynthParams(
        m=4,
        n2=3,
        p=3,
        beta01=b,
        beta02=b,
        group1_offset=0.0,
        noise_std=0.0,
        feature_low=-1.0,
        feature_high=1.0,
        seed=5,
    )
    ds = synth_generate(params)
    assert np.array_equal(ds.targets, ds.features @ b)


def test_synth_is_bitwise_reproducible():
    params = demo_synth_params(seed=11, m=9, n2=8, p=4)
    a = synth_generate(params)
    b = synth_generate(params)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.targets, b.targets)


def test_synth_param_validation():
    with pytest.raises(ValidationError):
        SynthParams(
            m=0, n2=3, p=2, beta01=1.0, beta02=1.0, group1_offset=0.0,
            noise_std=1.0, feature_low=0.0, feature_high=1.0, seed=0,
        )
    with pytest.raises(ValidationError):
        SynthParams(
            m=3, n2=3, p=2, beta01=1.0, beta02=1.0, group1_offset=0.0,
            noise_std=-0.5, feature_low=0.0, feature_high=1.0, seed=0,
        )
    with pytest.raises(ValidationError):
        SynthParams(
            m=3, n2=3, p=2, beta01=1.0, beta02=1.0, group1_offset=0.0,
            noise_std=1.0, feature_low=1.0, feature_high=1.0, seed=0,
        )


def test_dataset_validation():
    x = np.ones((4, 2))
    y = np.ones(4)
    with pytest.raises(ValidationError):
        Dataset(features=x, targets=y, m=0)
    with pytest.raises(ValidationError):
        Dataset(features=x, targets=y, m=4)
    with pytest.raises(ValidationError):
        Dataset(features=x, targets=np.ones(3), m=2)
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValidationError):
        Dataset(features=bad, targets=y, m=2)


def test_dataset_arrays_are_frozen():
    ds = Dataset(features=np.ones((3, 2)), targets=np.ones(3), m=1)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 5.0
    with pytest.raises(ValueError):
        ds.targets[0] = 5.0


def test_identity_group_spectra():
    eye = np.eye(3)
    ds = Dataset(
        features=np.vstack([eye, eye]), targets=np.arange(6.0), m=3
    )
    stats = compute_stats(ds)
    assert stats.v_x1_max == pytest.approx(1.0, abs=1e-12)
    assert stats.v_x2_max == pytest.approx(1.0, abs=1e-12)


def test_stats_match_brute_force_oracle():
    ds = oracles.make_dataset(seed=7, m=5, n2=5, p=3)
    stats = compute_stats(ds)
    ref = oracles.brute_stats(ds)
    assert stats.v_x1_max == pytest.approx(ref["v_x1_max"], abs=1e-10)
    assert stats.v_x2_max == pytest.approx(ref["v_x2_max"], abs=1e-10)
    assert stats.eta_min == pytest.approx(ref["eta_min"], abs=1e-10)
    assert stats.eta_d == pytest.approx(ref["eta_d"], abs=1e-10)
    assert stats.sigma_min == pytest.approx(ref["sigma_min"], abs=1e-10)


def test_eta_min_threshold_is_tight():
    for seed in (0, 1, 2):
        ds = oracles.make_dataset(seed=seed, m=6, n2=4, p=3)
        stats = compute_stats(ds)
        n, m = ds.n, ds.m
        bound1 = stats.eta_min**2 * m * (m + 1) / (n + 1)
        bound2 = stats.eta_min**2 * (n - m + 1) * (n - m) / (n + 1)
        scale = 1.0 + stats.v_x1_max + stats.v_x2_max
        assert bound1 >= stats.v_x1_max - 1e-12 * scale
        assert bound2 >= stats.v_x2_max - 1e-12 * scale
        slack = min(bound1 - stats.v_x1_max, bound2 - stats.v_x2_max)
        assert abs(slack) <= 1e-9 * scale


def test_stock_config_energy_scales():
    for seed in (0, 1, 2):
        stats = compute_stats(synth_generate(demo_synth_params(seed=seed)))
        assert abs(stats.eta_d - 29.08) <= 0.10 * 29.08
        assert abs(stats.eta_min - 15.98) <= 0.15 * 15.98


def test_desk_instance_stats_frozen(desk_ds):
    stats = compute_stats(desk_ds)
    assert stats.eta_min == pytest.approx(13.001741753410723, rel=1e-10)
    assert stats.eta_d == pytest.approx(19.351766749655017, rel=1e-10)
    assert stats.v_x1_max == pytest.approx(1054.8426010036746, rel=1e-10)
    assert stats.v_x2_max == pytest.approx(879.3180795175796, rel=1e-10)
    assert stats.sigma_min == pytest.approx(13.318603564690036, rel=1e-10)
    assert "eta_min" in stats.to_json()
