import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prefixstats.condition_space import QuantileInterval
from prefixstats.dynamics import (
    CSV_HEADER,
    PARAM_RANGES,
    TrajectoryParams,
    generate_dataset,
    instantaneous_energy,
    load_dataset,
    oracle_interval_stat,
    oracle_max,
    oracle_prefix,
    sample_params,
    save_dataset,
)
from prefixstats.errors import DegenerateInterval, InvalidConfig
from prefixstats.normalization import NormalizationStats
from prefixstats.transforms import CdfAt, Exceedance, Max, Mean, Quantile, RangeProb

PI = math.pi
CIRCLE = TrajectoryParams(a=1.0, b=0.0, phi_r=0.0, omega0=2 * PI, alpha_spin=0.0, phi_omega=0.0, phi0=0.0)

# Integral of h over [0, 1] for CIRCLE: 0.02 pi^2 + 4 pi^2 (1 + 0.005) = 4.04 pi^2.
# Cross-checked with 30-digit mpmath quadrature: 39.8732017804010088639...
CIRCLE_MEAN_01 = 39.873201780401009


def test_energy_examples():
    # r'(0) = 0.2 pi, r(0) = 1, eta'(0) = 2 pi
    assert instantaneous_energy(CIRCLE, 0.0) == pytest.approx(0.04 * PI**2 + 4 * PI**2, rel=1e-14)
    assert instantaneous_energy(CIRCLE, 0.0) == pytest.approx(39.87320178, rel=1e-9)
    # r'(0.25) = 0, r(0.25) = 1.1
    assert instantaneous_energy(CIRCLE, 0.25) == pytest.approx((1.1 * 2 * PI) ** 2, rel=1e-14)
    assert instantaneous_energy(CIRCLE, 0.25) == pytest.approx(47.76888530, rel=1e-9)


def test_energy_vanishes_when_both_terms_vanish():
    s = 0.3
    b = -0.2 * PI * math.cos(2 * PI * s + 0.4)
    p = TrajectoryParams(1.0, b, 0.4, 0.0, 0.0, 0.0, 0.0)
    assert abs(instantaneous_energy(p, s)) < 1e-28


def test_energy_broadcasting():
    ps = np.stack([sample_params(0, i) for i in range(3)])
    s = np.linspace(0, 1, 5)
    grid = instantaneous_energy(ps[:, None, :], s[None, :])
    assert grid.shape == (3, 5)
    for i in range(3):
        np.testing.assert_allclose(grid[i], instantaneous_energy(ps[i], s), rtol=0, atol=0)


def test_energy_non_negative_and_radius_positive():
    ps = np.stack([sample_params(11, i) for i in range(200)])
    s = np.random.default_rng(0).random((200, 50))
    assert np.all(instantaneous_energy(ps[:, None, :], s) >= 0)
    a, b, phi_r = ps[:, 0:1], ps[:, 1:2], ps[:, 2:3]
    r = a + b * s + 0.1 * np.sin(2 * PI * s + phi_r)
    assert r.min() > 0.39


def test_parameter_ranges():
    ps = np.stack([sample_params(3, i) for i in range(500)])
    for j, (lo, hi) in enumerate(PARAM_RANGES.values()):
        assert ps[:, j].min() >= lo and ps[:, j].max() <= hi


def test_generate_dataset_shapes_and_determinism():
    ds = generate_dataset(2000, 500, 64, seed=0)
    assert ds.train_params.shape == (2000, 7) and ds.test_params.shape == (500, 7)
    assert ds.train_energy.shape == (2000, 64) and ds.test_energy.shape == (500, 64)
    tiny = generate_dataset(1, 1, 2, seed=7)
    np.testing.assert_array_equal(tiny.grid, [0.0, 1.0])
    a = generate_dataset(5, 3, 8, seed=42)
    b = generate_dataset(5, 3, 8, seed=42)
    np.testing.assert_array_equal(a.train_energy, b.train_energy)
    np.testing.assert_array_equal(a.test_params, b.test_params)
    assert not np.array_equal(generate_dataset(5, 3, 8, seed=43).train_params, a.train_params)


def test_generate_dataset_errors():
    with pytest.raises(InvalidConfig):
        generate_dataset(0, 1, 8)
    with pytest.raises(InvalidConfig):
        generate_dataset(1, 1, 1)


def test_normalization_uses_train_split_only():
    ds = generate_dataset(50, 20, 16, seed=1)
    assert ds.normalization.energy_mean == pytest.approx(ds.train_energy.mean(), rel=1e-12)
    np.testing.assert_allclose(ds.normalization.param_mean, ds.train_params.mean(axis=0), rtol=1e-12)


def test_csv_round_trip(tmp_path):
    ds = generate_dataset(4, 2, 5, seed=9)
    path = save_dataset(ds, tmp_path / "d.csv")
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(CSV_HEADER)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.train_energy, ds.train_energy)
    np.testing.assert_array_equal(back.test_params, ds.test_params)
    assert back.seed == 9 and back.normalization == ds.normalization


def test_oracle_mean_fixture():
    assert oracle_interval_stat(CIRCLE, (0.0, 1.0), Mean()) == pytest.approx(CIRCLE_MEAN_01, rel=1e-12)
    s = np.linspace(0, 1, 10**6 + 1)
    assert np.trapezoid(instantaneous_energy(CIRCLE, s), s) == pytest.approx(CIRCLE_MEAN_01, rel=1e-10)


def test_oracle_exceedance_below_minimum():
    p = sample_params(0, 5)
    lo = instantaneous_energy(p, np.linspace(0.2, 0.6, 8192)).min()
    assert oracle_interval_stat(p, (0.2, 0.6), Exceedance(lo - 1.0)) == 1.0


def test_oracle_on_constant_stub():
    k = 3.7
    const = lambda s: np.full(np.shape(s), k)  # noqa: E731
    assert oracle_interval_stat(None, (0.1, 0.9), Quantile(0.5), signal=const) == k
    assert oracle_interval_stat(None, (0.1, 0.9), Mean(), signal=const) == pytest.approx(k, rel=1e-14)
    assert oracle_interval_stat(None, (0.1, 0.9), Max(), signal=const) == k
    assert oracle_interval_stat(None, (0.1, 0.9), RangeProb(k - 1, k + 1), signal=const) == 1.0


def test_oracle_degenerate_interval():
    with pytest.raises(DegenerateInterval):
        oracle_interval_stat(CIRCLE, (0.5, 0.5), Mean())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.45), st.floats(0.05, 0.95), st.floats(0.55, 1.0))
def test_oracle_mean_additivity(traj, s0, frac, s1):
    p = sample_params(2, traj)
    mid = s0 + frac * (s1 - s0)
    whole = (s1 - s0) * oracle_interval_stat(p, (s0, s1), Mean())
    parts = (mid - s0) * oracle_interval_stat(p, (s0, mid), Mean()) + (s1 - mid) * oracle_interval_stat(p, (mid, s1), Mean())
    assert abs(whole - parts) < 1e-7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.3), st.floats(0.7, 1.0), st.floats(0.05, 0.4))
def test_oracle_max_monotone_under_inclusion(traj, s0, s1, shrink):
    p = sample_params(4, traj)
    inner = (s0 + shrink * (s1 - s0) / 2, s1 - shrink * (s1 - s0) / 2)
    assert oracle_max(p, (s0, s1)) >= oracle_max(p, inner)


def test_oracle_cdf_monotone_in_level():
    p = sample_params(0, 1)
    ys = np.linspace(0, 150, 60)
    vals = [oracle_interval_stat(p, (0.1, 0.8), CdfAt(y)) for y in ys]
    assert np.all(np.diff(vals) >= 0)
    assert min(vals) >= 0 and max(vals) <= 1


def test_oracle_max_matches_dense_grid():
    p = sample_params(0, 17)
    dense = instantaneous_energy(p, np.linspace(0.3, 0.9, 200_001)).max()
    assert oracle_max(p, (0.3, 0.9)) >= dense - 1e-9
    assert oracle_max(p, (0.3, 0.9)) == pytest.approx(dense, rel=1e-8)


def test_prefix_differentiates_back_to_energy():
    norm = NormalizationStats.identity()
    ds = 1e-4
    for traj in range(5):
        p = sample_params(8, traj)
        for s in (0.2, 0.5, 0.9):
            F = lambda t: t * oracle_prefix(p, t, Mean(), norm, tol=1e-12)  # noqa: E731
            deriv = (F(s + ds) - F(s - ds)) / (2 * ds)
            assert deriv == pytest.approx(instantaneous_energy(p, s), rel=1e-3)


def test_quantile_interval_accepted():
    iv = QuantileInterval(0.25, 0.75)
    assert oracle_interval_stat(CIRCLE, iv, Mean()) == oracle_interval_stat(CIRCLE, (0.25, 0.75), Mean())
