import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import band_limited
from stressnav.errors import InconsistentEstimateError
from stressnav.estimators import (
    estimate_angular_velocity,
    estimate_motion_direction,
    estimate_speed,
    estimate_speed_ratio,
    estimate_wall_direction,
    estimate_wall_distance,
    full_estimate,
    in_expanded_hull,
    pattern_correlation,
    wrap_angle,
)
from stressnav.features import fourier_coefficients
from stressnav.models import SpeedRatioFit, reference_models
from stressnav.sensors import StressReading
from stressnav.stokes import surface_traction

PATTERN_N = {1: (1.0, 0.2), 2: (0.6, -0.7), 3: (0.2, 1.1)}
PATTERN_T = {1: (0.8, -0.4), 2: (0.5, 0.9), 4: (0.1, 0.3)}


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.9 * math.pi, 0.9 * math.pi))
def test_angular_velocity_recovers_rotation(dpsi):
    a, _, _ = band_limited(30, PATTERN_N, PATTERN_T)
    b, _, _ = band_limited(30, PATTERN_N, PATTERN_T, offset=dpsi)
    est = estimate_angular_velocity(a, b, 5e-3)
    assert est.omega == pytest.approx(dpsi / 5e-3, abs=1e-6)
    assert est.correlation > 1 - 1e-9


def test_angular_velocity_flags_aliasing():
    a, _, _ = band_limited(30, PATTERN_N, PATTERN_T)
    b, _, _ = band_limited(30, PATTERN_N, PATTERN_T, offset=0.99 * math.pi)
    est = estimate_angular_velocity(a, b, 1.0)
    assert est.aliased and not est.reliable


def test_pattern_correlation_matches_grid_pearson():
    a, _, _ = band_limited(30, PATTERN_N, PATTERN_T)
    b, _, _ = band_limited(30, PATTERN_N, PATTERN_T, offset=0.3)
    ca = fourier_coefficients(a, 6).coeffs[0, 1:]
    cb = fourier_coefficients(b, 6).coeffs[0, 1:]
    for shift in (0.0, -0.3, 1.0):
        # oracle: Pearson correlation of the two interpolated patterns on a fine grid
        th = np.linspace(0, 2 * np.pi, 4000, endpoint=False)
        k = np.arange(1, 7)
        fa = (2 * (ca[None] * np.exp(-1j * np.outer(th, k)))).real.sum(1)
        fb = (2 * (cb[None] * np.exp(-1j * np.outer(th + shift, k)))).real.sum(1)
        assert pattern_correlation(ca, cb, shift) == pytest.approx(np.corrcoef(fa, fb)[0, 1], abs=1e-10)


def test_wall_and_motion_direction_on_solved_flow(table2_solution, sensors):
    sc = table2_solution.scenario
    f = fourier_coefficients(surface_traction(table2_solution, sensors), 6)
    th = estimate_wall_direction(f)
    true_wall = sc.wall_direction_lab() - sc.pose.psi
    assert abs(math.degrees(wrap_angle(th - true_wall))) < 2.0
    md = estimate_motion_direction(f, th)
    true_motion = table2_solution.motion.direction - sc.pose.psi
    assert abs(math.degrees(wrap_angle(md.direction - true_motion))) < 2.0
    assert not md.low_confidence


def test_wall_direction_extreme_is_global():
    a, _, ft = band_limited(30, PATTERN_N, PATTERN_T)
    th = estimate_wall_direction(fourier_coefficients(a, 6))
    grid = np.linspace(0, 2 * np.pi, 200001)
    assert abs(ft(th)) >= np.abs(ft(grid)).max() - 1e-9


def test_wall_distance_formula():
    assert estimate_wall_distance(0.0, 6.0, 1.0) == pytest.approx(3.0)
    assert estimate_wall_distance(1.0, 6.0, 1.0) == pytest.approx(1.0)
    assert estimate_wall_distance(0.85, 6.0, 1.0) == pytest.approx(1.3)
    with pytest.raises(InconsistentEstimateError):
        estimate_wall_distance(0.5, 1.5, 1.0)


def test_speed_ratio_and_speed():
    fit = reference_models().speed_ratio
    R, clamped = estimate_speed_ratio(0.5, fit)
    assert R == pytest.approx(8.51, abs=1e-12) and not clamped
    R0, clamped = estimate_speed_ratio(0.0, fit)
    assert clamped and math.isfinite(R0)
    assert estimate_speed(-150.0, 3.5, 1.0) == pytest.approx(525.0)
    with pytest.raises(ValueError):
        SpeedRatioFit(1.0, -1.0)


def test_hull_membership():
    hull = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert in_expanded_hull((0.5, 0.5), hull)
    assert in_expanded_hull((1.04, 0.5), hull)
    assert not in_expanded_hull((1.2, 0.5), hull)


def test_full_estimate_degenerate_reading():
    r = StressReading(np.zeros(30), np.zeros(30))
    rep = full_estimate(r, r, 5e-3, reference_models())
    assert not any(rep.valid.values())
    assert math.isnan(rep.relpos)
    assert rep.to_dict()["relpos"] is None


def test_full_estimate_on_solved_flow(table2_solution, sensors):
    r = surface_traction(table2_solution, sensors)
    rep = full_estimate(r, None, 5e-3, reference_models())
    assert rep.valid["wall_direction"] and rep.valid["relpos"]
    assert not rep.valid["omega"]
    assert set(rep.to_dict()["units"]) >= {"relpos", "omega", "speed"}
