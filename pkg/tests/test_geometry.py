import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stressnav.errors import InvalidGeometryError
from stressnav.geometry import RobotPose, RobotShape, Scenario, VesselGeometry, table2_scenario
from stressnav.physics import (
    FluidProperties,
    diffusion_coefficient,
    peclet,
    relative_position,
    reynolds,
    rotational_diffusion,
    womersley,
)


def test_relative_position_examples():
    assert relative_position(0.0, 6.0, 1.0) == 0.0
    assert relative_position(-1.7, 6.0, 1.0) == pytest.approx(0.85, abs=1e-15)
    assert relative_position(2.0, 6.0, 1.0) == 1.0


@given(st.floats(2.1, 20.0), st.floats(0.1, 1.0), st.floats(-1.0, 1.0))
def test_relative_position_symmetric_and_bounded(d, r, frac):
    free = d / 2 - r
    y = frac * free
    v = relative_position(y, d, r)
    assert 0.0 <= v <= 1.0
    assert v == relative_position(-y, d, r)


def test_relative_position_rejects_outside():
    with pytest.raises(InvalidGeometryError):
        relative_position(2.5, 6.0, 1.0)
    with pytest.raises(InvalidGeometryError):
        relative_position(0.0, 2.0, 1.0)


def test_dimensionless_numbers():
    nu = FluidProperties().nu
    assert nu == pytest.approx(1e-6)
    assert reynolds(1e-3, 6e-6, nu) == pytest.approx(6e-3)
    assert womersley(1e-6, nu, 1e-3) == pytest.approx(1e-6 / math.sqrt(1e-9))
    D = diffusion_coefficient(1e-6, 310.0, 1e-3)
    assert D == pytest.approx(1.380649e-23 * 310 / (6 * math.pi * 1e-9))
    assert rotational_diffusion(1e-6, 310.0, 1e-3) == pytest.approx(1.380649e-23 * 310 / (8 * math.pi * 1e-21))
    assert peclet(-1e-3, 1e-6, D) == pytest.approx(1e-9 / D)


def test_table2_geometry_truth():
    sc = table2_scenario()
    assert sc.relative_position() == pytest.approx(0.85)
    assert sc.wall_distance() == pytest.approx(1.3)
    assert sc.local_diameter() == pytest.approx(6.0)
    assert sc.min_gap() == pytest.approx(0.3)
    # nearest wall is straight below the centre
    assert sc.wall_direction_lab() == pytest.approx(-math.pi / 2)


def test_robot_outside_vessel_rejected():
    sc = table2_scenario().with_pose(RobotPose(5.0, -2.5, 0.0))
    with pytest.raises(InvalidGeometryError):
        sc.validate()


def test_ellipse_shape():
    e = RobotShape.equal_volume_spheroid(2.0)
    assert e.a * e.b**2 == pytest.approx(1.0)
    assert e.support_distance(0.0) == pytest.approx(2.0)
    assert e.support_distance(math.pi / 2) == pytest.approx(e.b)
    with pytest.raises(InvalidGeometryError):
        RobotShape.ellipse(1.0, 2.0)


def test_curved_vessel_keeps_width_away_from_bump():
    v = VesselGeometry.curved(6.0)
    for s_arc in (5.0, 35.0, 45.0):
        lo, up = v.wall_polylines()
        # centreline point at arc length s_arc
        p = v.params
        if s_arc <= p["straight_length"]:
            c = np.array([s_arc, 0.0])
        else:
            b = (s_arc - p["straight_length"]) / p["arc_radius"]
            c = np.array([p["straight_length"] + p["arc_radius"] * math.sin(b), p["arc_radius"] * (1 - math.cos(b))])
        assert v.local_diameter(c) == pytest.approx(6.0, abs=0.02)
    bump = np.array([p["bump_center"], 0.0])
    assert v.local_diameter(bump) == pytest.approx(6.0 - p["bump_height"], abs=0.02)


def test_scenario_json_roundtrip(tmp_path):
    for sc in (table2_scenario(), Scenario(FluidProperties(), VesselGeometry.curved(6.0), RobotShape(), RobotPose(8, -1, 0), 400.0)):
        path = tmp_path / "s.json"
        sc.save(path)
        back = Scenario.load(path)
        assert back.to_dict() == sc.to_dict()
        json.loads(path.read_text())


def test_malformed_scenario():
    with pytest.raises(ValueError):
        Scenario.from_dict({"vessel": {"d": 6}})
