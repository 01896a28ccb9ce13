"""Quasi-static time stepping and position scans built on :func:`solve_flow`."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import GeometryViolation, StressNavError, SolverError
from ..geometry import RigidMotion, RobotPose, Scenario
from .mesh import Discretization
from .solver import FlowSolution, solve_flow

log = logging.getLogger(__name__)


@dataclass
class AdvanceResult:
    scenario: Scenario
    start_motion: RigidMotion
    steps: int
    solves: int
    displacement: np.ndarray  # um, in the lab frame (includes any comoving shift)
    rotation: float  # rad

    def mean_omega(self, dt: float) -> float:
        return self.rotation / dt if dt > 0 else 0.0


def _moved(sc: Scenario, m: RigidMotion, h: float, comoving: bool) -> Scenario:
    p = sc.pose
    x = p.x if comoving else p.x + m.vx * h
    pose = RobotPose(x, p.y + m.vy * h, p.psi + m.omega * h)
    new = sc.with_pose(pose)
    if not new.min_gap() > 0:
        raise GeometryViolation(f"robot reached the wall near ({pose.x:.3f}, {pose.y:.3f})")
    return new


def advance_detailed(
    scenario: Scenario,
    dt: float,
    disc: Discretization | None = None,
    *,
    max_step: float = 1e-3,
    tol: float = 1e-3,
    min_step: float = 1e-7,
    comoving: bool = False,
    first: FlowSolution | None = None,
) -> AdvanceResult:
    """Explicit Euler with step-halving error control.

    Each step compares one Euler step of size h with two of size h/2 and
    keeps the two-half-step result when they agree to ``tol`` (um; rotation
    counts as arc length on the robot radius), otherwise h is halved.

    With ``comoving`` a straight vessel is treated as a window on an infinite
    vessel that travels with the robot, so the axial coordinate stays fixed
    while the distance travelled is still reported in ``displacement``.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    disc = disc or Discretization()
    if comoving and scenario.vessel.kind != "straight":
        raise ValueError("comoving stepping needs a straight vessel")
    cur = scenario
    sol0 = first if first is not None else (solve_flow(cur, disc) if dt > 0 else None)
    start = sol0.motion if sol0 is not None else RigidMotion(0.0, 0.0, 0.0)
    if dt == 0:
        return AdvanceResult(scenario, start, 0, 0, np.zeros(2), 0.0)
    solves = 0 if first is not None else 1
    m_cur = start
    t, h, steps = 0.0, min(max_step, dt), 0
    disp = np.zeros(2)
    rot = 0.0
    r = scenario.shape.radius
    while t < dt * (1 - 1e-12):
        h = min(h, dt - t)
        full = _moved(cur, m_cur, h, comoving)
        half = _moved(cur, m_cur, h / 2, comoving)
        m_half = solve_flow(half, disc).motion
        solves += 1
        two = _moved(half, m_half, h / 2, comoving)
        d = np.array([two.pose.x - full.pose.x, two.pose.y - full.pose.y])
        if comoving:
            d[0] = (m_half.vx - m_cur.vx) * h / 2
        err = max(float(np.hypot(*d)), r * abs(two.pose.psi - full.pose.psi))
        if err <= tol:
            disp += np.array([m_cur.vx + m_half.vx, m_cur.vy + m_half.vy]) * h / 2
            rot += (m_cur.omega + m_half.omega) * h / 2
            cur, t, steps = two, t + h, steps + 1
            if t < dt * (1 - 1e-12):
                m_cur = solve_flow(cur, disc).motion
                solves += 1
            if err < tol / 4:
                h = min(2 * h, max_step)
        else:
            h /= 2
            if h < min_step:
                raise SolverError(f"step size fell below {min_step} s (error {err:.3g} um)")
    return AdvanceResult(cur, start, steps, solves, disp, rot)


def advance(scenario: Scenario, dt: float, disc: Discretization | None = None, **kwargs) -> Scenario:
    """Move the robot by its solved rigid motion over ``dt`` seconds."""
    return advance_detailed(scenario, dt, disc, **kwargs).scenario


@dataclass
class ScanRow:
    y_c: float
    speed: float
    omega: float
    vx: float
    vy: float
    error: str | None = None


def speed_profile_scan(template: Scenario, y_grid, disc: Discretization | None = None) -> list[ScanRow]:
    """Solve once per vertical robot position; failures are recorded and the scan continues."""
    rows = []
    for y in np.asarray(y_grid, float):
        sc = template.with_pose(replace(template.pose, y=float(y)))
        try:
            m = solve_flow(sc, disc).motion
            rows.append(ScanRow(float(y), m.speed, m.omega, m.vx, m.vy))
        except (StressNavError, ValueError) as exc:
            log.warning("scan point y_c=%.3f failed: %s", y, exc)
            rows.append(ScanRow(float(y), math.nan, math.nan, math.nan, math.nan, str(exc)))
    return rows
