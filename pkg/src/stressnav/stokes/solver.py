"""Steady 2D Stokes flow past a force- and torque-free rigid robot in a vessel.

The velocity is represented as a single-layer potential on the closed vessel
contour (walls plus both end segments) and on the robot surface.  Unknowns
are the scaled layer density ``psi = phi / (4 pi mu)`` (``phi`` is the force
per length applied to the fluid) together with the robot's rigid motion.
Writing the system for ``psi`` makes it independent of viscosity; tractions
scale with ``mu`` afterwards.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..errors import ResolutionError, SolverError
from ..geometry import RigidMotion, RobotPose, Scenario, VesselGeometry, points_inside, segment_distances
from ..sensors import SensorArray, StressReading
from .mesh import Discretization, RobotNodes, WallPanels, build_robot, build_walls
from .quadrature import NEAR_RHO, bernstein_rho, gauss_legendre, kress_matrix, near_panel_weights

log = logging.getLogger(__name__)

# Pa * um -> N/m and Pa * um^2 -> N
_FORCE_SI = 1e-6
_TORQUE_SI = 1e-12
FIELD_MARGIN = 0.01  # um


def inlet_profile(vessel: VesselGeometry, u: float):
    """Prescribed velocities on the end segments: Poiseuille with the same flux at both ends."""
    mid0, w0, ax0 = vessel.end_geometry(0)
    mid1, w1, ax1 = vessel.end_geometry(1)

    def end_velocity(points, which):
        mid, w, ax = (mid0, w0, ax0) if which == 0 else (mid1, w1, ax1)
        umax = u if which == 0 else u * w0 / w1
        s = (points - mid) @ np.array([-ax[1], ax[0]])
        prof = umax * np.clip(1.0 - (2.0 * s / w) ** 2, 0.0, None)
        return prof[:, None] * ax[None, :]

    return end_velocity


def _far_blocks(tgt, src, w, L0):
    """Trapezoid/Gauss kernel blocks (-log(r/L0) I + r r^T / r^2) * w_j, zero where r = 0."""
    rx = tgt[:, 0, None] - src[None, :, 0]
    ry = tgt[:, 1, None] - src[None, :, 1]
    r2 = rx * rx + ry * ry
    zero = r2 == 0.0
    r2 = np.where(zero, 1.0, r2)
    lg = -0.5 * np.log(r2 / (L0 * L0))
    inv = w[None, :] / r2
    gxx = lg * w[None, :] + rx * rx * inv
    gyy = lg * w[None, :] + ry * ry * inv
    gxy = rx * ry * inv
    for g in (gxx, gyy, gxy):
        g[zero] = 0.0
    return gxx, gxy, gyy


def _near_wall_pairs(walls: WallPanels, tgt: np.ndarray, L0: float):
    """Special-quadrature blocks for (target, wall panel) pairs that are too close for Gauss-Legendre."""
    z = walls.local_coords(tgt)
    ti, pj = np.nonzero(bernstein_rho(z) < NEAR_RHO)
    if ti.size == 0:
        return ti, pj, None
    p = walls.order
    _, wgl, _ = gauss_legendre(p)
    wlog, wrr, wcau = near_panel_weights(z[ti, pj], p)
    hl = walls.hl[pj][:, None]
    logw = hl * (np.log(hl / L0) * wgl[None, :] + wlog)
    e = walls.rot[pj][:, None]
    big = e * e * wrr
    xx = 0.5 * hl * (wgl[None, :] + big.real)
    yy = 0.5 * hl * (wgl[None, :] - big.real)
    xy = 0.5 * hl * big.imag
    cau = -np.conj(e) * wcau  # acts on psi_x + i psi_y for the pressure kernel
    return ti, pj, (-logw + xx, xy, -logw + yy, cau)


@dataclass
class _Layer:
    walls: WallPanels
    robot: RobotNodes | None
    psi_w: np.ndarray
    psi_r: np.ndarray | None
    L0: float
    scenario: Scenario | None

    def _robot_fine(self, factor: int):
        n = self.robot.n_nodes
        m = n * factor
        t = 2 * np.pi * np.arange(m) / m
        pts, der = self.scenario.shape.boundary(t, self.scenario.pose)
        spec = np.fft.fft(self.psi_r, axis=0)
        pad = np.zeros((m, 2), complex)
        h = n // 2
        pad[:h] = spec[:h]
        pad[-h + 1:] = spec[-h + 1:]
        pad[h] = 0.5 * spec[h]
        pad[-h] = 0.5 * spec[h]
        dens = np.fft.ifft(pad, axis=0).real * factor
        w = 2 * np.pi / m * np.hypot(der[:, 0], der[:, 1])
        return pts, w, dens

    def _robot_sources(self, tgt):
        """Robot quadrature per target: plain trapezoid, or upsampled for near targets."""
        rob = self.robot
        h = rob.weights.max()
        d = np.sqrt(((tgt[:, None, :] - rob.pts[None]) ** 2).sum(-1)).min(1)
        near = d < 5 * h
        return near, h, d

    def velocity(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        w = self.walls
        gxx, gxy, gyy = _far_blocks(pts, w.nodes, w.weights, self.L0)
        ti, pj, blk = _near_wall_pairs(w, pts, self.L0)
        if ti.size:
            cols = pj[:, None] * w.order + np.arange(w.order)[None, :]
            rows = np.broadcast_to(ti[:, None], cols.shape)
            gxx[rows, cols], gxy[rows, cols], gyy[rows, cols] = blk[0], blk[1], blk[2]
        u = np.column_stack([gxx @ self.psi_w[:, 0] + gxy @ self.psi_w[:, 1], gxy @ self.psi_w[:, 0] + gyy @ self.psi_w[:, 1]])
        if self.robot is not None:
            near, h, d = self._robot_sources(pts)
            far = ~near
            if far.any():
                a, b, c = _far_blocks(pts[far], self.robot.pts, self.robot.weights, self.L0)
                u[far] += np.column_stack([a @ self.psi_r[:, 0] + b @ self.psi_r[:, 1], b @ self.psi_r[:, 0] + c @ self.psi_r[:, 1]])
            if near.any():
                factor = int(min(32, 2 ** math.ceil(math.log2(max(5 * h / max(d[near].min(), 1e-9), 2)))))
                fp, fw, fd = self._robot_fine(factor)
                a, b, c = _far_blocks(pts[near], fp, fw, self.L0)
                u[near] += np.column_stack([a @ fd[:, 0] + b @ fd[:, 1], b @ fd[:, 0] + c @ fd[:, 1]])
        return u

    def pressure_scaled(self, pts: np.ndarray) -> np.ndarray:
        """Pressure divided by 2 mu."""
        pts = np.atleast_2d(np.asarray(pts, float))

        def far(src, wts, dens, tgt):
            rx = tgt[:, 0, None] - src[None, :, 0]
            ry = tgt[:, 1, None] - src[None, :, 1]
            r2 = rx * rx + ry * ry
            return ((rx * dens[None, :, 0] + ry * dens[None, :, 1]) * wts[None] / r2).sum(1)

        w = self.walls
        p = far(w.nodes, w.weights, self.psi_w, pts)
        ti, pj, blk = _near_wall_pairs(w, pts, self.L0)
        if ti.size:
            cols = pj[:, None] * w.order + np.arange(w.order)[None, :]
            src = w.nodes[cols]
            dens = self.psi_w[cols]
            rx = pts[ti, 0, None] - src[..., 0]
            ry = pts[ti, 1, None] - src[..., 1]
            gl = (rx * dens[..., 0] + ry * dens[..., 1]) * w.weights[cols] / (rx * rx + ry * ry)
            cau = blk[3]
            spec = cau.real * dens[..., 0] - cau.imag * dens[..., 1]
            np.add.at(p, ti, spec.sum(1) - gl.sum(1))
        if self.robot is not None:
            near, h, d = self._robot_sources(pts)
            if (~near).any():
                p[~near] += far(self.robot.pts, self.robot.weights, self.psi_r, pts[~near])
            if near.any():
                factor = int(min(32, 2 ** math.ceil(math.log2(max(5 * h / max(d[near].min(), 1e-9), 2)))))
                fp, fw, fd = self._robot_fine(factor)
                p[near] += far(fp, fw, fd, pts[near])
        return p


@dataclass
class FlowSolution:
    """Solved flow: rigid motion, robot surface traction and diagnostics.

    ``traction`` is the lab-frame force per area (Pa) the fluid exerts on the
    robot at the robot nodes, with the outlet pressure as reference.
    """

    scenario: Scenario
    motion: RigidMotion | None
    robot_t: np.ndarray | None
    traction: np.ndarray | None
    net_force: np.ndarray
    net_torque: float
    residual: float
    n_unknowns: int
    timings: dict
    discretization: Discretization
    _layer: _Layer = field(repr=False, default=None)

    # surface data -----------------------------------------------------
    def _components_at_nodes(self):
        rob = self._layer.robot
        fn = (self.traction * rob.normal).sum(1)
        ft = (self.traction * rob.tangent).sum(1)
        return fn, ft

    def traction_at(self, t: np.ndarray):
        """Normal and tangential traction at body parameters ``t`` (spectral interpolation)."""
        fn, ft = self._components_at_nodes()
        return trig_interp(fn, t), trig_interp(ft, t)

    def velocity(self, pts):
        """Fluid velocity (um/s) at points strictly inside the fluid."""
        return self._layer.velocity(pts)

    def pressure(self, pts):
        """Pressure (Pa) relative to the outlet."""
        mu = self.scenario.fluid.eta
        return 2 * mu * (self._layer.pressure_scaled(pts) - self._p_out)

    def scale_check(self) -> dict:
        """Net force and torque relative to eta*u (and eta*u*r)."""
        sc = self.scenario
        ref = sc.fluid.eta * abs(sc.inlet_u) * 1e-6
        if ref == 0:
            return {"force": 0.0, "torque": 0.0}
        return {
            "force": float(np.hypot(*self.net_force) / ref),
            "torque": float(abs(self.net_torque) / (ref * sc.shape.radius * 1e-6)),
        }

    def to_dict(self, sensors: SensorArray | None = None) -> dict:
        out = {
            "scenario": self.scenario.to_dict(),
            "motion": None if self.motion is None else {
                "vx": self.motion.vx, "vy": self.motion.vy, "omega": self.motion.omega, "speed": self.motion.speed,
            },
            "residuals": {
                "net_force_N_per_m": self.net_force.tolist(),
                "net_torque_N": self.net_torque,
                "linear_residual": self.residual,
                "relative": self.scale_check(),
            },
            "n_unknowns": self.n_unknowns,
            "timings_s": self.timings,
            "discretization": self.discretization.to_dict(),
        }
        if sensors is not None and self.motion is not None:
            out["reading"] = surface_traction(self, sensors).to_dict()
            out["sensor_angles"] = sensors.angles.tolist()
        return out

    def to_json(self, sensors: SensorArray | None = None) -> str:
        return json.dumps(self.to_dict(sensors), indent=2)

    def field_csv(self, nx: int = 80, ny: int = 30) -> str:
        """Velocity and pressure on a grid of interior points as CSV text (x, y, u_x, u_y, p)."""
        verts, nxt, _ = self.scenario.vessel.contour()
        xs = np.linspace(verts[:, 0].min(), verts[:, 0].max(), nx)
        ys = np.linspace(verts[:, 1].min(), verts[:, 1].max(), ny)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        keep = points_inside(pts, verts)
        # drop points on or hugging a boundary, where the layer potential is singular
        keep &= segment_distances(pts, verts, nxt) > FIELD_MARGIN
        if self.motion is not None:
            outline = self.scenario.robot_outline(256)
            keep &= ~points_inside(pts, outline)
            keep &= segment_distances(pts, outline, np.roll(outline, -1, axis=0)) > FIELD_MARGIN
        pts = pts[keep]
        vel = self.velocity(pts)
        p = self.pressure(pts)
        rows = ["x,y,u_x,u_y,p"]
        rows += [f"{a:.6g},{b:.6g},{c:.6g},{d:.6g},{e:.6g}" for a, b, c, d, e in zip(pts[:, 0], pts[:, 1], vel[:, 0], vel[:, 1], p)]
        return "\n".join(rows) + "\n"


def trig_interp(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Band-limited interpolation of samples on a uniform periodic grid."""
    n = len(values)
    c = np.fft.rfft(values) / n
    k = np.arange(len(c))
    t = np.asarray(t, float)
    ph = np.exp(1j * np.multiply.outer(t, k))
    scale = np.full(len(c), 2.0)
    scale[0] = 1.0
    if n % 2 == 0:
        scale[-1] = 1.0
        ph[..., -1] = np.cos(np.multiply.outer(t, k[-1]))
    return (ph * (scale * c)).real.sum(-1)


def _length_scale(vessel: VesselGeometry) -> float:
    verts, _, _ = vessel.contour()
    span = verts.max(0) - verts.min(0)
    return 2.0 * float(np.hypot(*span))


def _assemble(walls: WallPanels, robot: RobotNodes | None, L0: float):
    nw = walls.n_nodes
    nr = 0 if robot is None else robot.n_nodes
    nodes = walls.nodes if robot is None else np.concatenate([walls.nodes, robot.pts])
    weights = walls.weights if robot is None else np.concatenate([walls.weights, robot.weights])
    gxx, gxy, gyy = _far_blocks(nodes, nodes, weights, L0)

    ti, pj, blk = _near_wall_pairs(walls, nodes, L0)
    cols = pj[:, None] * walls.order + np.arange(walls.order)[None, :]
    rows = np.broadcast_to(ti[:, None], cols.shape)
    gxx[rows, cols], gxy[rows, cols], gyy[rows, cols] = blk[0], blk[1], blk[2]

    if robot is not None:
        n = nr
        sl = slice(nw, nw + n)
        rk = kress_matrix(n)
        dx = robot.pts[:, 0, None] - robot.pts[None, :, 0]
        dy = robot.pts[:, 1, None] - robot.pts[None, :, 1]
        r2 = dx * dx + dy * dy
        dt = robot.t[:, None] - robot.t[None, :]
        s2 = 4.0 * np.sin(0.5 * dt) ** 2
        np.fill_diagonal(r2, 1.0)
        np.fill_diagonal(s2, 1.0)
        hmat = 0.5 * np.log(r2) - 0.5 * np.log(s2)
        np.fill_diagonal(hmat, np.log(robot.speed))
        h = 2 * np.pi / n
        sp = robot.speed[None, :]
        lg = -0.5 * rk * sp + h * (-hmat + math.log(L0)) * sp
        inv = h * sp / r2
        rxx, ryy, rxy = dx * dx * inv, dy * dy * inv, dx * dy * inv
        tau = robot.tangent
        idx = np.arange(n)
        rxx[idx, idx] = h * robot.speed * tau[:, 0] ** 2
        ryy[idx, idx] = h * robot.speed * tau[:, 1] ** 2
        rxy[idx, idx] = h * robot.speed * tau[:, 0] * tau[:, 1]
        gxx[sl, sl] = lg + rxx
        gyy[sl, sl] = lg + ryy
        gxy[sl, sl] = rxy

    N = nw + nr
    extra = 0 if robot is None else 3
    A = np.zeros((2 * N + extra, 2 * N + extra))
    A[0:2 * N:2, 0:2 * N:2] = gxx
    A[0:2 * N:2, 1:2 * N:2] = gxy
    A[1:2 * N:2, 0:2 * N:2] = gxy
    A[1:2 * N:2, 1:2 * N:2] = gyy

    # rank-one terms removing the normal-density null space of each closed contour
    def fix(rows_sl, normal, wts):
        perim = wts.sum()
        nn = np.zeros((2 * len(wts),))
        nn[0::2], nn[1::2] = normal[:, 0] * wts, normal[:, 1] * wts
        lhs = np.zeros((2 * len(wts),))
        lhs[0::2], lhs[1::2] = normal[:, 0], normal[:, 1]
        A[rows_sl, rows_sl] += np.outer(lhs, nn) / perim

    fix(slice(0, 2 * nw), walls.normal, walls.weights)
    if robot is not None:
        fix(slice(2 * nw, 2 * N), robot.normal, robot.weights)
    return A, N, nw, nr


def _solve_system(scenario: Scenario, disc: Discretization, with_robot: bool, ext_force=(0.0, 0.0), ext_torque=0.0):
    t0 = time.perf_counter()
    vessel = scenario.vessel
    L0 = _length_scale(vessel)
    robot = None
    if with_robot:
        gap = scenario.min_gap()
        if gap < disc.h_min:
            raise ResolutionError(f"robot-wall gap {gap:.3g} um is below the minimum element size {disc.h_min}")
        robot = build_robot(scenario, disc.robot_count(gap, scenario.shape.max_extent))
    walls = build_walls(scenario, disc) if with_robot else build_walls_empty(scenario, disc)
    t1 = time.perf_counter()
    A, N, nw, nr = _assemble(walls, robot, L0)
    t2 = time.perf_counter()

    b = np.zeros(A.shape[0])
    endvel = inlet_profile(vessel, scenario.inlet_u)
    for which, tag in ((0, "end0"), (1, "end1")):
        sel = np.nonzero(walls.node_tags == tag)[0]
        vel = endvel(walls.nodes[sel], which)
        b[2 * sel] = vel[:, 0]
        b[2 * sel + 1] = vel[:, 1]

    if robot is not None:
        c = scenario.pose.center
        rows = np.arange(nw, N)
        rel = robot.pts - c
        iv = 2 * N
        A[2 * rows, iv] = -1.0
        A[2 * rows + 1, iv + 1] = -1.0
        A[2 * rows, iv + 2] = rel[:, 1]
        A[2 * rows + 1, iv + 2] = -rel[:, 0]
        w = robot.weights
        A[iv, 2 * rows] = w
        A[iv + 1, 2 * rows + 1] = w
        A[iv + 2, 2 * rows] = -rel[:, 1] * w
        A[iv + 2, 2 * rows + 1] = rel[:, 0] * w
        four_pi_mu = 4 * np.pi * scenario.fluid.eta
        # external loads are given in N/m and N; convert to the Pa*um units of the density
        b[iv] = ext_force[0] / _FORCE_SI / four_pi_mu
        b[iv + 1] = ext_force[1] / _FORCE_SI / four_pi_mu
        b[iv + 2] = ext_torque / _TORQUE_SI / four_pi_mu

    try:
        lu = sla.lu_factor(A, check_finite=False)
        x = sla.lu_solve(lu, b, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"linear solve failed: {exc}") from exc
    if not np.isfinite(x).all():
        raise ResolutionError("non-finite solution; the geometry is not resolved")
    bnorm = max(np.linalg.norm(b), 1e-300)
    res = float(np.linalg.norm(A @ x - b) / bnorm) if bnorm > 1e-300 else 0.0
    t3 = time.perf_counter()
    if res > disc.residual_tol:
        raise SolverError(f"linear residual {res:.2e} exceeds tolerance {disc.residual_tol:.1e}")

    psi = x[:2 * N].reshape(N, 2)
    layer = _Layer(walls, robot, psi[:nw], None if robot is None else psi[nw:], L0, scenario)
    timings = {"mesh": t1 - t0, "assemble": t2 - t1, "solve": t3 - t2}
    return layer, x, res, timings, 2 * N + (3 if robot is not None else 0)


def build_walls_empty(scenario: Scenario, disc: Discretization) -> WallPanels:
    """Wall panels without a robot to grade toward (uniform h_max away from corners)."""
    from dataclasses import replace as _replace
    far_pose = RobotPose(1e9, 1e9, 0.0)
    return build_walls(_replace(scenario, pose=far_pose), disc)


def _finish(scenario, disc, layer, x, res, timings, n_unknowns) -> FlowSolution:
    mu = scenario.fluid.eta
    t0 = time.perf_counter()
    mid, width, axis = scenario.vessel.end_geometry(1)
    probe = mid - axis * min(0.25 * width, 0.5)
    p_out = layer.pressure_scaled(probe[None])[0]
    robot = layer.robot
    if robot is None:
        sol = FlowSolution(scenario, None, None, None, np.zeros(2), 0.0, res, n_unknowns, timings, disc, layer)
        sol._p_out = p_out
        return sol
    N = layer.walls.n_nodes + robot.n_nodes
    vx, vy, om = x[2 * N:2 * N + 3]
    p_in = layer.pressure_scaled(scenario.pose.center[None])[0]
    phi = 4 * np.pi * mu * layer.psi_r
    traction = -phi - 2 * mu * (p_in - p_out) * robot.normal
    rel = robot.pts - scenario.pose.center
    force = (traction * robot.weights[:, None]).sum(0) * _FORCE_SI
    torque = float(((rel[:, 0] * traction[:, 1] - rel[:, 1] * traction[:, 0]) * robot.weights).sum()) * _TORQUE_SI
    timings["traction"] = time.perf_counter() - t0
    sol = FlowSolution(scenario, RigidMotion(float(vx), float(vy), float(om)), robot.t, traction, force, torque, res, n_unknowns, timings, disc, layer)
    sol._p_out = p_out
    return sol


def solve_flow(scenario: Scenario, disc: Discretization | None = None, *, external_force=(0.0, 0.0), external_torque=0.0) -> FlowSolution:
    """Solve for the rigid motion of a free robot and the traction on its surface.

    ``external_force`` (N/m) and ``external_torque`` (N) replace the
    force-free and torque-free conditions; they exist for mobility tests.
    """
    disc = disc or Discretization()
    scenario.validate()
    layer, x, res, timings, nu = _solve_system(scenario, disc, True, external_force, external_torque)
    sol = _finish(scenario, disc, layer, x, res, timings, nu)
    log.debug("solved %d unknowns in %.3fs", nu, sum(timings.values()))
    return sol


def solve_channel(scenario: Scenario, disc: Discretization | None = None) -> FlowSolution:
    """Solve the same vessel and inlet with the robot removed."""
    disc = disc or Discretization()
    layer, x, res, timings, nu = _solve_system(scenario, disc, False)
    return _finish(scenario, disc, layer, x, res, timings, nu)


def surface_traction(sol: FlowSolution, sensors: SensorArray, pose: RobotPose | None = None, timestamp: float = 0.0) -> StressReading:
    """Sample the traction at the sensors and apply the zero-mean normal-stress gauge.

    ``pose`` defaults to the pose the flow was solved for; passing a pose that
    differs only in orientation is valid for circular robots, whose flow does
    not depend on orientation.
    """
    if sol.motion is None:
        raise SolverError("flow solution has no robot")
    sc = sol.scenario
    pose = pose or sc.pose
    if sc.shape.kind != "circle" and pose != sc.pose:
        raise ValueError("a non-circular robot must be sampled at the pose it was solved for")
    dpsi = pose.psi - sc.pose.psi
    t = sc.shape.param_from_body_angle(sensors.angles) + dpsi
    fn, ft = sol.traction_at(t)
    return StressReading(fn, ft, timestamp).gauge_normalized()
