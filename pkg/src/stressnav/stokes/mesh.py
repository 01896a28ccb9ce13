"""Boundary discretisation: Gauss-Legendre wall panels and a trapezoidal robot contour."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ResolutionError
from ..geometry import Scenario
from .quadrature import gauss_legendre


@dataclass(frozen=True)
class Discretization:
    """Resolution controls for one boundary-integral solve (lengths in um).

    Wall panels are graded so a panel is never longer than ``gap_factor``
    times its distance to the robot, clipped to ``[h_min, h_max]``; panels
    meeting a vessel corner are halved ``corner_levels`` times.  The robot
    node count grows automatically when the robot is close to a wall.
    """

    robot_nodes: int = 128
    panel_order: int = 12
    gap_factor: float = 0.5
    h_min: float = 0.01
    h_max: float = 2.0
    corner_levels: int = 4
    corner_angle: float = 0.5
    residual_tol: float = 1e-8

    def __post_init__(self):
        if self.robot_nodes < 16 or self.robot_nodes % 2:
            raise ValueError("robot_nodes must be an even number >= 16")
        if self.panel_order < 4:
            raise ValueError("panel_order must be at least 4")

    def robot_count(self, gap: float, extent: float) -> int:
        need = int(math.ceil(40.0 * extent / max(gap, 1e-12)))
        n = max(self.robot_nodes, need + (need % 2))
        if n > 4096:
            raise ResolutionError(f"robot-wall gap {gap:.3g} um too small to resolve")
        return n

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class WallPanels:
    a: np.ndarray  # (P, 2) panel start
    b: np.ndarray  # (P, 2) panel end
    tags: list
    order: int

    def __post_init__(self):
        t, w, _ = gauss_legendre(self.order)
        self.mid = 0.5 * (self.a + self.b)
        half = 0.5 * (self.b - self.a)
        self.hl = np.hypot(half[:, 0], half[:, 1])
        self.tangent = half / self.hl[:, None]
        self.rot = self.tangent[:, 0] + 1j * self.tangent[:, 1]
        self.nodes = (self.mid[:, None, :] + self.hl[:, None, None] * t[None, :, None] * self.tangent[:, None, :]).reshape(-1, 2)
        self.weights = (self.hl[:, None] * w[None, :]).ravel()
        tan = np.repeat(self.tangent, self.order, axis=0)
        self.normal = np.column_stack([tan[:, 1], -tan[:, 0]])  # outward for a counterclockwise contour
        self.node_tags = np.repeat(np.array(self.tags), self.order)

    @property
    def n_panels(self) -> int:
        return len(self.a)

    @property
    def n_nodes(self) -> int:
        return self.n_panels * self.order

    def local_coords(self, points: np.ndarray) -> np.ndarray:
        """Complex panel-local coordinates, shape (n_points, n_panels)."""
        zp = points[:, 0] + 1j * points[:, 1]
        zm = self.mid[:, 0] + 1j * self.mid[:, 1]
        return (zp[:, None] - zm[None, :]) / (self.hl * self.rot)[None, :]


@dataclass
class RobotNodes:
    t: np.ndarray
    pts: np.ndarray
    der: np.ndarray

    def __post_init__(self):
        self.speed = np.hypot(self.der[:, 0], self.der[:, 1])
        self.tangent = self.der / self.speed[:, None]
        self.normal = np.column_stack([self.tangent[:, 1], -self.tangent[:, 0]])
        self.weights = 2 * np.pi / len(self.t) * self.speed

    @property
    def n_nodes(self) -> int:
        return len(self.t)


def robot_distance_fn(scenario: Scenario):
    shape, pose = scenario.shape, scenario.pose
    if shape.kind == "circle":
        c, r = pose.center, shape.r
        return lambda p: np.hypot(p[:, 0] - c[0], p[:, 1] - c[1]) - r
    outline = scenario.robot_outline(512)

    def dist(p):
        out = np.empty(len(p))
        for i in range(0, len(p), 2048):
            blk = p[i:i + 2048]
            out[i:i + 2048] = np.sqrt(((blk[:, None, :] - outline[None]) ** 2).sum(-1)).min(1)
        return out

    return dist


def _edge_breaks(length, hs, s, corner_start, corner_end, levels):
    dens = 1.0 / hs
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(s))])
    m = max(1, int(math.ceil(cum[-1] - 1e-9)))
    br = np.interp(np.linspace(0.0, cum[-1], m + 1), cum, s)
    br[0], br[-1] = 0.0, length
    extra = []
    if corner_start:
        first = br[1]
        extra += [first / 2**k for k in range(1, levels + 1)]
    if corner_end:
        last = length - br[-2]
        extra += [length - last / 2**k for k in range(1, levels + 1)]
    return np.unique(np.concatenate([br, extra]))


def build_walls(scenario: Scenario, disc: Discretization) -> WallPanels:
    verts, nxt, tags = scenario.vessel.contour()
    dist_fn = robot_distance_fn(scenario)
    edges = nxt - verts
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    dirs = edges / lengths[:, None]
    prev = np.roll(dirs, 1, axis=0)
    turn = np.abs(np.arctan2(prev[:, 0] * dirs[:, 1] - prev[:, 1] * dirs[:, 0], (prev * dirs).sum(1)))
    is_corner = turn > disc.corner_angle  # corner at the start vertex of each edge
    # grading away from short polyline edges
    vlen = np.minimum(lengths, np.roll(lengths, 1))
    fine = vlen < disc.h_max

    a_list, b_list, tag_list = [], [], []
    n_e = len(verts)
    for e in range(n_e):
        ns = int(np.clip(math.ceil(lengths[e] / 0.02), 8, 4000))
        s = np.linspace(0.0, lengths[e], ns)
        pts = verts[e] + s[:, None] * dirs[e]
        hs = np.clip(disc.gap_factor * dist_fn(pts), disc.h_min, disc.h_max)
        if fine.any():
            vv = verts[fine]
            dv = np.sqrt(((pts[:, None, :] - vv[None]) ** 2).sum(-1))
            hs = np.minimum(hs, (vlen[fine][None, :] + 0.5 * dv).min(1))
        br = _edge_breaks(lengths[e], hs, s, is_corner[e], is_corner[(e + 1) % n_e], disc.corner_levels)
        a_list.append(verts[e] + br[:-1, None] * dirs[e])
        b_list.append(verts[e] + br[1:, None] * dirs[e])
        tag_list += [tags[e]] * (len(br) - 1)
    return WallPanels(np.concatenate(a_list), np.concatenate(b_list), tag_list, disc.panel_order)


def build_robot(scenario: Scenario, n: int) -> RobotNodes:
    t = 2 * np.pi * np.arange(n) / n
    pts, der = scenario.shape.boundary(t, scenario.pose)
    return RobotNodes(t, pts, der)
