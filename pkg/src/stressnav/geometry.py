"""Vessel, robot and scenario descriptions.

All lengths are micrometres, speeds micrometres per second, angles radians
measured counterclockwise from the x axis.  A vessel is stored as two wall
polylines running from the upstream end (``end0``) to the downstream end
(``end1``); the fluid domain is the polygon they close with the two end
segments.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidGeometryError
from .physics import FluidProperties, relative_position, reynolds

RE_WARN = 0.1

CURVED_DEFAULTS = {
    "straight_length": 30.0,
    "arc_radius": 40.0,
    "arc_angle": 0.6,
    "bump_wall": "lower",
    "bump_center": 22.0,
    "bump_height": 1.0,
    "bump_width": 0.8,
}


@dataclass(frozen=True)
class RobotShape:
    kind: str = "circle"
    r: float = 1.0
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        if self.kind == "circle":
            if not self.r > 0:
                raise InvalidGeometryError("robot radius must be positive")
        elif self.kind == "ellipse":
            if self.a is None or self.b is None or not (self.a >= self.b > 0):
                raise InvalidGeometryError("ellipse needs a >= b > 0")
        else:
            raise InvalidGeometryError(f"unknown robot kind {self.kind!r}")

    @classmethod
    def ellipse(cls, a: float, b: float) -> "RobotShape":
        return cls(kind="ellipse", r=math.sqrt(a * b), a=a, b=b)

    @classmethod
    def equal_volume_spheroid(cls, a: float, r: float = 1.0) -> "RobotShape":
        """Cross-section of a prolate spheroid with the volume of a sphere of radius r."""
        return cls.ellipse(a, r**1.5 / math.sqrt(a))

    @property
    def semi_axes(self) -> tuple[float, float]:
        if self.kind == "circle":
            return self.r, self.r
        return self.a, self.b

    @property
    def radius(self) -> float:
        """Nominal radius used by the circular-robot estimators."""
        return self.r

    @property
    def max_extent(self) -> float:
        return max(self.semi_axes)

    def boundary(self, t: np.ndarray, pose: "RobotPose"):
        """Points and parameter derivatives at body parameters t (counterclockwise from the front)."""
        a, b = self.semi_axes
        c, s = math.cos(pose.psi), math.sin(pose.psi)
        bx, by = a * np.cos(t), b * np.sin(t)
        dbx, dby = -a * np.sin(t), b * np.cos(t)
        pts = np.column_stack([pose.x + c * bx - s * by, pose.y + s * bx + c * by])
        der = np.column_stack([c * dbx - s * dby, s * dbx + c * dby])
        return pts, der

    def param_from_body_angle(self, theta):
        a, b = self.semi_axes
        return np.arctan2(a * np.sin(theta), b * np.cos(theta))

    def normal_angle(self, theta):
        """Body-frame direction of the outward normal at the surface point seen at polar angle theta."""
        a, b = self.semi_axes
        t = self.param_from_body_angle(theta)
        return np.arctan2(a * np.sin(t), b * np.cos(t))

    def support_distance(self, direction: float) -> float:
        """Centre-to-wall distance at which the robot touches a wall lying in body direction ``direction``."""
        a, b = self.semi_axes
        return math.hypot(a * math.cos(direction), b * math.sin(direction))

    def to_dict(self) -> dict:
        if self.kind == "circle":
            return {"kind": "circle", "r": self.r}
        return {"kind": "ellipse", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class RobotPose:
    x: float
    y: float
    psi: float = 0.0

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class RigidMotion:
    vx: float
    vy: float
    omega: float

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def direction(self) -> float:
        return math.atan2(self.vy, self.vx)

    def scaled(self, c: float) -> "RigidMotion":
        return RigidMotion(self.vx * c, self.vy * c, self.omega * c)


def _curved_walls(d: float, p: dict, max_turn: float = 0.1, max_len: float = 2.0):
    ls, rc, ang = p["straight_length"], p["arc_radius"], p["arc_angle"]
    sb, hb, wb = p["bump_center"], p["bump_height"], p["bump_width"]
    total = ls + rc * ang
    s = np.linspace(0.0, total, int(np.ceil(total / 0.005)) + 1)
    beta = np.clip((s - ls) / rc, 0.0, None)
    cx = np.where(s <= ls, s, ls + rc * np.sin(beta))
    cy = np.where(s <= ls, 0.0, rc - rc * np.cos(beta))
    nx, ny = -np.sin(beta), np.cos(beta)
    bump = hb * np.exp(-0.5 * ((s - sb) / wb) ** 2)
    bump[np.abs(s - sb) > 5 * wb] = 0.0
    off_up = d / 2 - (bump if p["bump_wall"] == "upper" else 0.0)
    off_lo = d / 2 - (bump if p["bump_wall"] == "lower" else 0.0)
    walls = []
    for pts in (np.column_stack([cx - off_lo * nx, cy - off_lo * ny]), np.column_stack([cx + off_up * nx, cy + off_up * ny])):
        # keep vertices so each polyline edge turns by at most max_turn and is at most max_len long
        seg = np.diff(pts, axis=0)
        ang_seg = np.unwrap(np.arctan2(seg[:, 1], seg[:, 0]))
        turn = np.concatenate([[0.0], np.abs(np.diff(ang_seg))])
        length = np.hypot(seg[:, 0], seg[:, 1])
        dens = np.cumsum(np.maximum(turn / max_turn, length / max_len))
        n = int(np.ceil(dens[-1]))
        idx = np.searchsorted(dens, np.arange(1, n) * dens[-1] / n)
        keep = np.unique(np.concatenate([[0], idx, [len(pts) - 1]]))
        walls.append(pts[keep])
    return walls[0], walls[1]


@dataclass(frozen=True)
class VesselGeometry:
    """Vessel walls.  ``kind`` is ``straight``, ``curved`` (parametrised preset) or ``polyline``."""

    kind: str = "straight"
    d: float = 6.0
    L: float = 20.0
    params: dict = field(default_factory=dict)
    walls: tuple | None = None  # (lower, upper) point lists for kind == "polyline"

    def __post_init__(self):
        if not self.d > 0:
            raise InvalidGeometryError("vessel diameter must be positive")
        if self.kind == "straight":
            if not self.L > 0:
                raise InvalidGeometryError("segment length must be positive")
        elif self.kind == "curved":
            merged = dict(CURVED_DEFAULTS)
            merged.update(self.params or {})
            object.__setattr__(self, "params", merged)
            object.__setattr__(self, "L", merged["straight_length"] + merged["arc_radius"] * merged["arc_angle"])
        elif self.kind == "polyline":
            if self.walls is None:
                raise InvalidGeometryError("polyline vessel needs walls")
            lo, up = (np.asarray(w, float) for w in self.walls)
            if lo.ndim != 2 or up.ndim != 2 or len(lo) < 2 or len(up) < 2:
                raise InvalidGeometryError("walls must be polylines with at least two points")
        else:
            raise InvalidGeometryError(f"unknown vessel kind {self.kind!r}")

    @classmethod
    def straight(cls, d: float, L: float = 20.0) -> "VesselGeometry":
        return cls(kind="straight", d=d, L=L)

    @classmethod
    def curved(cls, d: float = 6.0, **params) -> "VesselGeometry":
        return cls(kind="curved", d=d, params=params)

    def wall_polylines(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "straight":
            h = self.d / 2
            return np.array([[0.0, -h], [self.L, -h]]), np.array([[0.0, h], [self.L, h]])
        if self.kind == "curved":
            return _curved_walls(self.d, self.params)
        lo, up = self.walls
        return np.asarray(lo, float), np.asarray(up, float)

    def contour(self):
        """Closed counterclockwise boundary as (start points, end points, tags)."""
        lo, up = self.wall_polylines()
        verts = np.concatenate([lo, up[::-1]])
        tags = ["wall"] * (len(lo) - 1) + ["end1"] + ["wall"] * (len(up) - 1) + ["end0"]
        return verts, np.roll(verts, -1, axis=0), tags

    def end_geometry(self, which: int):
        """Midpoint, width and downstream axis direction of end segment 0 or 1."""
        lo, up = self.wall_polylines()
        i = 0 if which == 0 else -1
        a, b = lo[i], up[i]
        mid = 0.5 * (a + b)
        width = float(np.linalg.norm(b - a))
        t = (b - a) / width
        axis = np.array([t[1], -t[0]])  # right-hand normal of lower->upper points downstream
        return mid, width, axis

    def wall_segments(self):
        lo, up = self.wall_polylines()
        return (np.concatenate([lo[:-1], up[:-1]]), np.concatenate([lo[1:], up[1:]]))

    def nearest_wall(self, point) -> tuple[float, np.ndarray, str]:
        """Distance, nearest point and side ('lower'/'upper') of the wall closest to ``point``."""
        lo, up = self.wall_polylines()
        best = None
        for side, poly in (("lower", lo), ("upper", up)):
            dist, q = _point_polyline(np.asarray(point, float), poly)
            if best is None or dist < best[0]:
                best = (dist, q, side)
        return best

    def local_diameter(self, point) -> float:
        lo, up = self.wall_polylines()
        p = np.asarray(point, float)
        return _point_polyline(p, lo)[0] + _point_polyline(p, up)[0]

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d, "L": self.L}
        if self.kind == "curved":
            out["params"] = dict(self.params)
        if self.kind == "polyline":
            out["walls"] = [np.asarray(w, float).tolist() for w in self.walls]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "VesselGeometry":
        kind = data.get("kind", "straight")
        if kind == "polyline":
            walls = tuple(tuple(map(tuple, w)) for w in data["walls"])
            return cls(kind=kind, d=float(data["d"]), L=float(data.get("L", 0.0)), walls=walls)
        if kind == "curved":
            return cls(kind=kind, d=float(data["d"]), params=dict(data.get("params", {})))
        return cls(kind=kind, d=float(data["d"]), L=float(data["L"]))


def _point_polyline(p: np.ndarray, poly: np.ndarray):
    a, b = poly[:-1], poly[1:]
    ab = b - a
    t = np.clip(((p - a) * ab).sum(1) / np.maximum((ab * ab).sum(1), 1e-300), 0.0, 1.0)
    q = a + t[:, None] * ab
    dist = np.hypot(*(q - p).T)
    i = int(np.argmin(dist))
    return float(dist[i]), q[i]


def segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from each point to the nearest of the segments a->b."""
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None]).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-300)[None], 0.0, 1.0)
    q = a[None] + t[..., None] * ab[None]
    return np.hypot(*(points[:, None, :] - q).transpose(2, 0, 1)).min(axis=1)


def points_inside(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test."""
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    x1, y1 = verts[:, 0][None], verts[:, 1][None]
    x2, y2 = np.roll(verts[:, 0], -1)[None], np.roll(verts[:, 1], -1)[None]
    crosses = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    return (crosses & (x < xint)).sum(axis=1) % 2 == 1


@dataclass(frozen=True)
class Scenario:
    fluid: FluidProperties
    vessel: VesselGeometry
    shape: RobotShape
    pose: RobotPose
    inlet_u: float

    def with_pose(self, pose: RobotPose) -> "Scenario":
        return replace(self, pose=pose)

    def with_inlet(self, u: float) -> "Scenario":
        return replace(self, inlet_u=u)

    @property
    def reynolds(self) -> float:
        return reynolds(self.inlet_u * 1e-6, self.vessel.d * 1e-6, self.fluid.nu)

    def robot_outline(self, n: int = 2048) -> np.ndarray:
        t = 2 * np.pi * np.arange(n) / n
        return self.shape.boundary(t, self.pose)[0]

    def min_gap(self) -> float:
        """Smallest distance between the robot surface and the vessel boundary (negative if inside out)."""
        verts, nxt, _ = self.vessel.contour()
        if self.shape.kind == "circle":
            dist = segment_distances(self.pose.center[None], verts, nxt)[0]
            gap = dist - self.shape.r
        else:
            gap = float(segment_distances(self.robot_outline(), verts, nxt).min())
        if not points_inside(self.pose.center[None], verts)[0]:
            return -abs(gap)
        return gap

    def validate(self) -> "Scenario":
        gap = self.min_gap()
        if not gap > 0:
            raise InvalidGeometryError(f"robot is not strictly inside the vessel (gap {gap:.4g} um)")
        if self.shape.kind == "ellipse":
            verts = self.vessel.contour()[0]
            if not points_inside(self.robot_outline(256), verts).all():
                raise InvalidGeometryError("robot outline crosses the vessel boundary")
        if self.reynolds > RE_WARN:
            warnings.warn(f"Reynolds number {self.reynolds:.3g} exceeds {RE_WARN}; Stokes flow is questionable")
        return self

    # ground truth helpers ------------------------------------------------
    def wall_direction_lab(self) -> float:
        _, q, _ = self.vessel.nearest_wall(self.pose.center)
        dx, dy = q - self.pose.center
        return math.atan2(dy, dx)

    def wall_distance(self) -> float:
        return self.vessel.nearest_wall(self.pose.center)[0]

    def local_diameter(self) -> float:
        return self.vessel.local_diameter(self.pose.center)

    def relative_position(self) -> float:
        if self.vessel.kind == "straight" and self.shape.kind == "circle":
            return relative_position(self.pose.y, self.vessel.d, self.shape.r)
        dloc = self.local_diameter()
        half = dloc / 2
        off = half - self.wall_distance()
        return min(max(off / (half - self.shape.radius), 0.0), 1.0)

    def to_dict(self) -> dict:
        robot = self.shape.to_dict()
        robot.update({"x": self.pose.x, "y": self.pose.y, "psi": self.pose.psi})
        return {
            "fluid": self.fluid.to_dict(),
            "vessel": self.vessel.to_dict(),
            "robot": robot,
            "inlet_u": self.inlet_u,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            rob = data["robot"]
            if rob.get("kind", "circle") == "circle":
                shape = RobotShape(r=float(rob["r"]))
            else:
                shape = RobotShape.ellipse(float(rob["a"]), float(rob["b"]))
            return cls(
                fluid=FluidProperties.from_dict(data["fluid"]),
                vessel=VesselGeometry.from_dict(data["vessel"]),
                shape=shape,
                pose=RobotPose(float(rob["x"]), float(rob["y"]), float(rob.get("psi", 0.0))),
                inlet_u=float(data["inlet_u"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed scenario: missing or bad field {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def table2_scenario(psi: float = 0.3) -> Scenario:
    """The worked example: d = 6, |y_c| = 1.7 below the axis, u = 1000, 10 um segment."""
    return Scenario(
        fluid=FluidProperties(),
        vessel=VesselGeometry.straight(6.0, 10.0),
        shape=RobotShape(r=1.0),
        pose=RobotPose(5.0, -1.7, psi),
        inlet_u=1000.0,
    )
