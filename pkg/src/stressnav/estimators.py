"""Estimators mapping stress features to the robot's geometry and motion."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateInputError, InconsistentEstimateError, ModelCompatibilityError, StressNavError
from .features import FourierFeatures, fourier_coefficients, interpolate_derivative, interpolate_stress, principal_components
from .geometry import RobotShape
from .models import DiameterRegression, ModelSet, PositionRegression, SpeedRatioFit
from .sensors import StressReading

GRID = 1024
REFINE_TOL = 1e-9
ALIAS_FRACTION = 0.05
MIN_CORRELATION = 0.99
RELPOS_FLOOR = 0.01

_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f, a: float, b: float, tol: float = REFINE_TOL):
    """Maximise a unimodal function on [a, b] by golden-section search."""
    c, d = b - _GOLD * (b - a), a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _grid_refine_max(f_vec, lo: float, hi: float, n: int = GRID, rel_tie: float = 1e-9):
    """Global maximum of a periodic function on [lo, hi): dense grid, then golden refinement of every near-tied peak."""
    step = (hi - lo) / n
    grid = lo + step * np.arange(n)
    vals = f_vec(grid)
    top = vals.max()
    peaks = [i for i in range(n) if vals[i] >= vals[i - 1] and vals[i] >= vals[(i + 1) % n] and vals[i] >= top - 0.05 * abs(top) - 1e-300]
    best = None
    for i in peaks:
        x, v = _golden_max(lambda t: float(f_vec(np.array([t]))[0]), grid[i] - step, grid[i] + step)
        x = (x - lo) % (hi - lo) + lo
        if best is None or v > best[1] * (1 + rel_tie) + 1e-300 or (abs(v - best[1]) <= rel_tie * abs(best[1]) and x < best[0]):
            best = (x, v)
    return best


def wrap_angle(x):
    """Map angles to [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def estimate_wall_direction(features: FourierFeatures) -> float:
    """theta_extreme in [0, 2 pi): the body angle maximising |interpolated tangential stress|."""
    if features.degenerate or not np.abs(features.coeffs[1, 1:]).max() > 0:
        raise DegenerateInputError("no tangential variation to locate the wall")
    x, _ = _grid_refine_max(lambda t: np.abs(interpolate_stress(features, t)[1]), 0.0, 2 * np.pi)
    return float(x % (2 * np.pi))


def wall_direction_from_extreme(theta_extreme: float, shape: RobotShape | None = None) -> float:
    """Body-frame direction to the wall: theta_extreme for circles, the surface normal there for ellipses."""
    if shape is None or shape.kind == "circle":
        return float(theta_extreme)
    return float(shape.normal_angle(theta_extreme) % (2 * np.pi))


@dataclass(frozen=True)
class MotionDirection:
    direction: float
    sign: int
    slope: float
    low_confidence: bool


def estimate_motion_direction(features: FourierFeatures, theta_extreme: float, phi_wall: float | None = None,
                              floor: float = 1e-6) -> MotionDirection:
    """phi_wall - s pi/2 with s the sign of d f_normal / d theta at theta_extreme."""
    phi = theta_extreme if phi_wall is None else phi_wall
    slope = float(interpolate_derivative(features, theta_extreme, 0))
    s = 1 if slope > 0 else -1
    scale = features.C if features.C > 0 else 0.0
    low = abs(slope) <= floor * scale
    return MotionDirection(float((phi - s * np.pi / 2) % (2 * np.pi)), s, slope, bool(low))


def estimate_relative_position(p1: float, p2: float, model: PositionRegression) -> float:
    return float(model.predict(p1, p2))


def estimate_diameter(p1: float, p2: float, model: DiameterRegression) -> float:
    return float(model.predict(p1, p2))


def estimate_wall_distance(relpos: float, d_hat: float, r: float) -> float:
    """Centre-to-wall distance d/2 - relPos (d/2 - r)."""
    if not 0.0 <= relpos <= 1.0:
        raise ValueError("relative position must lie in [0, 1]")
    if not d_hat > 2 * r:
        raise InconsistentEstimateError(f"estimated diameter {d_hat:.3g} um does not exceed the robot size {2 * r:.3g} um")
    return d_hat / 2 - relpos * (d_hat / 2 - r)


def pattern_correlation(ca: np.ndarray, cb: np.ndarray, shift):
    """Pearson correlation between pattern a and pattern b shifted by ``shift``.

    ``ca``, ``cb`` are coefficients c_1..c_M of one component.  For band-limited
    patterns the correlation over any uniform grid finer than 2M points equals
    Re(sum a_k conj(b_k) e^{i k shift}) / (|a| |b|), which is evaluated here.
    """
    k = np.arange(1, len(ca) + 1)
    na, nb = np.sqrt((np.abs(ca) ** 2).sum()), np.sqrt((np.abs(cb) ** 2).sum())
    if not (na > 0 and nb > 0):
        raise DegenerateInputError("pattern has no variation")
    prod = ca * np.conj(cb)
    ph = np.exp(1j * np.multiply.outer(np.asarray(shift, float), k))
    return (ph @ prod).real / (na * nb)


def _polish_shift(ca: np.ndarray, cb: np.ndarray, x: float, steps: int = 4) -> float:
    """Newton steps on the analytic derivative of the correlation; golden search alone stops near sqrt(eps)."""
    k = np.arange(1, len(ca) + 1)
    prod = ca * np.conj(cb)
    for _ in range(steps):
        ph = prod * np.exp(1j * k * x)
        g1, g2 = -(k * ph).imag.sum(), -(k * k * ph).real.sum()
        if not g2 < 0:
            break
        step = -g1 / g2
        if abs(step) > 1e-3:
            break
        x += step
    return x


@dataclass(frozen=True)
class AngularVelocityEstimate:
    omega: float
    correlation: float
    shifts: tuple
    correlations: tuple
    reliable: bool
    aliased: bool


def estimate_angular_velocity(reading_a: StressReading, reading_b: StressReading, dt: float, M: int = 6) -> AngularVelocityEstimate:
    """omega = -mean(dtheta_normal, dtheta_tangential) / dt, each dtheta maximising the pattern correlation."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    fa, fb = fourier_coefficients(reading_a, M), fourier_coefficients(reading_b, M)
    shifts, cors = [], []
    for s in range(2):
        ca, cb = fa.coeffs[s, 1:], fb.coeffs[s, 1:]
        x, _ = _grid_refine_max(lambda t: pattern_correlation(ca, cb, t), -np.pi, np.pi)
        x = _polish_shift(ca, cb, x)
        v = float(pattern_correlation(ca, cb, x))
        shifts.append(float(wrap_angle(x)))
        cors.append(float(v))
    d = shifts[0] + float(wrap_angle(shifts[1] - shifts[0])) / 2
    d = float(wrap_angle(d))
    aliased = abs(d) >= (1 - ALIAS_FRACTION) * np.pi
    corr = min(cors)
    return AngularVelocityEstimate(-d / dt, corr, tuple(shifts), tuple(cors), bool(corr >= MIN_CORRELATION and not aliased), bool(aliased))


def estimate_speed_ratio(relpos: float, fit: SpeedRatioFit, floor: float = RELPOS_FLOOR):
    """(a + b (1 - relPos) / relPos, clamped) with relPos floored at ``floor``."""
    clamped = relpos <= floor
    rp = max(relpos, floor)
    return float(fit.predict(rp)), bool(clamped)


def estimate_speed(omega: float, ratio: float, r: float) -> float:
    return abs(omega) * ratio * r


def in_expanded_hull(point, hull: np.ndarray, factor: float = 1.1) -> bool:
    """Whether ``point`` lies in the convex polygon ``hull`` (counterclockwise) scaled by ``factor`` about its centroid."""
    hull = np.asarray(hull, float)
    c = hull.mean(axis=0)
    v = c + factor * (hull - c)
    e = np.roll(v, -1, axis=0) - v
    rel = np.asarray(point, float) - v
    cross = e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0]
    return bool((cross >= 0).all())


@dataclass
class EstimateReport:
    theta_extreme: float = math.nan
    wall_direction: float = math.nan
    motion_direction: float = math.nan
    relpos: float = math.nan
    diameter: float = math.nan
    wall_distance: float = math.nan
    omega: float = math.nan
    speed_ratio: float = math.nan
    speed: float = math.nan
    p1: float = math.nan
    p2: float = math.nan
    correlation: float = math.nan
    in_range: bool | None = None
    valid: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    UNITS = {
        "theta_extreme": "rad", "wall_direction": "rad", "motion_direction": "rad", "relpos": "1",
        "diameter": "um", "wall_distance": "um", "omega": "rad/s", "speed_ratio": "1", "speed": "um/s",
        "p1": "1", "p2": "1", "correlation": "1",
    }

    def to_dict(self) -> dict:
        out = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}
        out["units"] = dict(self.UNITS)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


QUANTITIES = ("theta_extreme", "wall_direction", "motion_direction", "relpos", "diameter", "wall_distance", "omega", "speed_ratio", "speed")


def full_estimate(reading_a: StressReading, reading_b: StressReading | None, dt: float, models: ModelSet,
                  r: float = 1.0, shape: RobotShape | None = None) -> EstimateReport:
    """Run every estimator; fields that cannot be estimated stay NaN and are marked invalid."""
    rep = EstimateReport(valid={q: False for q in QUANTITIES})
    M = models.pca.M
    try:
        feats = fourier_coefficients(reading_a, M)
    except (StressNavError, ValueError) as exc:
        rep.flags.append(f"features: {exc}")
        return rep
    if feats.degenerate:
        rep.flags.append("degenerate reading")
        return rep

    def attempt(name, fn):
        try:
            return fn()
        except (StressNavError, ValueError) as exc:
            rep.flags.append(f"{name}: {exc}")
            return None

    th = attempt("theta_extreme", lambda: estimate_wall_direction(feats))
    if th is not None:
        rep.theta_extreme = th
        rep.wall_direction = wall_direction_from_extreme(th, shape)
        md = estimate_motion_direction(feats, th, rep.wall_direction)
        rep.motion_direction = md.direction
        rep.valid.update(theta_extreme=True, wall_direction=True, motion_direction=not md.low_confidence)
        if md.low_confidence:
            rep.flags.append("motion direction: normal-stress slope below noise floor")

    pcs = attempt("principal_components", lambda: principal_components(feats, models.pca))
    if pcs is not None:
        rep.p1, rep.p2 = float(pcs[0]), float(pcs[1])
        rep.relpos = estimate_relative_position(rep.p1, rep.p2, models.position)
        rep.diameter = estimate_diameter(rep.p1, rep.p2, models.diameter)
        rep.valid.update(relpos=True, diameter=True)
        if models.hull is not None:
            rep.in_range = in_expanded_hull((rep.p1, rep.p2), models.hull)
            if not rep.in_range:
                rep.flags.append("features outside the training range")
        if shape is not None and shape.kind != "circle" and th is not None:
            radius = shape.support_distance(rep.wall_direction)
        else:
            radius = r
        wd = attempt("wall_distance", lambda: estimate_wall_distance(rep.relpos, rep.diameter, radius))
        if wd is not None:
            rep.wall_distance = wd
            rep.valid["wall_distance"] = True
        rep.speed_ratio, clamped = estimate_speed_ratio(rep.relpos, models.speed_ratio)
        rep.valid["speed_ratio"] = not clamped
        if clamped:
            rep.flags.append("speed ratio: relative position at the clamp floor")

    if reading_b is not None:
        av = attempt("omega", lambda: estimate_angular_velocity(reading_a, reading_b, dt, M))
        if av is not None:
            rep.omega = av.omega
            rep.correlation = av.correlation
            rep.valid["omega"] = av.reliable
            if av.aliased:
                rep.flags.append("omega: shift too close to half a turn (possible aliasing)")
            if av.correlation < MIN_CORRELATION:
                rep.flags.append("omega: low pattern correlation")
            if not math.isnan(rep.speed_ratio):
                rep.speed = estimate_speed(rep.omega, rep.speed_ratio, r)
                rep.valid["speed"] = rep.valid["omega"] and rep.valid["speed_ratio"]
    return rep


def check_models(models: ModelSet, M: int) -> None:
    if models.pca.M != M:
        raise ModelCompatibilityError(f"models use M={models.pca.M}, features use M={M}")
