"""Sample corpus generation, model fitting and stratified evaluation."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context

import numpy as np
from scipy.spatial import ConvexHull

from .errors import FitError, StressNavError
from .estimators import (
    estimate_angular_velocity,
    estimate_motion_direction,
    estimate_speed,
    estimate_speed_ratio,
    estimate_wall_direction,
    estimate_wall_distance,
    wall_direction_from_extreme,
    wrap_angle,
)
from .features import feature_csv_header, fit_pca, fourier_coefficients, principal_components
from .geometry import FluidProperties, RobotPose, RobotShape, Scenario, VesselGeometry
from .models import DiameterRegression, ModelSet, PositionRegression, SpeedRatioFit, diameter_design
from .physics import relative_position
from .sensors import SensorArray, StressReading
from .stokes import Discretization, advance_detailed, solve_flow, surface_traction

log = logging.getLogger(__name__)

DEFAULT_SEED = 20240101
STRATA = (("<0.2", 0.0, 0.2), ("0.2-0.5", 0.2, 0.5), (">=0.5", 0.5, math.inf))


@dataclass(frozen=True)
class SamplerConfig:
    """Ranges of the randomized straight-vessel corpus (um, um/s, s)."""

    count: int = 1000
    seed: int = DEFAULT_SEED
    u_range: tuple = (200.0, 1000.0)
    random_sign: bool = True
    d_range: tuple = (5.0, 10.0)
    L_range: tuple = (18.0, 20.0)
    x_halfwidth: float = 2.0
    min_gap: float = 0.5
    r: float = 1.0
    n_sensors: int = 30
    M: int = 6
    dt: float = 5e-3
    train_fraction: float = 0.8
    max_redraws: int = 5

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("count must be positive")
        if not (0 < self.u_range[0] <= self.u_range[1]):
            raise ValueError("bad inlet speed range")
        if not (2 * (self.r + self.min_gap) < self.d_range[0] <= self.d_range[1]):
            raise ValueError("diameter range leaves no room for the robot and minimum gap")
        if not (0 < self.L_range[0] <= self.L_range[1]) or self.x_halfwidth < 0 or self.x_halfwidth * 2 >= self.L_range[0]:
            raise ValueError("bad segment length or horizontal range")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_train(self) -> int:
        return int(round(self.count * self.train_fraction))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["u_range"], d["d_range"], d["L_range"] = list(self.u_range), list(self.d_range), list(self.L_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SamplerConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown sampler fields: {sorted(extra)}")
        kw = dict(data)
        for k in ("u_range", "d_range", "L_range"):
            if k in kw:
                kw[k] = tuple(float(v) for v in kw[k])
        return cls(**kw)


def draw_scenario(config: SamplerConfig, index: int, attempt: int = 0) -> Scenario:
    """Scenario number ``index``; its RNG stream depends only on (seed, index, attempt)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index, attempt]))
    u = rng.uniform(*config.u_range)
    if config.random_sign and rng.random() < 0.5:
        u = -u
    d = rng.uniform(*config.d_range)
    L = rng.uniform(*config.L_range)
    x = L / 2 + rng.uniform(-config.x_halfwidth, config.x_halfwidth)
    ymax = d / 2 - config.r - config.min_gap
    y = rng.uniform(0.0, ymax) * (1.0 if rng.random() < 0.5 else -1.0)
    psi = rng.uniform(0.0, 2 * np.pi)
    return Scenario(FluidProperties(), VesselGeometry.straight(d, L), RobotShape(r=config.r), RobotPose(x, y, psi), u)


@dataclass
class Sample:
    id: int
    scenario: Scenario
    vx: float
    vy: float
    omega: float
    omega_mean: float
    reading: StressReading
    reading_next: StressReading
    split: str
    attempts: int = 1

    @property
    def relpos(self) -> float:
        v = self.scenario.vessel
        return relative_position(self.scenario.pose.y, v.d, self.scenario.shape.r)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def speed_ratio(self) -> float:
        return self.speed / (abs(self.omega) * self.scenario.shape.r) if self.omega != 0 else math.inf

    @property
    def wall_distance(self) -> float:
        return self.scenario.vessel.d / 2 - abs(self.scenario.pose.y)

    @property
    def wall_direction(self) -> float:
        """Body-frame direction to the nearest wall."""
        return float((self.scenario.wall_direction_lab() - self.scenario.pose.psi) % (2 * np.pi))

    @property
    def motion_direction(self) -> float:
        return float((math.atan2(self.vy, self.vx) - self.scenario.pose.psi) % (2 * np.pi))


def solve_sample(config: SamplerConfig, index: int, disc: Discretization | None = None) -> Sample:
    """Draw, solve and label one sample, redrawing on solver or geometry failure."""
    disc = disc or Discretization()
    sensors = SensorArray(config.n_sensors)
    split = "train" if index < config.n_train else "test"
    last = None
    for attempt in range(config.max_redraws + 1):
        sc = draw_scenario(config, index, attempt)
        try:
            if sc.min_gap() < config.min_gap - 1e-9:
                raise StressNavError("gap below the sampling minimum")
            sol = solve_flow(sc, disc)
            reading = surface_traction(sol, sensors, timestamp=0.0)
            adv = advance_detailed(sc, config.dt, disc, max_step=config.dt, comoving=True, first=sol)
            sol_b = solve_flow(adv.scenario, disc)
            reading_b = surface_traction(sol_b, sensors, timestamp=config.dt)
        except (StressNavError, ValueError) as exc:
            log.warning("sample %d attempt %d failed: %s", index, attempt, exc)
            last = exc
            continue
        m = sol.motion
        return Sample(index, sc, m.vx, m.vy, m.omega, adv.mean_omega(config.dt), reading, reading_b, split, attempt + 1)
    raise StressNavError(f"sample {index} failed after {config.max_redraws + 1} draws: {last}")


def _solve_star(args):
    config, index, disc = args
    t0 = time.perf_counter()
    s = solve_sample(config, index, disc)
    return s, time.perf_counter() - t0


@dataclass
class Dataset:
    config: SamplerConfig
    samples: list
    timings: list = field(default_factory=list)

    @property
    def train(self) -> list:
        return [s for s in self.samples if s.split == "train"]

    @property
    def test(self) -> list:
        return [s for s in self.samples if s.split == "test"]

    @property
    def redraws(self) -> int:
        return sum(s.attempts - 1 for s in self.samples)


def generate_samples(config: SamplerConfig, disc: Discretization | None = None, workers: int = 1, progress=None) -> Dataset:
    """Solve every draw; results do not depend on the number of workers."""
    disc = disc or Discretization()
    jobs = [(config, i, disc) for i in range(config.count)]
    samples, timings = [], []
    if workers > 1:
        with get_context("spawn").Pool(workers) as pool:
            for k, (s, t) in enumerate(pool.imap(_solve_star, jobs, chunksize=4)):
                samples.append(s)
                timings.append(t)
                if progress:
                    progress(k + 1, config.count)
    else:
        for k, job in enumerate(jobs):
            s, t = _solve_star(job)
            samples.append(s)
            timings.append(t)
            if progress:
                progress(k + 1, config.count)
    ds = Dataset(config, samples, timings)
    if ds.redraws > 0.01 * config.count:
        raise StressNavError(f"{ds.redraws} redraws exceed 1% of {config.count} samples")
    return ds


# --------------------------------------------------------------------------- CSV


def _f(x: float) -> str:
    return repr(float(x))


def dataset_header(n: int, M: int) -> list[str]:
    cols = ["id", "u", "d", "L", "x_c", "y_c", "psi", "relpos", "v_x", "v_y", "omega", "speed_ratio"]
    cols += [f"fn_{j}" for j in range(n)] + [f"ft_{j}" for j in range(n)]
    cols += [f"m{k}_{s}" for s in ("normal", "tangential") for k in range(1, M + 1)]
    cols += ["split", "r", "wall_distance", "wall_direction", "motion_direction", "omega_mean", "dt"]
    cols += [f"fn_next_{j}" for j in range(n)] + [f"ft_next_{j}" for j in range(n)]
    return cols


def dataset_to_csv(ds: Dataset) -> str:
    cfg = ds.config
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset_header(cfg.n_sensors, cfg.M))
    for s in ds.samples:
        sc = s.scenario
        feats = fourier_coefficients(s.reading, cfg.M)
        row = [s.id] + [_f(v) for v in (sc.inlet_u, sc.vessel.d, sc.vessel.L, sc.pose.x, sc.pose.y, sc.pose.psi,
                                         s.relpos, s.vx, s.vy, s.omega, s.speed_ratio)]
        row += [_f(v) for v in s.reading.normal] + [_f(v) for v in s.reading.tangential]
        row += [_f(v) for v in feats.vector]
        row += [s.split] + [_f(v) for v in (sc.shape.r, s.wall_distance, s.wall_direction, s.motion_direction, s.omega_mean, cfg.dt)]
        row += [_f(v) for v in s.reading_next.normal] + [_f(v) for v in s.reading_next.tangential]
        w.writerow(row)
    return buf.getvalue()


def dataset_from_csv(text: str, config: SamplerConfig | None = None) -> Dataset:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty dataset")
    n = sum(1 for k in rows[0] if k.startswith("fn_") and not k.startswith("fn_next"))
    samples = []
    for r in rows:
        g = lambda k: float(r[k])  # noqa: E731
        sc = Scenario(FluidProperties(), VesselGeometry.straight(g("d"), g("L")), RobotShape(r=g("r")),
                      RobotPose(g("x_c"), g("y_c"), g("psi")), g("u"))
        dt = g("dt")
        ra = StressReading(np.array([g(f"fn_{j}") for j in range(n)]), np.array([g(f"ft_{j}") for j in range(n)]), 0.0)
        rb = StressReading(np.array([g(f"fn_next_{j}") for j in range(n)]), np.array([g(f"ft_next_{j}") for j in range(n)]), dt)
        samples.append(Sample(int(r["id"]), sc, g("v_x"), g("v_y"), g("omega"), g("omega_mean"), ra, rb, r["split"]))
    if config is None:
        M = sum(1 for k in rows[0] if k.startswith("m") and k.endswith("_normal"))
        config = SamplerConfig(count=len(samples), n_sensors=n, M=M, dt=float(rows[0]["dt"]),
                               train_fraction=sum(s.split == "train" for s in samples) / len(samples))
    return Dataset(config, samples)


# --------------------------------------------------------------------------- fits


def _check_design(X: np.ndarray, min_rows: int, what: str):
    if X.shape[0] < min_rows:
        raise FitError(f"{what} needs at least {min_rows} rows, got {X.shape[0]}")
    if not np.isfinite(X).all():
        raise FitError(f"{what}: non-finite inputs")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise FitError(f"{what}: design matrix is rank deficient")


def fit_logistic(p1, p2, relpos, max_iter: int = 100, tol: float = 1e-12) -> PositionRegression:
    """Quasi-binomial IRLS for a fractional response in (0, 1); SEs from the information matrix."""
    p1, p2, y = (np.asarray(a, float) for a in (p1, p2, relpos))
    X = np.column_stack([np.ones_like(p1), p1, p2])
    _check_design(X, 10, "logistic fit")
    if ((y < 0) | (y > 1)).any():
        raise FitError("relative position must lie in [0, 1]")
    beta = np.zeros(3)
    for _ in range(max_iter):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = np.clip(mu * (1 - mu), 1e-12, None)
        z = eta + (y - mu) / w
        info = X.T @ (w[:, None] * X)
        new = np.linalg.solve(info, X.T @ (w * z))
        if not np.isfinite(new).all():
            raise FitError("logistic IRLS diverged")
        step = np.abs(new - beta).max()
        beta = new
        if step < tol * (1 + np.abs(beta).max()):
            break
    else:
        raise FitError(f"logistic IRLS did not converge in {max_iter} iterations")
    mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
    info = X.T @ ((mu * (1 - mu))[:, None] * X)
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    return PositionRegression(beta, se)


def fit_diameter_glm(p1, p2, d, max_iter: int = 100, tol: float = 1e-12) -> DiameterRegression:
    """Gamma GLM with log link by IRLS on the design (1, p1, p2, p1^2, p2^2, p1 p2); Pearson dispersion."""
    p1, p2, y = (np.asarray(a, float) for a in (p1, p2, d))
    X = diameter_design(p1, p2)
    _check_design(X, 12, "diameter fit")
    if not (y > 0).all():
        raise FitError("diameters must be positive")
    beta = np.linalg.lstsq(X, np.log(y), rcond=None)[0]
    xtx = X.T @ X
    for _ in range(max_iter):
        eta = X @ beta
        mu = np.exp(eta)
        z = eta + (y - mu) / mu  # log link with gamma variance gives unit IRLS weights
        new = np.linalg.solve(xtx, X.T @ z)
        if not np.isfinite(new).all():
            raise FitError("gamma IRLS diverged")
        step = np.abs(new - beta).max()
        beta = new
        if step < tol * (1 + np.abs(beta).max()):
            break
    else:
        raise FitError(f"gamma IRLS did not converge in {max_iter} iterations")
    mu = np.exp(X @ beta)
    dof = max(len(y) - X.shape[1], 1)
    phi = float((((y - mu) / mu) ** 2).sum() / dof)
    se = np.sqrt(phi * np.diag(np.linalg.inv(xtx)))
    return DiameterRegression(beta, se, phi)


def fit_speed_ratio(relpos, ratio, floor: float = 0.01) -> SpeedRatioFit:
    """Ordinary least squares of R on the odds (1 - relPos) / relPos.

    Rows with relPos below ``floor`` are left out: there R grows without bound
    and a floored odds value would turn them into extreme-leverage outliers.
    """
    rp = np.asarray(relpos, float)
    R = np.asarray(ratio, float)
    keep = rp >= floor
    if (~keep).any():
        log.info("speed-ratio fit: %d of %d rows below relPos %.3g left out", int((~keep).sum()), len(rp), floor)
    rp, R = rp[keep], R[keep]
    if len(R) < 3:
        raise FitError("speed-ratio fit needs at least three rows at or above the relPos floor")
    odds = (1 - rp) / rp
    X = np.column_stack([np.ones_like(odds), odds])
    _check_design(X, 3, "speed-ratio fit")
    coef, *_ = np.linalg.lstsq(X, R, rcond=None)
    resid = R - X @ coef
    s2 = float(resid @ resid) / max(len(R) - 2, 1)
    se = np.sqrt(s2 * np.diag(np.linalg.inv(X.T @ X)))
    if not coef[1] > 0:
        raise FitError(f"fitted slope b={coef[1]:.3g} is not positive")
    return SpeedRatioFit(float(coef[0]), float(coef[1]), float(se[0]), float(se[1]))


def sample_features(samples, M: int):
    return np.array([fourier_coefficients(s.reading, M).vector for s in samples])


def fit_models(ds: Dataset, H: int = 2) -> ModelSet:
    """Fit PCA, logistic, gamma GLM and speed-ratio models on the training split."""
    train = ds.train
    if not train:
        raise FitError("training split is empty")
    M = ds.config.M
    V = sample_features(train, M)
    pca = fit_pca(V, H, meta={"seed": ds.config.seed})
    P = pca.transform(V)
    relpos = np.array([s.relpos for s in train])
    d = np.array([s.scenario.vessel.d for s in train])
    ratio = np.array([s.speed_ratio for s in train])
    position = fit_logistic(P[:, 0], P[:, 1], relpos)
    diameter = fit_diameter_glm(P[:, 0], P[:, 1], d)
    speed = fit_speed_ratio(relpos, ratio)
    hull = ConvexHull(P[:, :2])
    verts = P[hull.vertices, :2]  # counterclockwise for 2-D hulls
    meta = {"seed": ds.config.seed, "n_train": len(train), "sampler": ds.config.to_dict(),
            "explained_variance": pca.explained.tolist()}
    return ModelSet(pca, position, diameter, speed, verts, meta)


# --------------------------------------------------------------------------- evaluation


def stratum_of(relpos: float) -> str:
    for name, lo, hi in STRATA:
        if lo <= relpos < hi:
            return name
    return STRATA[-1][0]


@dataclass
class Prediction:
    id: int
    stratum: str
    truth: dict
    estimate: dict
    correlation: float


def predict_sample(s: Sample, models: ModelSet, dt: float) -> Prediction:
    M = models.pca.M
    feats = fourier_coefficients(s.reading, M)
    r = s.scenario.shape.r
    th = estimate_wall_direction(feats)
    phi = wall_direction_from_extreme(th)
    md = estimate_motion_direction(feats, th, phi)
    p = principal_components(feats, models.pca)
    rp = float(models.position.predict(p[0], p[1]))
    dh = float(models.diameter.predict(p[0], p[1]))
    try:
        wd = estimate_wall_distance(rp, dh, r)
    except StressNavError:
        wd = math.nan
    av = estimate_angular_velocity(s.reading, s.reading_next, dt, M)
    R, _ = estimate_speed_ratio(rp, models.speed_ratio)
    v = estimate_speed(av.omega, R, r)
    truth = {"wall_direction": s.wall_direction, "motion_direction": s.motion_direction, "relpos": s.relpos,
             "diameter": s.scenario.vessel.d, "wall_distance": s.wall_distance, "omega": s.omega_mean,
             "speed_ratio": s.speed_ratio, "speed": s.speed}
    est = {"wall_direction": phi, "motion_direction": md.direction, "relpos": rp, "diameter": dh,
           "wall_distance": wd, "omega": av.omega, "speed_ratio": R, "speed": v, "p1": float(p[0]), "p2": float(p[1])}
    return Prediction(s.id, stratum_of(s.relpos), truth, est, av.correlation)


def _stats(err: np.ndarray, kind: str) -> float | None:
    err = err[np.isfinite(err)]
    if err.size == 0:
        return None
    if kind == "rms":
        return float(np.sqrt(np.mean(err**2)))
    if kind == "mean_abs":
        return float(np.mean(np.abs(err)))
    if kind == "median_abs":
        return float(np.median(np.abs(err)))
    raise ValueError(kind)


METRIC_SPEC = {
    # quantity: (error kind, statistic, unit)
    "wall_direction": ("angle_deg", "mean_abs", "deg"),
    "motion_direction": ("angle_deg", "mean_abs", "deg"),
    "relpos": ("diff", "rms", "1"),
    "diameter": ("diff", "rms", "um"),
    "wall_distance": ("diff", "rms", "um"),
    "omega": ("diff", "mean_abs", "rad/s"),
    "speed_ratio": ("relative", "median_abs", "1"),
    "speed": ("relative", "mean_abs", "1"),
}


def _errors(preds, q):
    kind = METRIC_SPEC[q][0]
    t = np.array([p.truth[q] for p in preds], float)
    e = np.array([p.estimate[q] for p in preds], float)
    if kind == "angle_deg":
        return np.degrees(wrap_angle(e - t))
    if kind == "relative":
        return (e - t) / t
    return e - t


@dataclass
class MetricsReport:
    n_test: int
    strata_counts: dict
    metrics: dict
    min_correlation: float
    predictions: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {"schema": "stressnav.metrics/1", "n_test": self.n_test, "strata_counts": self.strata_counts,
                "metrics": self.metrics, "omega_min_correlation": self.min_correlation}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def scatter_csv(self, quantity: str) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "predicted", "actual", "relpos_stratum"])
        for p in self.predictions:
            w.writerow([p.id, _f(p.estimate[quantity]), _f(p.truth[quantity]), p.stratum])
        return buf.getvalue()

    def components_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "p1", "p2", "relpos", "diameter", "relpos_stratum"])
        for p in self.predictions:
            w.writerow([p.id, _f(p.estimate["p1"]), _f(p.estimate["p2"]), _f(p.truth["relpos"]), _f(p.truth["diameter"]), p.stratum])
        return buf.getvalue()


def summarize(preds: list) -> MetricsReport:
    """Error statistics for a list of predictions, overall and per relative-position stratum."""
    counts = {name: sum(p.stratum == name for p in preds) for name, _, _ in STRATA}
    metrics = {}
    for q, (_, stat, unit) in METRIC_SPEC.items():
        err = _errors(preds, q)
        entry = {"statistic": stat, "unit": unit, "overall": _stats(err, stat) if len(preds) else None, "strata": {}}
        for name, _, _ in STRATA:
            mask = np.array([p.stratum == name for p in preds], bool)
            # empty strata are reported as absent, not as zero error
            entry["strata"][name] = _stats(err[mask], stat) if mask.any() else None
        metrics[q] = entry
    om = np.abs(_errors(preds, "omega")) if preds else np.array([])
    metrics["omega"]["max_abs"] = float(np.nanmax(om)) if om.size else None
    min_corr = float(min(p.correlation for p in preds)) if preds else math.nan
    return MetricsReport(len(preds), counts, metrics, min_corr, preds)


def evaluate(models: ModelSet, test, dt: float | None = None) -> MetricsReport:
    """Run every estimator on the test samples and summarise the errors."""
    samples = test.test if isinstance(test, Dataset) else list(test)
    if dt is None:
        dt = test.config.dt if isinstance(test, Dataset) else 5e-3
    return summarize([predict_sample(s, models, dt) for s in samples])
