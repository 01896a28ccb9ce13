"""Command-line front end: ``stressnav <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 geometry violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import GeometryViolation, InvalidGeometryError, StressNavError
from .estimators import estimate_angular_velocity, estimate_speed, full_estimate
from .geometry import RobotPose, Scenario
from .models import ModelSet, reference_models
from .noise import (
    OscillatorParams,
    SensorDesign,
    equilibrium_stats,
    perturb_readings,
    simulate_ensemble,
    snr_array,
    snr_single,
)
from .sensors import SensorArray
from .stokes import Discretization, advance_detailed, solve_flow, surface_traction
from .training import (
    METRIC_SPEC,
    SamplerConfig,
    dataset_from_csv,
    dataset_to_csv,
    evaluate,
    fit_models,
    generate_samples,
)

log = logging.getLogger("stressnav")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_GEOMETRY = 0, 2, 3, 4


class ConfigError(Exception):
    pass


# ----------------------------------------------------------------------------- io helpers


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def bundled(name: str) -> Path:
    return Path(str(resources.files("stressnav") / "data" / name))


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_scenario(path) -> Scenario:
    data = load_json(path)
    try:
        return Scenario.from_dict(data)
    except InvalidGeometryError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


class Manifest:
    """Record of one run: command, config hash, seed, versions, outputs and timings."""

    def __init__(self, command: str, config: dict, seed):
        self.data = {
            "schema": "stressnav.manifest/1",
            "command": command,
            "config": config,
            "config_hash": config_hash(config),
            "seed": seed,
            "versions": {"stressnav": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "outputs": [],
            "timings_s": {},
        }
        self._t0 = time.perf_counter()

    def output(self, path: Path) -> None:
        self.data["outputs"].append(str(path))

    def timing(self, key: str, value) -> None:
        self.data["timings_s"][key] = value

    def write(self, out_dir: Path) -> None:
        self.data["timings_s"]["wall_clock"] = time.perf_counter() - self._t0
        atomic_write(out_dir / f"manifest_{self.data['command']}.json", json.dumps(self.data, indent=2))


def discretization_from(cfg: dict) -> Discretization:
    try:
        return Discretization(**cfg.get("discretization", {}))
    except TypeError as exc:
        raise ConfigError(f"bad discretization settings: {exc}") from exc


def sampler_from(cfg: dict, args) -> SamplerConfig:
    data = dict(cfg.get("sampler", {}))
    if args.seed is not None:
        data["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        data["count"] = args.count
    try:
        return SamplerConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sampler settings: {exc}") from exc


def models_from(spec: str | None, out_dir: Path) -> ModelSet:
    if spec in (None, "trained"):
        path = out_dir / "models.json"
        if not path.exists():
            raise ConfigError(f"no trained models at {path}; run 'train' first or pass --models paper-reference")
        return ModelSet.load(path)
    if spec == "paper-reference":
        return reference_models()
    try:
        return ModelSet.load(spec)
    except FileNotFoundError as exc:
        raise ConfigError(f"models file not found: {spec}") from exc
    except (KeyError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"{spec}: not a model file ({exc})") from exc


# ----------------------------------------------------------------------------- commands


def cmd_solve(args, cfg) -> int:
    out = Path(args.out_dir)
    sc = load_scenario(args.scenario)
    disc = discretization_from(cfg)
    sensors = SensorArray(args.sensors)
    man = Manifest("solve", {"scenario": sc.to_dict(), "discretization": disc.to_dict(), "sensors": args.sensors}, args.seed)
    sol = solve_flow(sc, disc)
    data = sol.to_dict(sensors)
    if not args.profile:
        data.pop("timings_s")
    path = out / "solution.json"
    atomic_write(path, json.dumps(data, indent=2))
    man.output(path)
    if args.field:
        fpath = out / "field.csv"
        atomic_write(fpath, sol.field_csv(args.field_nx, args.field_ny))
        man.output(fpath)
    man.timing("solve", sol.timings)
    man.write(out)
    m = sol.motion
    print(f"speed {m.speed:.2f} um/s  omega {m.omega:.2f} rad/s  ({sol.n_unknowns} unknowns)")
    if args.profile:
        for k, v in sol.timings.items():
            print(f"  {k:10s} {v * 1e3:8.1f} ms")
    return EXIT_OK


def cmd_dataset(args, cfg) -> int:
    out = Path(args.out_dir)
    sampler = sampler_from(cfg, args)
    disc = discretization_from(cfg)
    workers = args.threads or int(cfg.get("workers", 1))
    man = Manifest("dataset", {"sampler": sampler.to_dict(), "discretization": disc.to_dict()}, sampler.seed)

    def progress(k, n):
        if k % max(n // 20, 1) == 0 or k == n:
            log.info("solved %d/%d", k, n)

    ds = generate_samples(sampler, disc, workers=workers, progress=progress)
    path = out / "dataset.csv"
    atomic_write(path, dataset_to_csv(ds))
    man.output(path)
    man.timing("per_sample_mean", float(np.mean(ds.timings)))
    man.data["redraws"] = ds.redraws
    man.write(out)
    print(f"{len(ds.samples)} samples ({len(ds.train)} train / {len(ds.test)} test) -> {path}")
    return EXIT_OK


def _load_dataset(args, out: Path):
    path = Path(args.dataset) if args.dataset else out / "dataset.csv"
    if not path.exists():
        raise ConfigError(f"dataset not found: {path}")
    return dataset_from_csv(path.read_text()), path


def cmd_train(args, cfg) -> int:
    out = Path(args.out_dir)
    ds, src = _load_dataset(args, out)
    man = Manifest("train", {"dataset_sha256": hashlib.sha256(src.read_bytes()).hexdigest()}, ds.config.seed)
    models = fit_models(ds)
    path = out / "models.json"
    atomic_write(path, models.to_json())
    man.output(path)
    man.write(out)
    print(f"explained variance {models.pca.explained.sum():.4f}; speed ratio a={models.speed_ratio.a:.3f} b={models.speed_ratio.b:.3f}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    out = Path(args.out_dir)
    ds, src = _load_dataset(args, out)
    models = models_from(args.models, out)
    man = Manifest("eval", {"dataset_sha256": hashlib.sha256(src.read_bytes()).hexdigest(),
                            "models": args.models or "trained", "models_hash": config_hash(models.to_dict())}, ds.config.seed)
    rep = evaluate(models, ds)
    path = out / "metrics.json"
    atomic_write(path, rep.to_json())
    man.output(path)
    for q in METRIC_SPEC:
        p = out / f"scatter_{q}.csv"
        atomic_write(p, rep.scatter_csv(q))
        man.output(p)
    p = out / "scatter_components.csv"
    atomic_write(p, rep.components_csv())
    man.output(p)
    man.write(out)
    for q, e in rep.metrics.items():
        print(f"{q:18s} {e['statistic']:10s} {e['overall']}")
    return EXIT_OK


TRAJECTORY_TOL = 1e-2  # um, 1% of a unit robot radius

TRAJ_COLUMNS = [
    "t", "x", "y", "psi", "v_x", "v_y", "omega_true", "omega_window_true", "speed_true", "relpos_true",
    "diameter_true", "wall_distance_true", "wall_direction_true",
    "theta_extreme", "wall_direction", "motion_direction", "relpos", "diameter", "wall_distance",
    "omega", "speed_ratio", "speed", "correlation", "in_range", "omega_valid", "status",
]


def run_trajectory(sc: Scenario, duration: float, dt: float, window: float, every: int, models: ModelSet,
                   disc: Discretization, sensors: SensorArray, tol: float = TRAJECTORY_TOL):
    """Step the robot through the vessel; yields one dict per recorded step.

    The angular-velocity estimate at time t correlates the readings at t - window and t.
    ``tol`` is the per-step position error bound (um) of the step-halving integrator.
    """
    lag = int(round(window / dt))
    if lag < 1 or abs(lag * dt - window) > 1e-9:
        raise ConfigError("the estimation window must be a positive multiple of dt")
    history = []  # (t, psi, reading)
    steps = int(round(duration / dt))
    t = 0.0
    cur = sc
    sol = solve_flow(cur, disc)
    for k in range(steps + 1):
        reading = surface_traction(sol, sensors, timestamp=t)
        history.append((t, cur.pose.psi, reading))
        m = sol.motion
        row = {"t": t, "x": cur.pose.x, "y": cur.pose.y, "psi": cur.pose.psi, "v_x": m.vx, "v_y": m.vy,
               "omega_true": m.omega, "speed_true": m.speed, "relpos_true": cur.relative_position(),
               "diameter_true": cur.local_diameter(), "wall_distance_true": cur.wall_distance(),
               "wall_direction_true": (cur.wall_direction_lab() - cur.pose.psi) % (2 * math.pi), "status": "ok"}
        if k % every == 0:
            # static quantities from the current reading, rotation from the window ending now
            rep = full_estimate(reading, None, window, models, r=cur.shape.radius, shape=cur.shape)
            row.update({q: getattr(rep, q) for q in ("theta_extreme", "wall_direction", "motion_direction", "relpos",
                                                     "diameter", "wall_distance", "speed_ratio")})
            row["in_range"] = rep.in_range
            if len(history) > lag:
                prev = history[-1 - lag]
                av = estimate_angular_velocity(prev[2], reading, window, models.pca.M)
                row.update(omega=av.omega, correlation=av.correlation, omega_valid=av.reliable,
                           omega_window_true=(cur.pose.psi - prev[1]) / window)
                if rep.valid.get("speed_ratio"):
                    row["speed"] = estimate_speed(av.omega, rep.speed_ratio, cur.shape.radius)
            yield row
        if k == steps:
            break
        try:
            adv = advance_detailed(cur, dt, disc, max_step=dt, tol=tol, first=sol)
            cur = adv.scenario
            sol = solve_flow(cur, disc)
        except GeometryViolation:
            yield {"t": t + dt, "status": "geometry_violation"}
            return
        t = (k + 1) * dt


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def cmd_trajectory(args, cfg) -> int:
    out = Path(args.out_dir)
    if args.preset:
        sc = Scenario.load(bundled(f"{args.preset}_scenario.json"))
    elif args.scenario:
        sc = load_scenario(args.scenario)
    else:
        raise ConfigError("give a scenario file or --preset")
    if not args.dt > 0 or not args.duration > 0 or args.estimate_every < 1 or not args.tol > 0:
        raise ConfigError("--dt, --duration and --tol must be positive and --estimate-every >= 1")
    disc = discretization_from(cfg)
    models = models_from(args.models or "paper-reference", out)
    man = Manifest("trajectory", {"scenario": sc.to_dict(), "duration": args.duration, "dt": args.dt,
                                  "window": args.window, "every": args.estimate_every, "tol": args.tol,
                                  "discretization": disc.to_dict()}, args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJ_COLUMNS)
    code = EXIT_OK
    for row in run_trajectory(sc, args.duration, args.dt, args.window, args.estimate_every, models, disc,
                              SensorArray(args.sensors), args.tol):
        w.writerow([_fmt(row.get(c)) for c in TRAJ_COLUMNS])
        if row.get("status") == "geometry_violation":
            code = EXIT_GEOMETRY
    path = out / "trajectory.csv"
    atomic_write(path, buf.getvalue())
    man.output(path)
    man.data["partial"] = code != EXIT_OK
    man.write(out)
    return code


NOISE_DEFAULTS = {
    "T": 310.0, "eta": 1e-3, "r": 1e-6, "lam": 0.5, "n": 30, "g": 8.0, "p": 1.0,
    "times": [5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2], "trials": 50, "mc_runs": 2000,
}


def cmd_noise(args, cfg) -> int:
    out = Path(args.out_dir)
    p = dict(NOISE_DEFAULTS)
    p.update(cfg.get("noise", {}))
    unknown = set(p) - set(NOISE_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown noise settings: {sorted(unknown)}")
    seed = 0 if args.seed is None else args.seed
    man = Manifest("noise", p, seed)
    sensors = SensorArray(int(p["n"]))
    sc = Scenario.load(bundled("table2_scenario.json"))
    disc = discretization_from(cfg)
    sol = solve_flow(sc, disc)
    base = surface_traction(sol, sensors)
    adv = advance_detailed(sc, 5e-3, disc, max_step=5e-3, first=sol, comoving=True)
    nxt = surface_traction(solve_flow(adv.scenario, disc), sensors, timestamp=5e-3)
    models = models_from(args.models or "paper-reference", out)
    clean = full_estimate(base, nxt, 5e-3, models, r=sc.shape.radius)
    true_wall = (sc.wall_direction_lab() - sc.pose.psi) % (2 * math.pi)
    truth_omega = adv.mean_omega(5e-3)
    cols = ["t_avg", "snr_single", "snr_array", "snr_single_mc", "noise_sd_pa", "wall_direction_err_deg",
            "relpos_dev", "omega_err", "min_correlation"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for i, t in enumerate(p["times"]):
        design = SensorDesign.covering(p["r"], p["lam"], int(p["n"]), t=t, g=p["g"], p=p["p"])
        s1 = snr_single(design, p["T"], p["eta"])
        sn = snr_array(design, p["r"], p["T"], p["eta"])
        # Monte Carlo noise variance over 1000 damping times, rescaled to t (variance falls as 1/t).
        # The signal is the noise-free response; a sample mean is far too noisy at this window length.
        osc = OscillatorParams.from_design(design, p["T"], p["eta"])
        t_sim = 1000.0 / osc.gamma
        step = 1.0 / (100.0 * osc.gamma)
        vals = simulate_ensemble(osc, t_sim, step, int(p["mc_runs"]), seed=seed + i)
        signal = simulate_ensemble(replace(osc, sigma=0.0), t_sim, step, 1, seed=seed + i)[0]
        mc = signal**2 / vals.var(ddof=1) * (t / t_sim)
        wall_err, rel_dev, om_err, cors = [], [], [], []
        for k in range(int(p["trials"])):
            ra = perturb_readings(base, design, p["T"], p["eta"], seed=seed + 1000 * (i + 1) + 2 * k)
            rb = perturb_readings(nxt, design, p["T"], p["eta"], seed=seed + 1000 * (i + 1) + 2 * k + 1)
            rep = full_estimate(ra, rb, 5e-3, models, r=sc.shape.radius)
            wall_err.append(abs(math.degrees((rep.wall_direction - true_wall + math.pi) % (2 * math.pi) - math.pi)))
            rel_dev.append(abs(rep.relpos - clean.relpos))
            om_err.append(abs(rep.omega - truth_omega))
            cors.append(rep.correlation)
        row = [t, s1, sn, mc, math.sqrt(2 * 1.380649e-23 * p["T"] * p["g"] * p["eta"] / (design.s**3 * t)),
               np.mean(wall_err), np.mean(rel_dev), np.mean(om_err), np.min(cors)]
        w.writerow([_fmt(float(v)) for v in row])
    path = out / "noise_sweep.csv"
    atomic_write(path, buf.getvalue())
    man.output(path)
    man.write(out)
    ref = SensorDesign.reference()
    print(f"reference design: snr_array = {snr_array(ref, 1e-6, 310.0, 1e-3):.1f}")
    return EXIT_OK


def cmd_profile(args, cfg) -> int:
    out = Path(args.out_dir)
    sc = load_scenario(args.scenario) if args.scenario else Scenario.load(bundled("table2_scenario.json"))
    base = discretization_from(cfg)
    man = Manifest("profile", {"scenario": sc.to_dict(), "discretization": base.to_dict()}, args.seed)
    levels = [
        ("coarse", replace(base, robot_nodes=96, panel_order=10, corner_levels=2, h_max=3.0)),
        ("default", base),
        ("fine", replace(base, robot_nodes=256, panel_order=16, corner_levels=8, gap_factor=0.25, h_max=1.0)),
        ("finest", replace(base, robot_nodes=384, panel_order=16, corner_levels=12, gap_factor=0.2, h_max=0.5)),
    ]
    sensors = SensorArray(args.sensors)
    rows = []
    for name, d in levels:
        t0 = time.perf_counter()
        sol = solve_flow(sc, d)
        el = time.perf_counter() - t0
        rd = surface_traction(sol, sensors)
        rows.append((name, sol.n_unknowns, el, sol.motion, rd, sol.timings))
    ref = rows[-1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "unknowns", "seconds", "speed", "omega", "rel_err_speed", "rel_err_omega", "rel_err_traction"])
    for name, n, el, m, rd, _ in rows:
        scale = np.abs(np.r_[ref[4].normal, ref[4].tangential]).max()
        te = np.abs(np.r_[rd.normal - ref[4].normal, rd.tangential - ref[4].tangential]).max() / scale
        w.writerow([name, n, f"{el:.4f}", repr(m.speed), repr(m.omega), f"{abs(m.speed / ref[3].speed - 1):.3e}",
                    f"{abs(m.omega / ref[3].omega - 1):.3e}", f"{te:.3e}"])
        print(f"{name:8s} {n:6d} unknowns {el:7.3f} s  speed {m.speed:.6f}  omega {m.omega:.6f}")
    path = out / "profile.csv"
    atomic_write(path, buf.getvalue())
    man.output(path)
    man.timing("default_stages", rows[1][5])
    man.write(out)
    return EXIT_OK


# ----------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (dataset default 20240101)")
    common.add_argument("--config", default=None, help="JSON config with sampler/discretization/noise sections")
    common.add_argument("--out-dir", default=".", help="directory for outputs and the run manifest")
    common.add_argument("--threads", type=int, default=None, help="worker processes for dataset generation")
    common.add_argument("--models", default=None, help="models.json path, 'trained' or 'paper-reference'")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="stressnav", description="Stress-based navigation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve one scenario")
    s.add_argument("scenario")
    s.add_argument("--sensors", type=int, default=30)
    s.add_argument("--field", action="store_true", help="also write field.csv (x, y, u_x, u_y, p)")
    s.add_argument("--field-nx", type=int, default=80)
    s.add_argument("--field-ny", type=int, default=30)
    s.add_argument("--profile", action="store_true", help="print per-stage timings")

    s = sub.add_parser("dataset", parents=[common], help="generate the sample corpus")
    s.add_argument("--count", type=int, default=None)

    s = sub.add_parser("train", parents=[common], help="fit models on the training split")
    s.add_argument("--dataset", default=None)

    s = sub.add_parser("eval", parents=[common], help="evaluate models on the test split")
    s.add_argument("--dataset", default=None)

    s = sub.add_parser("trajectory", parents=[common], help="step a robot through a vessel and estimate along the way")
    s.add_argument("scenario", nargs="?")
    s.add_argument("--preset", choices=["curved", "table2"], default=None)
    s.add_argument("--duration", type=float, default=0.1)
    s.add_argument("--dt", type=float, default=2.5e-3)
    s.add_argument("--window", type=float, default=5e-3, help="angular-velocity correlation window (s)")
    s.add_argument("--estimate-every", type=int, default=1)
    s.add_argument("--tol", type=float, default=TRAJECTORY_TOL, help="per-step position error bound (um)")
    s.add_argument("--sensors", type=int, default=30)

    sub.add_parser("noise", parents=[common], help="sensor-noise sweep")

    s = sub.add_parser("profile", parents=[common], help="time and refine the solver on one scenario")
    s.add_argument("scenario", nargs="?")
    s.add_argument("--sensors", type=int, default=30)
    return p


COMMANDS = {"solve": cmd_solve, "dataset": cmd_dataset, "train": cmd_train, "eval": cmd_eval,
            "trajectory": cmd_trajectory, "noise": cmd_noise, "profile": cmd_profile}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out_dir)
    try:
        cfg = load_json(args.config) if args.config else {}
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail(out, "config", str(exc), EXIT_CONFIG)
    except (GeometryViolation, InvalidGeometryError) as exc:
        return _fail(out, "geometry", str(exc), EXIT_GEOMETRY)
    except StressNavError as exc:
        return _fail(out, "numerical", str(exc), EXIT_NUMERIC)


def _fail(out: Path, kind: str, msg: str, code: int) -> int:
    err = {"error": kind, "message": msg, "exit_code": code}
    print(json.dumps(err), file=sys.stderr)
    try:
        atomic_write(out / "error.json", json.dumps(err, indent=2))
    except OSError:
        pass
    return code


if __name__ == "__main__":
    sys.exit(main())
