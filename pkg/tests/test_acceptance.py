"""Acceptance suite: one PASS/FAIL line per criterion, repeated in the terminal summary.

The 1000-sample corpus and the curved-vessel trajectory are expensive, so they
are cached under tests/.cache keyed by the sampler settings and a hash of the
package sources; set STRESSNAV_REGENERATE=1 to force regeneration.
"""
import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import stressnav
from conftest import band_limited, record
from stressnav.cli import TRAJECTORY_TOL, bundled, run_trajectory
from stressnav.estimators import wrap_angle
from stressnav.features import fourier_coefficients, interpolate_stress
from stressnav.geometry import RobotPose, Scenario, table2_scenario
from stressnav.models import reference_models
from stressnav.noise import (
    OscillatorParams,
    SensorDesign,
    equilibrium_stats,
    simulate_ensemble,
    snr_array,
    snr_from_oscillator,
    snr_single,
)
from stressnav.physics import FluidProperties
from stressnav.sensors import SensorArray
from stressnav.stokes import Discretization, solve_channel, solve_flow, surface_traction
from stressnav.training import (
    Dataset,
    SamplerConfig,
    dataset_from_csv,
    dataset_to_csv,
    evaluate,
    fit_models,
    generate_samples,
    solve_sample,
)

CACHE = Path(__file__).parent / ".cache"
SOURCE = Path(stressnav.__file__).parent


def source_hash() -> str:
    h = hashlib.sha256()
    for path in sorted(SOURCE.rglob("*.py")):
        h.update(path.relative_to(SOURCE).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def cached(name: str, key: dict, build):
    """Return text from the cache, building and storing it when missing or stale."""
    digest = hashlib.sha256(json.dumps({"key": key, "src": source_hash()}, sort_keys=True).encode()).hexdigest()[:16]
    path = CACHE / f"{name}-{digest}.txt"
    if path.exists() and not os.environ.get("STRESSNAV_REGENERATE"):
        return path.read_text(), None
    t0 = time.perf_counter()
    text = build()
    elapsed = time.perf_counter() - t0
    CACHE.mkdir(exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    (CACHE / f"{name}-{digest}.seconds").write_text(repr(elapsed))
    return text, elapsed


def build_seconds(name_prefix: str):
    files = sorted(CACHE.glob(f"{name_prefix}-*.seconds"), key=lambda p: p.stat().st_mtime)
    return float(files[-1].read_text()) if files else None


# --------------------------------------------------------------------------- 1


def test_c01_table2_golden_values():
    sc = table2_scenario()
    t0 = time.perf_counter()
    sol = solve_flow(sc)
    elapsed = time.perf_counter() - t0
    m = sol.motion
    ok_v = abs(m.speed / 530.0 - 1) <= 0.10
    ok_w = abs(m.omega / -150.0 - 1) <= 0.10
    ok_t = elapsed < 30.0
    passed = record(
        "C1 solver golden value",
        ok_v and ok_w and ok_t,
        f"speed {m.speed:.1f} um/s (530 +-10%), omega {m.omega:.1f} rad/s (-150 +-10%), solve {elapsed:.2f} s (< 30 s)",
    )
    assert passed


# --------------------------------------------------------------------------- 2


def test_c02_analytic_oracles():
    sc = table2_scenario()
    chan = solve_channel(sc)
    xs, ys = np.linspace(2.0, 8.0, 10), np.linspace(-2.7, 2.7, 10)
    pts = np.array([(x, y) for x in xs for y in ys])
    exact = sc.inlet_u * (1 - (2 * pts[:, 1] / sc.vessel.d) ** 2)
    v = chan.velocity(pts)
    rel = np.hypot(v[:, 0] - exact, v[:, 1]) / np.abs(exact)
    centred = solve_flow(sc.with_pose(RobotPose(5.0, 0.0, 0.3))).motion
    bound = 1e-3 * abs(sc.inlet_u) / sc.shape.r
    passed = record(
        "C2 analytic oracles",
        rel.max() < 0.01 and abs(centred.omega) < bound,
        f"Poiseuille max rel err {rel.max():.2e} at 100 probes (< 1%), centred |omega| {abs(centred.omega):.2e} (< {bound:g})",
    )
    assert passed


# --------------------------------------------------------------------------- 3


def test_c03_linearity():
    sc = table2_scenario()
    sensors = SensorArray(30)
    base = solve_flow(sc)
    rb = surface_traction(base, sensors)
    fb = fourier_coefficients(rb, 6)
    mb = np.array([base.motion.vx, base.motion.vy, base.motion.omega])
    devs, rels = [], []
    for cu, ce in ((2.0, 1.0), (-0.5, 1.0), (1.0, 3.0), (0.7, 0.2)):
        s2 = replace(sc, inlet_u=cu * sc.inlet_u, fluid=FluidProperties(eta=ce * sc.fluid.eta))
        sol = solve_flow(s2)
        r2 = surface_traction(sol, sensors)
        m2 = np.array([sol.motion.vx, sol.motion.vy, sol.motion.omega])
        # tractions scale with u * eta, the motion with u only
        tr_dev = np.abs(np.r_[r2.normal, r2.tangential] - cu * ce * np.r_[rb.normal, rb.tangential]).max()
        tr_dev /= abs(cu * ce) * np.abs(np.r_[rb.normal, rb.tangential]).max()
        mo_dev = np.abs(m2 - cu * mb).max() / (abs(cu) * np.abs(mb).max())
        devs.append(max(tr_dev, mo_dev))
        rels.append(np.abs(fourier_coefficients(r2, 6).rel - fb.rel).max())
    passed = record(
        "C3 linearity in u and eta",
        max(devs) < 1e-6 and max(rels) < 1e-10,
        f"max relative deviation {max(devs):.2e} (< 1e-6), relative magnitudes {max(rels):.2e} (< 1e-10)",
    )
    assert passed


# --------------------------------------------------------------------------- 4


def test_c04_feature_math():
    rng = np.random.default_rng(4)
    worst_interp, worst_norm, worst_phase = 0.0, 0.0, 0.0
    for _ in range(100):
        ks = rng.choice(np.arange(1, 7), size=3, replace=False)
        cn = {int(k): (rng.uniform(0.1, 3), rng.uniform(-np.pi, np.pi)) for k in ks}
        ct = {int(k): (rng.uniform(0.1, 3), rng.uniform(-np.pi, np.pi)) for k in rng.permutation(ks)[:2]}
        delta = rng.uniform(-np.pi, np.pi)
        a, fn, ft = band_limited(30, cn, ct)
        b, _, _ = band_limited(30, cn, ct, offset=delta)
        fa, fb = fourier_coefficients(a, 6), fourier_coefficients(b, 6)
        th = rng.uniform(0, 2 * np.pi, 50)
        gn, gt = interpolate_stress(fa, th)
        worst_interp = max(worst_interp, np.abs(gn - fn(th)).max(), np.abs(gt - ft(th)).max())
        worst_norm = max(worst_norm, abs((fa.rel**2).sum() - 1))
        worst_phase = max(worst_phase, np.abs(fb.coeffs - fa.coeffs * np.exp(-1j * np.arange(7) * delta)).max())
    passed = record(
        "C4 feature math",
        worst_interp < 1e-10 and worst_norm < 1e-10 and worst_phase < 1e-10,
        f"interpolation {worst_interp:.1e}, |sum m^2 - 1| {worst_norm:.1e}, phase law {worst_phase:.1e} (all < 1e-10)",
    )
    assert passed


# --------------------------------------------------------------------------- corpus

CORPUS_CONFIG = SamplerConfig()


@pytest.fixture(scope="module")
def corpus():
    def build():
        workers = max(1, min(8, os.cpu_count() or 1))
        return dataset_to_csv(generate_samples(CORPUS_CONFIG, Discretization(), workers=workers))

    text, _ = cached("corpus", CORPUS_CONFIG.to_dict(), build)
    return text, dataset_from_csv(text, CORPUS_CONFIG)


@pytest.fixture(scope="module")
def trained(corpus):
    _, ds = corpus
    models = fit_models(ds)
    return models, evaluate(models, ds)


def _stat(report, q, stratum=None):
    entry = report.metrics[q]
    return entry["overall"] if stratum is None else entry["strata"][stratum]


def test_c05a_direction_errors(trained):
    _, rep = trained
    w, m = _stat(rep, "wall_direction"), _stat(rep, "motion_direction")
    assert record("C5a wall/motion direction", w <= 2 and m <= 2,
                  f"mean |error| wall {w:.3f} deg, motion {m:.3f} deg (<= 2 deg each)")


def test_c05b_relative_position(trained):
    _, rep = trained
    v = _stat(rep, "relpos")
    assert record("C5b relative position", v <= 0.05, f"RMS {v:.4f} (<= 0.05)")


def test_c05c_diameter(trained):
    _, rep = trained
    v = _stat(rep, "diameter")
    assert record("C5c diameter", v <= 0.8, f"RMS {v:.3f} um (<= 0.8 um)")


def test_c05d_wall_distance(trained):
    _, rep = trained
    vals = [_stat(rep, "wall_distance", s) for s in ("<0.2", "0.2-0.5", ">=0.5")]
    ok = all(v is not None and v <= b for v, b in zip(vals, (0.7, 0.3, 0.1)))
    assert record("C5d wall distance", ok,
                  "stratified RMS " + " / ".join(f"{v:.3f}" for v in vals) + " um (<= 0.7 / 0.3 / 0.1 um)")


def test_c05e_angular_velocity(trained):
    _, rep = trained
    v = _stat(rep, "omega")
    assert record("C5e angular velocity", v <= 1.0 and rep.min_correlation > 0.999,
                  f"mean |error| {v:.2e} rad/s (<= 1), min correlation {rep.min_correlation:.6f} (> 0.999)")


def test_c05f_speed_ratio(trained):
    models, rep = trained
    v = _stat(rep, "speed_ratio")
    b = models.speed_ratio.b
    assert record("C5f speed ratio", v <= 0.12 and 4.9 <= b <= 5.9,
                  f"median relative error {v:.3f} (<= 0.12), fitted b {b:.3f} (in [4.9, 5.9]), a {models.speed_ratio.a:.3f}")


def test_c05g_speed(trained):
    _, rep = trained
    v = _stat(rep, "speed")
    strata = [_stat(rep, "speed", s) for s in ("<0.2", "0.2-0.5", ">=0.5")]
    monotone = strata[0] > strata[1] > strata[2]
    assert record("C5g speed", v <= 0.30 and monotone,
                  f"mean relative error {v:.3f} (<= 0.30), strata " + " > ".join(f"{s:.3f}" for s in strata))


def test_c05h_corpus_size_and_runtime(corpus):
    _, ds = corpus
    seconds = build_seconds("corpus")
    ok = len(ds.train) == 800 and len(ds.test) == 200 and (seconds is None or seconds <= 7200)
    when = "not rebuilt this run" if seconds is None else f"{seconds:.0f} s on {os.cpu_count()} core(s)"
    assert record("C5h corpus", ok, f"{len(ds.samples)} samples, {len(ds.train)}/{len(ds.test)} split, generation {when} (<= 2 h)")


# --------------------------------------------------------------------------- 6


def test_c06_pca_variance(trained):
    models, _ = trained
    v = float(models.pca.explained.sum())
    assert record("C6 PCA", v >= 0.95, f"first two components explain {100 * v:.2f}% (>= 95%)")


# --------------------------------------------------------------------------- 7


def test_c07_reference_coefficients():
    m = reference_models()
    a = float(m.position.predict(0.0, 0.0))
    d = float(m.diameter.predict(0.0, 0.0))
    r = float(m.speed_ratio.predict(0.5))
    ok = abs(a - 0.3752) <= 1e-4 and abs(d - 5.259) <= 1e-3 and r == pytest.approx(8.51, abs=1e-12)
    assert record("C7 bundled coefficients", ok, f"logistic(0,0) {a:.5f}, GLM(0,0) {d:.4f} um, R(0.5) {r!r}")


# --------------------------------------------------------------------------- 8


def test_c08_noise():
    design = SensorDesign.reference()
    snr = snr_array(design, 1e-6, 310.0, 1e-3)
    osc = OscillatorParams.from_design(design, 310.0, 1e-3)
    t_avg = 1000.0 / osc.gamma
    runs = 2000
    t0 = time.perf_counter()
    vals = simulate_ensemble(osc, t_avg, 1.0 / (100.0 * osc.gamma), runs, seed=8)
    elapsed = time.perf_counter() - t0
    mean, sd = equilibrium_stats(osc, t_avg)
    z_mean = (vals.mean() - mean) / (sd / math.sqrt(runs))
    sd_hat = vals.std(ddof=1)
    z_sd = (sd_hat - sd) / (sd / math.sqrt(2 * (runs - 1)))
    rng = np.random.default_rng(88)
    worst = 0.0
    for _ in range(100):
        d = SensorDesign(s=10 ** rng.uniform(-7, -5), t=10 ** rng.uniform(-4, 0), g=rng.uniform(1, 20), p=rng.uniform(0.1, 10))
        T, eta = rng.uniform(250, 350), 10 ** rng.uniform(-4, -2)
        o = OscillatorParams.from_design(d, T, eta)
        worst = max(worst, abs(snr_from_oscillator(o, d.t) / snr_single(d, T, eta) - 1))
    ok = abs(snr / 210 - 1) <= 0.05 and abs(z_mean) <= 3 and abs(z_sd) <= 3 and elapsed <= 300 and worst <= 1e-10
    assert record(
        "C8 noise",
        ok,
        f"SNR_n {snr:.2f} (210 +-5%), MC mean {z_mean:+.2f} SE, sd {z_sd:+.2f} SE over {runs} runs in {elapsed:.0f} s, "
        f"identity max rel dev {worst:.1e} (<= 1e-10)",
    )


# --------------------------------------------------------------------------- 9

TRAJ = {"duration": 0.1, "dt": 2.5e-3, "window": 5e-3, "every": 1, "tol": TRAJECTORY_TOL}


@pytest.fixture(scope="module")
def trajectory():
    sc = Scenario.load(bundled("curved_scenario.json"))

    def build():
        rows = list(run_trajectory(sc, TRAJ["duration"], TRAJ["dt"], TRAJ["window"], TRAJ["every"],
                                   reference_models(), Discretization(), SensorArray(30), TRAJ["tol"]))
        return json.dumps(rows)

    text, _ = cached("trajectory", {"scenario": sc.to_dict(), **TRAJ}, build)
    return sc, json.loads(text)


def test_c09_curved_trajectory(trajectory):
    sc, rows = trajectory
    p, d = sc.vessel.params, sc.vessel.d
    rows = [r for r in rows if r.get("status") == "ok" and r.get("omega_window_true") is not None]
    x = np.array([r["x"] for r in rows])
    corr = np.array([r["correlation"] for r in rows])
    om, om_true = np.array([r["omega"] for r in rows]), np.array([r["omega_window_true"] for r in rows])
    # the bump wall deviates by more than 1% of its height within 3 widths of its centre; the flow
    # feels it about one vessel diameter away, so "straight" means no bump within d of the robot
    bump_lo, bump_hi = p["bump_center"] - 3 * p["bump_width"], p["bump_center"] + 3 * p["bump_width"]
    straight = x + d <= bump_lo
    bump = (x >= bump_lo - d / 2) & (x <= bump_hi + d / 2)
    after = x > bump_hi + d / 2
    base = corr[straight].min() if straight.any() else math.nan
    dip = corr[bump].min() if bump.any() else math.nan
    recovered = corr[after].max() if after.any() else math.nan
    track = np.abs(om[straight] - om_true[straight]) / np.abs(om_true[straight])
    speeds = np.array([r["speed_true"] for r in rows])
    # recovery: the dip is regained to within 1% of its depth (the arc is not the straight section)
    regained = (recovered - dip) / (base - dip) if base > dip else math.nan
    ok = (straight.sum() >= 3 and bump.any() and after.any() and dip < base and regained >= 0.99
          and track.max() <= 0.10 and (speeds < abs(sc.inlet_u)).all())
    assert record(
        "C9 curved trajectory",
        ok,
        f"correlation straight min {base:.6f}, bump min {dip:.6f}, after-bump max {recovered:.6f} "
        f"({100 * regained:.3f}% of the dip regained, >= 99%); "
        f"straight-section omega error max {100 * track.max():.2f}% over {straight.sum()} windows (<= 10%); "
        f"max speed {speeds.max():.1f} < u = {abs(sc.inlet_u):.0f} um/s",
    )


# --------------------------------------------------------------------------- 10


def test_c10_determinism(corpus):
    text, ds = corpus
    lines = text.splitlines()
    ids = (0, 417, 999)
    same_rows = True
    for i in ids:
        s = solve_sample(CORPUS_CONFIG, i, Discretization())
        row = dataset_to_csv(Dataset(CORPUS_CONFIG, [s])).splitlines()[1]
        same_rows &= row == lines[i + 1]
    same_csv = dataset_to_csv(dataset_from_csv(text, CORPUS_CONFIG)) == text
    m1, m2 = fit_models(ds), fit_models(dataset_from_csv(text, CORPUS_CONFIG))
    same_models = m1.to_json() == m2.to_json()
    same_metrics = evaluate(m1, ds).to_json() == evaluate(m2, ds).to_json()
    ok = same_rows and same_csv and same_models and same_metrics
    assert record(
        "C10 determinism",
        ok,
        f"re-solved rows {list(ids)} identical: {same_rows}; CSV round trip: {same_csv}; "
        f"models JSON: {same_models}; metrics JSON: {same_metrics}",
    )
