"""Thermal noise of mechanical stress sensors modelled as damped stochastic oscillators.

All quantities here are SI (m, s, kg, Pa, K).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import SolverError
from .physics import K_B
from .sensors import StressReading

WATER_DENSITY = 1.0e3


@dataclass(frozen=True)
class SensorDesign:
    """Sensor size s (m), averaging time t (s), damping factor g, coverage fraction lam, sensor count n, stress scale p (Pa)."""

    s: float
    t: float
    g: float = 8.0
    lam: float = 0.5
    n: int = 30
    p: float = 1.0

    def __post_init__(self):
        if not (self.s > 0 and self.t > 0 and self.g > 0):
            raise ValueError("s, t and g must be positive")
        if not 0 < self.lam <= 1:
            raise ValueError("coverage fraction must lie in (0, 1]")
        if self.n < 1:
            raise ValueError("need at least one sensor")

    @classmethod
    def covering(cls, r: float, lam: float = 0.5, n: int = 30, t: float = 5e-3, g: float = 8.0, p: float = 1.0) -> "SensorDesign":
        """n sensors sharing a fraction lam of a sphere of radius r, so s^2 = 4 pi r^2 lam / n."""
        return cls(s=math.sqrt(4 * math.pi * r * r * lam / n), t=t, g=g, lam=lam, n=n, p=p)

    @classmethod
    def reference(cls) -> "SensorDesign":
        """30 disk sensors on half of a 1 um robot, 1 Pa stresses, 5 ms averaging."""
        return cls.covering(1e-6)


@dataclass(frozen=True)
class OscillatorParams:
    """dV = (-gamma V - omega^2 X + alpha) dt + sigma dW,  dX = V dt,  dA = X dt."""

    gamma: float
    omega: float
    m: float
    alpha: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.omega > 0 and self.m > 0):
            raise ValueError("gamma, omega and m must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @classmethod
    def from_design(cls, design: SensorDesign, T: float, eta: float, density: float = WATER_DENSITY,
                    omega_ratio: float = 0.5) -> "OscillatorParams":
        """Mass density*s^3, viscous damping g eta s / m, stress force p s^2, thermal sigma; omega = omega_ratio*gamma."""
        m = density * design.s**3
        gamma = damping_rate(design.g, eta, design.s, m)
        return cls(gamma=gamma, omega=omega_ratio * gamma, m=m, alpha=design.p * design.s**2 / m,
                   sigma=fluctuation_sigma(gamma, m, T))


def damping_rate(g: float, eta: float, s: float, m: float) -> float:
    """Velocity damping coefficient of an object with drag g eta s v."""
    return g * eta * s / m


def fluctuation_sigma(gamma: float, m: float, T: float) -> float:
    """Fluctuation-dissipation noise magnitude sqrt(2 k_B T gamma / m)."""
    if gamma < 0 or m <= 0 or T < 0:
        raise ValueError("gamma, T must be non-negative and m positive")
    return math.sqrt(2 * K_B * T * gamma / m)


def snr_single(design: SensorDesign, T: float, eta: float) -> float:
    """Signal-to-noise of one sensor averaged over design.t: p^2 s^3 t / (2 k_B T g eta)."""
    return design.p**2 * design.s**3 * design.t / (2 * K_B * T * design.g * eta)


def snr_array(design: SensorDesign, r: float, T: float, eta: float) -> float:
    """Signal-to-noise of Fourier-type combinations of n sensors covering a fraction lam of a radius-r robot."""
    return 4 * design.p**2 * r**3 * design.t / (K_B * T * design.g * eta) * math.sqrt((math.pi * design.lam) ** 3 / design.n)


def snr_from_oscillator(params: OscillatorParams, t: float) -> float:
    """alpha^2 t / sigma^2."""
    return math.inf if params.sigma == 0 else params.alpha**2 * t / params.sigma**2


def equilibrium_stats(params: OscillatorParams, t: float):
    """Mean and standard deviation of A(t)/t once the oscillator is in equilibrium."""
    if t <= 10.0 / params.gamma:
        warnings.warn(f"averaging time {t:.3g} s is not long compared to the damping time {1 / params.gamma:.3g} s")
    w2 = params.omega**2
    return params.alpha / w2, params.sigma / (w2 * math.sqrt(t))


def stationary_state(params: OscillatorParams, size: int, rng: np.random.Generator):
    """Draw (X, V) from the equilibrium distribution of the oscillator."""
    sd_v = params.sigma / math.sqrt(2 * params.gamma)
    sd_x = sd_v / params.omega
    x = params.alpha / params.omega**2 + sd_x * rng.standard_normal(size)
    v = sd_v * rng.standard_normal(size)
    return x, v


def _check_step(params: OscillatorParams, dt: float):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt * max(params.gamma, params.omega) > 0.5:
        raise SolverError(f"dt={dt:.3g} s is too large for gamma={params.gamma:.3g}/s, omega={params.omega:.3g}/s")


def simulate_oscillator(params: OscillatorParams, t_end: float, dt: float, seed: int = 0, record_every: int = 1,
                        stationary_start: bool = False):
    """Euler-Maruyama path of one oscillator: returns (time, X, V, A) sampled every ``record_every`` steps."""
    _check_step(params, dt)
    rng = np.random.default_rng(seed)
    steps = int(round(t_end / dt))
    if stationary_start:
        x0, v0 = stationary_state(params, 1, rng)
        x, v = float(x0[0]), float(v0[0])
    else:
        x, v = 0.0, 0.0
    a = 0.0
    g, w2, al, sq = params.gamma, params.omega**2, params.alpha, params.sigma * math.sqrt(dt)
    noise = rng.standard_normal(steps)
    n_rec = steps // record_every + 1
    out = np.empty((n_rec, 4))
    out[0] = (0.0, x, v, a)
    k = 1
    for i in range(steps):
        x, v, a = x + v * dt, v + (-g * v - w2 * x + al) * dt + sq * noise[i], a + x * dt
        if (i + 1) % record_every == 0:
            out[k] = ((i + 1) * dt, x, v, a)
            k += 1
    out = out[:k]
    return out[:, 0], out[:, 1], out[:, 2], out[:, 3]


def simulate_ensemble(params: OscillatorParams, t_end: float, dt: float, runs: int, seed: int = 0,
                      stationary_start: bool = True) -> np.ndarray:
    """A(t_end)/t_end for ``runs`` independent oscillators, integrated together."""
    _check_step(params, dt)
    rng = np.random.default_rng(seed)
    steps = int(round(t_end / dt))
    if stationary_start:
        x, v = stationary_state(params, runs, rng)
    else:
        x, v = np.zeros(runs), np.zeros(runs)
    a = np.zeros(runs)
    g, w2, al, sq = params.gamma, params.omega**2, params.alpha, params.sigma * math.sqrt(dt)
    for _ in range(steps):
        dw = rng.standard_normal(runs)
        a += x * dt
        x_new = x + v * dt
        v += (-g * v - w2 * x + al) * dt + sq * dw
        x = x_new
    return a / (steps * dt)


def reading_noise_sd(design: SensorDesign, T: float, eta: float) -> float:
    """Per-sensor noise standard deviation (Pa): p / sqrt(snr_single), independent of p."""
    return math.sqrt(2 * K_B * T * design.g * eta / (design.s**3 * design.t))


def perturb_readings(reading: StressReading, design: SensorDesign, T: float, eta: float, seed: int = 0) -> StressReading:
    """Add independent Gaussian thermal noise to every sensor and component, then re-apply the gauge."""
    sd = reading_noise_sd(design, T, eta) if T > 0 else 0.0
    if sd == 0.0:
        return reading.gauge_normalized()
    rng = np.random.default_rng(seed)
    noise = sd * rng.standard_normal((2, reading.n))
    out = StressReading(reading.normal + noise[0], reading.tangential + noise[1], reading.timestamp, dict(reading.meta))
    return out.gauge_normalized()


def with_time(design: SensorDesign, t: float) -> SensorDesign:
    return replace(design, t=t)
