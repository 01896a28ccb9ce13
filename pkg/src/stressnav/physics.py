"""Fluid properties and the dimensionless numbers used to justify quasi-static Stokes flow.

Lengths passed to the dimensionless-number helpers are SI (m, m/s, s); the rest
of the package works in micrometres and seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidGeometryError

K_B = 1.380649e-23  # J/K, exact SI value


@dataclass(frozen=True)
class FluidProperties:
    """Density (kg/m^3), dynamic viscosity (Pa s) and temperature (K)."""

    rho: float = 1.0e3
    eta: float = 1.0e-3
    T: float = 310.0

    def __post_init__(self):
        for name in ("rho", "eta", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"fluid property {name} must be positive")

    @property
    def nu(self) -> float:
        """Kinematic viscosity in m^2/s."""
        return self.eta / self.rho

    def to_dict(self) -> dict:
        return {"rho": self.rho, "eta": self.eta, "T": self.T}

    @classmethod
    def from_dict(cls, data: dict) -> "FluidProperties":
        return cls(rho=float(data["rho"]), eta=float(data["eta"]), T=float(data["T"]))


def relative_position(y_c: float, d: float, r: float) -> float:
    """Offset of the robot centre from the vessel axis, scaled so 1 means touching a wall."""
    free = d / 2.0 - r
    if not free > 0:
        raise InvalidGeometryError(f"robot radius {r} does not fit in vessel of diameter {d}")
    if abs(y_c) > free * (1.0 + 1e-12):
        raise InvalidGeometryError(f"|y_c|={abs(y_c)} exceeds d/2 - r = {free}")
    return min(abs(y_c) / free, 1.0)


def reynolds(u: float, d: float, nu: float) -> float:
    if not nu > 0:
        raise ValueError("kinematic viscosity must be positive")
    return abs(u) * d / nu


def womersley(r: float, nu: float, t: float) -> float:
    if not (nu > 0 and t > 0):
        raise ValueError("nu and t must be positive")
    return r / math.sqrt(nu * t)


def diffusion_coefficient(r: float, T: float, eta: float) -> float:
    """Stokes-Einstein translational diffusion of a sphere, m^2/s."""
    return K_B * T / (6.0 * math.pi * eta * r)


def rotational_diffusion(r: float, T: float, eta: float) -> float:
    """Rotational diffusion of a sphere, rad^2/s."""
    return K_B * T / (8.0 * math.pi * eta * r**3)


def peclet(v: float, r: float, D: float) -> float:
    return abs(v) * r / D
