"""Fitted regression parameters and the bundle that carries them between training and estimation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import PcaModel, reference_pca

DIAMETER_TERMS = ("b0", "b1", "b2", "b11", "b22", "b12")


def _logistic(x):
    x = np.asarray(x, float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def diameter_design(p1, p2) -> np.ndarray:
    p1, p2 = np.asarray(p1, float), np.asarray(p2, float)
    return np.stack([np.ones_like(p1), p1, p2, p1 * p1, p2 * p2, p1 * p2], axis=-1)


@dataclass(frozen=True)
class PositionRegression:
    """Logistic model relPos = 1 / (1 + exp(-(b0 + b1 p1 + b2 p2)))."""

    beta: np.ndarray
    se: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, float))
        object.__setattr__(self, "se", np.asarray(self.se, float))
        if self.beta.shape != (3,) or not np.isfinite(self.beta).all():
            raise ValueError("logistic model needs three finite coefficients")

    def linear(self, p1, p2):
        return self.beta[0] + self.beta[1] * np.asarray(p1, float) + self.beta[2] * np.asarray(p2, float)

    def predict(self, p1, p2):
        return _logistic(self.linear(p1, p2))

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "se": _nan_list(self.se)}

    @classmethod
    def from_dict(cls, d: dict) -> "PositionRegression":
        return cls(np.asarray(d["beta"], float), np.asarray(_from_nan_list(d.get("se", [None] * 3)), float))


@dataclass(frozen=True)
class DiameterRegression:
    """Gamma log-link model d = exp(b0 + b1 p1 + b2 p2 + b11 p1^2 + b22 p2^2 + b12 p1 p2), in um."""

    beta: np.ndarray
    se: np.ndarray = field(default_factory=lambda: np.full(6, np.nan))
    dispersion: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, float))
        object.__setattr__(self, "se", np.asarray(self.se, float))
        if self.beta.shape != (6,) or not np.isfinite(self.beta).all():
            raise ValueError("diameter model needs six finite coefficients")

    def predict(self, p1, p2):
        return np.exp(diameter_design(p1, p2) @ self.beta)

    def to_dict(self) -> dict:
        return {"terms": list(DIAMETER_TERMS), "beta": self.beta.tolist(), "se": _nan_list(self.se),
                "dispersion": None if math.isnan(self.dispersion) else self.dispersion}

    @classmethod
    def from_dict(cls, d: dict) -> "DiameterRegression":
        disp = d.get("dispersion")
        return cls(np.asarray(d["beta"], float), np.asarray(_from_nan_list(d.get("se", [None] * 6)), float),
                   math.nan if disp is None else float(disp))


@dataclass(frozen=True)
class SpeedRatioFit:
    """R = a + b (1 - relPos) / relPos."""

    a: float
    b: float
    se_a: float = math.nan
    se_b: float = math.nan

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or not self.b > 0:
            raise ValueError("speed-ratio fit needs finite a and b > 0")

    def predict(self, relpos):
        relpos = np.asarray(relpos, float)
        return self.a + self.b * (1.0 - relpos) / relpos

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "se_a": _nan(self.se_a), "se_b": _nan(self.se_b)}

    @classmethod
    def from_dict(cls, d: dict) -> "SpeedRatioFit":
        g = lambda k: math.nan if d.get(k) is None else float(d[k])  # noqa: E731
        return cls(float(d["a"]), float(d["b"]), g("se_a"), g("se_b"))


@dataclass(frozen=True)
class ModelSet:
    """Every fitted model needed by the estimators, plus the training (p1, p2) hull."""

    pca: PcaModel
    position: PositionRegression
    diameter: DiameterRegression
    speed_ratio: SpeedRatioFit
    hull: np.ndarray | None = None  # (k, 2) convex hull vertices of training components
    meta: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "schema": "stressnav.modelset/1",
            "pca": self.pca.to_dict(),
            "position": self.position.to_dict(),
            "diameter": self.diameter.to_dict(),
            "speed_ratio": self.speed_ratio.to_dict(),
            "hull": None if self.hull is None else self.hull.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSet":
        return cls(
            PcaModel.from_dict(d["pca"]),
            PositionRegression.from_dict(d["position"]),
            DiameterRegression.from_dict(d["diameter"]),
            SpeedRatioFit.from_dict(d["speed_ratio"]),
            None if d.get("hull") is None else np.asarray(d["hull"], float),
            dict(d.get("meta", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ModelSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def reference_models() -> ModelSet:
    """Published coefficients: PCA weights, logistic position model, gamma diameter model, speed-ratio fit."""
    return ModelSet(
        pca=reference_pca(),
        position=PositionRegression(np.array([-0.51, 3.3, -4.6]), np.array([0.09, 0.3, 1.1])),
        diameter=DiameterRegression(
            np.array([1.66, 0.68, 4.05, 2.74, 11.0, -5.4]), np.array([0.01, 0.01, 0.06, 0.05, 0.4, 0.2])
        ),
        speed_ratio=SpeedRatioFit(3.1, 5.41, 0.2, 0.03),
        hull=None,
        meta={"source": "published reference coefficients"},
    )


def _nan(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def _nan_list(a):
    return [_nan(float(v)) for v in np.asarray(a, float)]


def _from_nan_list(a):
    return [math.nan if v is None else float(v) for v in a]
