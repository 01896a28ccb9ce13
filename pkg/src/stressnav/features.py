"""Low-frequency Fourier representation of stress readings and its principal components."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FitError, ModelCompatibilityError
from .sensors import StressReading

COMPONENTS = ("normal", "tangential")


@dataclass(frozen=True)
class FourierFeatures:
    """Fourier coefficients c_0..c_M of both traction components and their relative magnitudes.

    ``rel`` has shape (2, M): row 0 normal, row 1 tangential, column k-1 for mode k.
    ``C`` is zero only for a reading with no variation, in which case ``rel`` is all NaN.
    """

    coeffs: np.ndarray  # (2, M+1) complex
    n: int
    C: float
    rel: np.ndarray

    @property
    def M(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def vector(self) -> np.ndarray:
        """Relative magnitudes flattened as (normal k=1..M, tangential k=1..M)."""
        return self.rel.ravel()

    @property
    def degenerate(self) -> bool:
        return not self.C > 0


def fourier_coefficients(reading: StressReading, M: int = 6) -> FourierFeatures:
    """c_k = (1/n) sum_j f_j exp(2 pi i j k / n) for k = 0..M, evaluated directly in O(M n)."""
    n = reading.n
    if not 0 < M < n / 2:
        raise ValueError(f"mode cutoff M={M} must satisfy 0 < M < n/2 = {n / 2}")
    k = np.arange(M + 1)
    basis = np.exp(2j * np.pi * np.outer(k, np.arange(n)) / n)
    f = np.vstack([reading.normal, reading.tangential])
    coeffs = f @ basis.T / n
    mags = np.abs(coeffs[:, 1:])
    C = float(np.sqrt((mags**2).sum()))
    scale = max(np.abs(f).max(), 1e-300)
    if C <= 1e-14 * scale or C == 0.0:
        rel = np.full_like(mags, np.nan)
        C = 0.0
    else:
        rel = mags / C
    return FourierFeatures(coeffs, n, C, rel)


def require_signal(features: FourierFeatures) -> None:
    if features.degenerate:
        raise DegenerateInputError("reading has no angular variation (C = 0)")


def interpolate_stress(features: FourierFeatures, theta):
    """Band-limited interpolation Re(c_0 + 2 sum_k c_k e^{-i k theta}) of both components."""
    theta = np.asarray(theta, float)
    k = np.arange(1, features.M + 1)
    ph = np.exp(-1j * np.multiply.outer(theta, k))
    c = features.coeffs
    fn = (c[0, 0] + 2 * ph @ c[0, 1:]).real
    ft = (c[1, 0] + 2 * ph @ c[1, 1:]).real
    return fn, ft


def interpolate_derivative(features: FourierFeatures, theta, component: int = 0):
    """d/dtheta of the interpolant of one component (0 normal, 1 tangential)."""
    theta = np.asarray(theta, float)
    k = np.arange(1, features.M + 1)
    ph = np.exp(-1j * np.multiply.outer(theta, k))
    return (2 * ph @ (-1j * k * features.coeffs[component, 1:])).real


@dataclass(frozen=True)
class PcaModel:
    """Principal-component weights over relative magnitudes.

    ``weights`` has shape (H, 2M) with columns ordered like ``FourierFeatures.vector``.
    """

    means: np.ndarray
    weights: np.ndarray
    explained: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def M(self) -> int:
        return self.weights.shape[1] // 2

    @property
    def H(self) -> int:
        return self.weights.shape[0]

    def transform(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(vectors)
        if vectors.shape[1] != self.weights.shape[1]:
            raise ModelCompatibilityError(
                f"feature length {vectors.shape[1]} does not match model length {self.weights.shape[1]}"
            )
        return (vectors - self.means) @ self.weights.T

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "weights": self.weights.tolist(),
            "explained": self.explained.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PcaModel":
        return cls(
            np.asarray(data["means"], float),
            np.asarray(data["weights"], float),
            np.asarray(data["explained"], float),
            dict(data.get("meta", {})),
        )


def principal_components(features: FourierFeatures, model: PcaModel) -> np.ndarray:
    """p_h = sum_{k,s} a_{h,k,s} (m_{k,s} - mean_{k,s}) for h = 1..H."""
    if features.M != model.M:
        raise ModelCompatibilityError(f"features use M={features.M}, model was fitted with M={model.M}")
    require_signal(features)
    return model.transform(features.vector)[0]


def fit_pca(vectors, H: int = 2, meta: dict | None = None) -> PcaModel:
    """Covariance eigen-decomposition; components sorted by variance, largest-|weight| entry positive."""
    X = np.asarray(vectors, float)
    if X.ndim != 2 or X.shape[0] < H + 1:
        raise FitError(f"need at least {H + 1} samples to fit {H} components")
    if not np.isfinite(X).all():
        raise FitError("feature matrix contains non-finite values")
    # sort rows so the fit does not depend on sample order (sums are not associative)
    X = X[np.lexsort(X.T[::-1])]
    means = X.mean(axis=0)
    Xc = X - means
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    total = vals.sum()
    if not total > 0 or vals[H - 1] <= 1e-12 * total:
        raise FitError(f"covariance has rank below the {H} requested components")
    W = vecs[:, :H].T.copy()
    for h in range(H):
        if W[h, np.argmax(np.abs(W[h]))] < 0:
            W[h] = -W[h]
    info = {"n_samples": int(X.shape[0]), "explained_total": float(vals[:H].sum() / total)}
    info.update(meta or {})
    return PcaModel(means, W, vals[:H] / total, info)


def reference_pca() -> PcaModel:
    """Published two-component weights for M = 6 (training means were not published; zeros are used)."""
    w = np.array(
        [
            [-0.419, 0.508, -0.268, 0.060, 0.027, 0.010, -0.419, 0.473, -0.298, 0.047, 0.018, 0.006],
            [0.451, 0.184, -0.266, -0.352, -0.181, -0.080, 0.451, 0.479, -0.097, -0.258, -0.132, -0.052],
        ]
    )
    return PcaModel(np.zeros(12), w, np.array([np.nan, np.nan]), {"source": "published reference weights"})


def feature_csv_header(n: int, M: int, H: int = 2) -> list[str]:
    cols = ["id", "n", "M"]
    for s in COMPONENTS:
        for k in range(M + 1):
            cols += [f"abs_c{k}_{s}", f"arg_c{k}_{s}"]
    cols += [f"m{k}_{s}" for s in COMPONENTS for k in range(1, M + 1)]
    cols += [f"p{h}" for h in range(1, H + 1)]
    return cols


def feature_csv_row(sample_id, features: FourierFeatures, pcs) -> list:
    row = [sample_id, features.n, features.M]
    for s in range(2):
        for c in features.coeffs[s]:
            row += [abs(c), float(np.angle(c))]
    row += list(features.vector)
    row += list(pcs)
    return row


def save_pca(model: PcaModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2))


def load_pca(path) -> PcaModel:
    return PcaModel.from_dict(json.loads(Path(path).read_text()))
