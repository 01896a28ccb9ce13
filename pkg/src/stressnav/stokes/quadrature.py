"""Quadrature rules for the 2D Stokes single-layer potential.

Closed curves (the robot) use the periodic trapezoidal rule with Kress'
product integration for the logarithmic self-interaction.  Walls are
discretised into straight Gauss-Legendre panels; targets close to a panel
get product-integration weights built from exact complex moments
(Helsing-Ojala style monomial recursions) so the log and ``r r / |r|^2``
kernels are integrated exactly against the panel interpolant.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg as sla

# Bernstein-ellipse parameter below which plain Gauss-Legendre is not trusted.
NEAR_RHO = 3.0


@lru_cache(maxsize=8)
def gauss_legendre(p: int):
    t, w = np.polynomial.legendre.leggauss(p)
    vand_t = np.vander(t, p, increasing=True).T  # rows: powers, cols: nodes
    lu = sla.lu_factor(vand_t)
    return t, w, lu


@lru_cache(maxsize=16)
def kress_weights(n_nodes: int) -> np.ndarray:
    """Weights R_k with  int_0^{2pi} log(4 sin^2((t_i-s)/2)) f(s) ds ~ sum_k R_{(i-k) mod N} f(s_k).

    ``n_nodes`` must be even.
    """
    if n_nodes % 2:
        raise ValueError("Kress quadrature needs an even node count")
    n = n_nodes // 2
    tau = np.pi * np.arange(n_nodes) / n
    m = np.arange(1, n)
    r = -(2 * np.pi / n) * (np.cos(np.outer(tau, m)) / m).sum(axis=1)
    r -= (np.pi / n**2) * np.cos(n * tau)
    return r


def kress_matrix(n_nodes: int) -> np.ndarray:
    r = kress_weights(n_nodes)
    idx = (np.arange(n_nodes)[:, None] - np.arange(n_nodes)[None, :]) % n_nodes
    return r[idx]


def bernstein_rho(z: np.ndarray) -> np.ndarray:
    a = 0.5 * (np.abs(z - 1.0) + np.abs(z + 1.0))
    return a + np.sqrt(np.maximum(a * a - 1.0, 0.0))


def _cauchy_moments(w: np.ndarray, kmax: int) -> np.ndarray:
    """C_k(w) = int_{-1}^{1} t^k / (t - w) dt for k = 0..kmax (shape (len(w), kmax+1))."""
    out = np.empty((w.size, kmax + 1), dtype=complex)
    out[:, 0] = np.log(1.0 - w) - np.log(-1.0 - w)
    for k in range(1, kmax + 1):
        out[:, k] = w * out[:, k - 1] + (1.0 - (-1.0) ** k) / k
    return out


def near_panel_weights(z: np.ndarray, p: int):
    """Product-integration weights on the reference panel [-1, 1].

    For targets at local complex coordinates ``z`` returns

    * ``wlog``  (real)    : int log|z - t| f(t) dt
    * ``wrr``   (complex) : int (z - t)/(conj(z) - t) f(t) dt
    * ``wcau``  (complex) : int f(t) / (t - z) dt

    each as an array of shape (len(z), p) acting on samples of f at the
    Gauss-Legendre nodes.
    """
    z = np.asarray(z, dtype=complex).ravel()
    t, _, lu = gauss_legendre(p)
    k = np.arange(p)
    m0 = (1.0 - (-1.0) ** (k + 1)) / (k + 1)

    cz = _cauchy_moments(z, p)
    log_m = np.log(np.abs(z - 1.0))[:, None]
    log_p = np.log(np.abs(z + 1.0))[:, None]
    mom_log = (log_m - (-1.0) ** (k + 1) * log_p - cz[:, 1:].real) / (k + 1)

    czb = _cauchy_moments(np.conj(z), p - 1)
    mom_rr = m0[None, :] - (z - np.conj(z))[:, None] * czb

    wlog = sla.lu_solve(lu, mom_log.T).T
    wrr = sla.lu_solve(lu, mom_rr.real.T).T + 1j * sla.lu_solve(lu, mom_rr.imag.T).T
    mc = cz[:, :p]
    wcau = sla.lu_solve(lu, mc.real.T).T + 1j * sla.lu_solve(lu, mc.imag.T).T
    return wlog, wrr, wcau
