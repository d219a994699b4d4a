"""Aubry duality: eigenvectors as dual cocycle sections, and the spectral scaling identity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .arithmetic import torus_norm
from .errors import InsufficientDecay, NoDecayDetected, ValidationError
from .localization import EigenPair, decay_rate
from .mfunction import FourierSeries
from .rational_spectrum import EDGE_TOL, band_edges, hausdorff_distance

TWO_PI = 2.0 * math.pi
TAIL_TOL = 1e-8
DEFAULT_K = 400
DEGENERATE_C = 1e-8


# ── dual pair ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class DualPair:
    """Eigenvector u_n (absolute site n) with U(x) = Σ u_n e^{2πinx}.

    W(x) = (e^{2πiθ}U(x), U(x−α)) satisfies
    S_{1/λ, E/λ}(x)·W(x) = e^{2πiθ}·W(x+α) when Hu = Eu.
    """

    u: np.ndarray          # retained values, unit ℓ² norm over the full input
    first_site: int
    theta: float
    energy: float
    lam: float
    alpha: float
    tail_mass: float       # ℓ² mass outside the retained support

    @property
    def sites(self) -> np.ndarray:
        return self.first_site + np.arange(len(self.u))

    @property
    def U_series(self) -> FourierSeries:
        K = int(max(abs(self.sites[0]), abs(self.sites[-1])))
        coeffs = np.zeros(2 * K + 1, dtype=complex)
        coeffs[self.sites + K] = self.u
        return FourierSeries(coeffs)

    def U(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.exp(2j * np.pi * np.outer(x, self.sites)) @ self.u

    def W(self, x) -> np.ndarray:
        """Shape (len(x), 2)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack([np.exp(2j * np.pi * self.theta) * self.U(x), self.U(x - self.alpha)], -1)


def _unit_values(u, first_site):
    if isinstance(u, EigenPair):
        log_abs = u.log_abs - np.max(u.log_abs)
        vals = u.signs * np.exp(log_abs)
        first_site = u.x1
    else:
        vals = np.asarray(u, dtype=float)
    norm = float(np.linalg.norm(vals))
    if norm == 0 or not math.isfinite(norm):
        raise ValidationError("eigenvector must be nonzero and finite")
    return vals / norm, int(first_site)


def build_dual(u, theta: float, lam: float, alpha: float, energy: float,
               K: int = DEFAULT_K, first_site: int = 0) -> DualPair:
    """Retain u on center ± K and package it as a dual section.

    ``u`` is an EigenPair (its decay is certified to be at least ½·ln λ) or a
    plain array whose first entry sits at ``first_site``.
    """
    if not lam > 1:
        raise ValidationError("duality transform needs lambda > 1")
    if isinstance(u, EigenPair):
        try:
            fit = decay_rate(u)
        except NoDecayDetected as exc:
            raise InsufficientDecay(f"no exponential decay: {exc}") from exc
        if fit.slope > -0.5 * math.log(lam):
            raise InsufficientDecay(f"decay slope {fit.slope:.4g} above -ln(lambda)/2")
    vals, first = _unit_values(u, first_site)
    center = int(np.argmax(np.abs(vals)))
    lo, hi = max(0, center - K), min(len(vals), center + K + 1)
    kept = vals[lo:hi]
    tail = float(max(0.0, 1.0 - np.sum(kept ** 2)))
    if tail > TAIL_TOL:
        raise InsufficientDecay(f"tail mass {tail:.3g} outside center +- {K}")
    return DualPair(kept.copy(), first + lo, float(theta), float(energy), float(lam),
                    float(alpha), tail)


# ── checks ──────────────────────────────────────────────────────────

def _grid(n):
    return np.arange(n) / n


def duality_residual(pair: DualPair, grid_size: int = 1024) -> float:
    """sup_x ‖S_{1/λ,E/λ}(x)W(x) − e^{2πiθ}W(x+α)‖ / sup_x ‖W(x)‖ (max-norm on C²)."""
    x = _grid(grid_size)
    w = pair.W(x)
    w_next = pair.W(x + pair.alpha)
    diag = pair.energy / pair.lam - (2.0 / pair.lam) * np.cos(TWO_PI * x)
    image = np.stack([diag * w[:, 0] - w[:, 1], w[:, 0]], -1)
    defect = image - np.exp(2j * np.pi * pair.theta) * w_next
    return float(np.max(np.abs(defect)) / np.max(np.abs(w)))


@dataclass(frozen=True)
class DetReport:
    c: float                 # median Im det M
    variation: float         # max |Im det M − c|
    max_real: float          # sup |Re det M|
    sign: int                # sign of c
    degenerate: bool         # |c| negligible against sup|W|²
    fit_k: int               # 2θ ≈ kα + l
    fit_l: int
    fit_distance: float


def degenerate_fit(theta: float, alpha: float, k_max: int = 200):
    """(k, l, distance) minimizing ‖2θ − kα‖ over |k| ≤ k_max, with l the nearest integer."""
    ks = np.arange(-k_max, k_max + 1)
    vals = 2.0 * theta - ks * alpha
    dist = torus_norm(vals)
    order = np.lexsort((np.abs(ks), dist))
    i = int(order[0])
    return int(ks[i]), int(np.round(vals[i])), float(dist[i])


def det_M_constancy(pair: DualPair, grid_size: int = 1024) -> DetReport:
    """det [W, conj W] on a grid: constant and purely imaginary, equal to c·i."""
    w = pair.W(_grid(grid_size))
    det = w[:, 0] * np.conj(w[:, 1]) - np.conj(w[:, 0]) * w[:, 1]
    c = float(np.median(det.imag))
    variation = float(np.max(np.abs(det.imag - c)))
    scale = float(np.max(np.sum(np.abs(w) ** 2, axis=1)))
    k, l, dist = degenerate_fit(pair.theta, pair.alpha)
    return DetReport(c, variation, float(np.max(np.abs(det.real))), int(np.sign(c)),
                     abs(c) <= DEGENERATE_C * scale, k, l, dist)


def duality_report(pair: DualPair, grid_size: int = 1024) -> dict:
    det = det_M_constancy(pair, grid_size)
    return {"lambda": pair.lam, "E": pair.energy, "theta": pair.theta,
            "residual": duality_residual(pair, grid_size), "c": det.c,
            "variation": det.variation, "sign": det.sign, "degenerate_flag": det.degenerate}


# ── spectra ─────────────────────────────────────────────────────────

def spectra_duality_check(lam: float, p: int, q: int, tol: float = EDGE_TOL) -> float:
    """Hausdorff distance between Σ_{λ,p/q} and λ·Σ_{1/λ,p/q}, each computed independently."""
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    direct = band_edges(lam, p, q, tol).edges
    dual = band_edges(1.0 / lam, p, q, tol).edges * lam
    return hausdorff_distance(direct, dual)
