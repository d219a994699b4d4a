"""Invariant sections of the complexified cocycle and the conjugation to rotations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BranchUnwrapFailure, DegenerateM, LeftHalfConvergence,
                     SmallDivisorOverflow, ValidationError)

TWO_PI = 2.0 * math.pi
DEFAULT_DELTAS = (1e-2, 1e-3, 1e-4)
DEFAULT_GRID = 1024
DEFAULT_K = 256
DEFAULT_K_SOLVE = 128
SMALL_DIVISOR = 1e-14
_STEP_CHUNK = 256


# ── types ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class UpperHalfPlanePoint:
    value: complex

    def __post_init__(self):
        if not self.value.imag > 0:
            raise ValidationError(f"{self.value} is not in the upper half plane")


@dataclass(frozen=True)
class FourierSeries:
    """Coefficients c_k for k = −K..K of Σ c_k e^{2πikx}."""

    coefficients: np.ndarray

    def __post_init__(self):
        if len(self.coefficients) % 2 != 1:
            raise ValidationError("need an odd number of coefficients")

    @property
    def K(self) -> int:
        return len(self.coefficients) // 2

    @property
    def ks(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1)

    def __getitem__(self, k: int) -> complex:
        if abs(k) > self.K:
            return 0j
        return complex(self.coefficients[k + self.K])

    def mean(self) -> complex:
        return self[0]

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.exp(2j * np.pi * np.outer(x, self.ks)) @ self.coefficients

    def is_real(self, tol: float = 1e-10) -> bool:
        c = self.coefficients
        return bool(np.max(np.abs(c - np.conj(c[::-1]))) <= tol)

    @classmethod
    def from_samples(cls, values: np.ndarray, K: int | None = None) -> "FourierSeries":
        """Coefficients of a trigonometric interpolant of equispaced samples on [0, 1)."""
        n = len(values)
        K = n // 2 - 1 if K is None else K
        if 2 * K + 1 > n:
            raise ValidationError(f"K={K} too large for {n} samples")
        c = np.fft.fft(values) / n
        return cls(np.concatenate([c[n - K:], c[:K + 1]]))

    @classmethod
    def from_dict(cls, coeffs: dict, K: int) -> "FourierSeries":
        arr = np.zeros(2 * K + 1, dtype=complex)
        for k, v in coeffs.items():
            arr[k + K] = v
        return cls(arr)


def rotation(angle) -> np.ndarray:
    """R_φ = [[cos 2πφ, −sin 2πφ], [sin 2πφ, cos 2πφ]], stacked over angles."""
    a = TWO_PI * np.asarray(angle, dtype=float)
    c, s = np.cos(a), np.sin(a)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


# ── m-function by Möbius contraction ────────────────────────────────

def in_domain_omega(lam: float, energy: complex, x: complex) -> bool:
    """Im E > 0 and 2λ sinh|2π Im x| < Im E."""
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    e_im = complex(energy).imag
    return e_im > 0 and 2.0 * lam * math.sinh(abs(TWO_PI * complex(x).imag)) < e_im


def _cos2pi(x):
    return np.cos(TWO_PI * np.asarray(x))


def _pullback(lam, alpha, energy, xs, n, lanes=None):
    """S(x−α)⋯S(x−nα)·i for an array of x (real or complex).

    With ``lanes`` = [(E_d, n_d), ...] the energies run side by side, lane d
    joining the sweep at depth n_d; the result then has a leading lane axis.
    """
    xs = np.asarray(xs)
    if lanes is None:
        lanes = [(energy, n)]
    order = sorted(range(len(lanes)), key=lambda d: -int(lanes[d][1]))
    depths = [int(lanes[d][1]) for d in order]
    n = depths[0]
    z = np.full((len(lanes),) + xs.shape, 1j, dtype=complex)
    energies = np.array([complex(lanes[d][0]) for d in order]).reshape((-1,) + (1,) * xs.ndim)
    real = not np.iscomplexobj(xs)
    if real:
        # cos 2π(x − jα) = cos 2πx·cos 2πjα + sin 2πx·sin 2πjα
        cx, sx = 2.0 * lam * np.cos(TWO_PI * xs), 2.0 * lam * np.sin(TWO_PI * xs)
    active = 0
    min_im = math.inf
    for top in range(n, 0, -_STEP_CHUNK):
        js = np.arange(top, max(top - _STEP_CHUNK, 0), -1)
        if real:
            b = TWO_PI * np.mod(js * alpha, 1.0)
            pot = np.multiply.outer(np.cos(b), cx) + np.multiply.outer(np.sin(b), sx)
        else:
            pot = 2.0 * lam * _cos2pi(np.subtract.outer(xs, js * alpha)).T
        shifted = energies[None] - pot[:, None]
        for i, j in enumerate(js):
            while active < len(depths) and depths[active] >= j:
                active += 1     # lane joins with z = i already in place
            np.subtract(shifted[i, :active], np.reciprocal(z[:active]), out=z[:active])
        im = float(np.min(z.imag)) if z.size else math.inf
        if not im > 0:
            raise LeftHalfConvergence(f"iterate left the upper half plane above depth {js[-1]}")
        min_im = min(min_im, im)
    z = z[np.argsort(order)]
    return (z[0] if len(lanes) == 1 else z), min_im


@dataclass(frozen=True)
class MIterate:
    value: np.ndarray                 # m^n(E, x)
    distances: tuple                  # (j, max |m^j − m^{j−1}|) at checkpoints
    invariance_residual: float        # max |S(x)·m^n(x) − m^n(x+α)|
    min_imag: float

    @property
    def eventually_decreasing(self) -> bool:
        d = [v for _, v in self.distances]
        return all(b <= a for a, b in zip(d[len(d) // 2:], d[len(d) // 2 + 1:]))


def m_iterate(lam: float, alpha: float, energy: complex, x, n: int) -> MIterate:
    """m^n(E, x) = S_{λ,E}(x−α)⋯S_{λ,E}(x−nα)·i with convergence diagnostics."""
    if n < 2:
        raise ValidationError("n must be >= 2")
    xs = np.atleast_1d(np.asarray(x))
    value, min_im = _pullback(lam, alpha, energy, xs, n)
    checkpoints = sorted({max(2, n >> t) for t in range(6)})
    distances = []
    for j in checkpoints:
        a, _ = _pullback(lam, alpha, energy, xs, j)
        b, _ = _pullback(lam, alpha, energy, xs, j - 1)
        distances.append((j, float(np.max(np.abs(a - b)))))
    shifted, _ = _pullback(lam, alpha, energy, xs + alpha, n)
    pushed = energy - 2.0 * lam * _cos2pi(xs) - 1.0 / value
    residual = float(np.max(np.abs(pushed - shifted)))
    return MIterate(value, tuple(distances), residual, min_im)


@dataclass(frozen=True)
class RealM:
    value: np.ndarray
    levels: tuple           # m at each δ
    instability: float      # gap between the two highest Richardson orders


def _richardson(levels, deltas):
    """Neville tableau in δ extrapolated to δ = 0; returns the last two diagonal entries."""
    table = [np.asarray(v) for v in levels]
    diag = [table[-1]]
    order = 1
    while len(table) > 1:
        table = [(deltas[i] * table[i + 1] - deltas[i + order] * table[i])
                 / (deltas[i] - deltas[i + order]) for i in range(len(table) - 1)]
        diag.append(table[-1])
        order += 1
    return diag[-1], diag[-2]


def m_real(lam: float, alpha: float, energy: float, xs, deltas=DEFAULT_DELTAS,
           steps_per_inverse_delta: float = 30.0) -> RealM:
    """m(E + i0, x) from the δ ↓ 0 sequence with polynomial extrapolation in δ."""
    xs = np.asarray(xs, dtype=float)
    lanes = [(energy + 1j * d, int(math.ceil(steps_per_inverse_delta / d))) for d in deltas]
    z, _ = _pullback(lam, alpha, None, xs, None, lanes)
    levels = tuple(z) if len(deltas) > 1 else (z,)
    if len(deltas) == 1:
        return RealM(levels[0], levels, math.nan)
    best, lower = _richardson(levels, list(deltas))
    return RealM(best, levels, float(np.max(np.abs(best - lower))))


# ── conjugation to rotations ────────────────────────────────────────

def conjugation_C(m) -> np.ndarray:
    """C with det 1 and C·m = i, stacked over an array of m."""
    m = np.asarray(m, dtype=complex)
    im = m.imag
    if np.any(im < 1e-14):
        raise DegenerateM("Im m below 1e-14")
    r = np.abs(m)
    s = np.sqrt(im)
    row0 = np.stack([m.real / (r * s), -r / s], -1)
    row1 = np.stack([s / r, np.zeros_like(s)], -1)
    return np.stack([row0, row1], -2)


def mobius(mat: np.ndarray, z):
    """Möbius action (az + b)/(cz + d)."""
    return (mat[..., 0, 0] * z + mat[..., 0, 1]) / (mat[..., 1, 0] * z + mat[..., 1, 1])


def _inverse_sl2(mat):
    inv = np.empty_like(mat)
    inv[..., 0, 0] = mat[..., 1, 1]
    inv[..., 1, 1] = mat[..., 0, 0]
    inv[..., 0, 1] = -mat[..., 0, 1]
    inv[..., 1, 0] = -mat[..., 1, 0]
    return inv


def _transfer(lam, energy, xs):
    c = energy - 2.0 * lam * _cos2pi(xs)
    out = np.zeros(np.shape(xs) + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -1.0
    out[..., 1, 0] = 1.0
    return out


@dataclass(frozen=True)
class PhiResult:
    series: FourierSeries
    samples: np.ndarray       # unwrapped φ on the grid
    residual: float           # sup ‖C(x+α)S(x)C(x)^{-1} − R_φ(x)‖
    m_grid: np.ndarray
    m_shifted: np.ndarray
    instability: float

    @property
    def theta(self) -> float:
        return float(self.series.mean().real)


def _unwrap(raw: np.ndarray, max_jump: float = 0.25):
    steps = np.diff(np.concatenate([raw, raw[:1]]))
    steps = steps - np.round(steps)
    steps = np.where(steps <= -0.5, steps + 1.0, steps)
    if np.max(np.abs(steps)) > max_jump:
        return None
    if abs(np.sum(steps)) > 0.5:
        raise BranchUnwrapFailure("rotation angle winds around the circle")
    out = raw[0] + np.concatenate([[0.0], np.cumsum(steps[:-1])])
    return out


def rotation_angle_phi(lam: float, alpha: float, energy: float, grid: int = DEFAULT_GRID,
                       K: int | None = None, deltas=DEFAULT_DELTAS) -> PhiResult:
    """φ(E, x) with C(x+α)S(x)C(x)^{-1} = R_φ(x) on a grid, as a Fourier series.

    The branch is continuous in x with mean in [0, 1).
    """
    if grid & (grid - 1) or grid < 8:
        raise ValidationError("grid size must be a power of two >= 8")
    for attempt in range(2):
        xs = np.arange(grid) / grid
        both = m_real(lam, alpha, energy, np.concatenate([xs, xs + alpha]), deltas)
        m_grid, m_shift = both.value[:grid], both.value[grid:]
        c_here = conjugation_C(m_grid)
        c_next = conjugation_C(m_shift)
        mat = c_next @ _transfer(lam, energy, xs) @ _inverse_sl2(c_here)
        raw = np.arctan2(mat[:, 1, 0], mat[:, 0, 0]) / TWO_PI
        phi = _unwrap(raw)
        if phi is not None:
            break
        grid *= 2
    else:
        raise BranchUnwrapFailure("angle jumps persist after grid refinement")
    shift = math.floor(float(np.mean(phi)))
    phi = phi - shift
    residual = float(np.max(np.abs(mat - rotation(phi))))
    k_max = min(DEFAULT_K if K is None else K, grid // 2 - 1)
    series = FourierSeries.from_samples(phi, k_max)
    return PhiResult(series, phi, residual, m_grid, m_shift, both.instability)


# ── cohomological equation ──────────────────────────────────────────

@dataclass(frozen=True)
class CohomologicalSolution:
    psi: FourierSeries
    residual: float
    dropped_modes: tuple = field(default_factory=tuple)


def small_divisors(alpha: float, ks) -> np.ndarray:
    """e^{2πikα} − 1 with kα reduced mod 1 before exponentiating."""
    frac = np.mod(np.asarray(ks, dtype=float) * alpha, 1.0)
    return np.exp(2j * np.pi * frac) - 1.0


def cohomological_solve(phi_hat: FourierSeries, alpha: float, K_solve: int = DEFAULT_K_SOLVE,
                        n_check: int = 1024) -> CohomologicalSolution:
    """ψ̂(k) = φ̂(k)/(e^{2πikα} − 1), ψ̂(0) = 0, for |k| ≤ K_solve.

    Modes with a divisor below 1e-14 are dropped and reported through
    SmallDivisorOverflow, which carries the solution without them.
    """
    if K_solve > phi_hat.K:
        raise ValidationError("K_solve exceeds the input truncation")
    ks = np.arange(-K_solve, K_solve + 1)
    coeffs = np.array([phi_hat[int(k)] for k in ks])
    div = small_divisors(alpha, ks)
    bad = (np.abs(div) < SMALL_DIVISOR) & (ks != 0)
    safe = np.where((ks == 0) | bad, 1.0, div)
    psi = np.where((ks == 0) | bad, 0.0, coeffs / safe)
    psi_series = FourierSeries(psi)
    xs = np.arange(n_check) / n_check
    lhs = psi_series.evaluate(xs + alpha) - psi_series.evaluate(xs)
    rhs = phi_hat.evaluate(xs) - phi_hat.mean()
    residual = float(np.max(np.abs(lhs - rhs)))
    dropped = tuple(int(k) for k in ks[bad & (coeffs != 0)])
    result = CohomologicalSolution(psi_series, residual, dropped)
    if dropped:
        raise SmallDivisorOverflow(dropped, result)
    return result


def decay_exponent_a(phi_hat: FourierSeries, alpha: float, k_min: int):
    """max over k_min ≤ |k| ≤ K of (1/|k|)·ln|φ̂(k)/(e^{2πikα} − 1)|, and the k attaining it."""
    if k_min < 1:
        raise ValidationError("k_min must be >= 1")
    if k_min > phi_hat.K:
        raise ValidationError("empty range: k_min exceeds K")
    ks = np.array([k for k in phi_hat.ks if abs(k) >= k_min])
    coeffs = np.array([phi_hat[int(k)] for k in ks])
    with np.errstate(divide="ignore"):
        vals = (np.log(np.abs(coeffs)) - np.log(np.abs(small_divisors(alpha, ks)))) / np.abs(ks)
    i = int(np.argmax(vals))
    return float(vals[i]), int(ks[i])


# ── reducibility ────────────────────────────────────────────────────

@dataclass(frozen=True)
class ReducibilityReport:
    energy: float
    theta: float
    residual: float
    dropped_modes: tuple
    a_truncated: float
    K: int

    def to_json(self) -> dict:
        return {"E": self.energy, "theta_E": self.theta, "residual": self.residual,
                "dropped_modes": list(self.dropped_modes),
                "a_truncated": self.a_truncated if math.isfinite(self.a_truncated) else None,
                "K": self.K}


def reducibility_probe(lam: float, alpha: float, energy: float, K: int = DEFAULT_K_SOLVE,
                       grid: int = DEFAULT_GRID, deltas=DEFAULT_DELTAS) -> ReducibilityReport:
    """Conjugate S to the constant rotation R_θ by B = R_{−ψ} C and measure the defect."""
    phi = rotation_angle_phi(lam, alpha, energy, grid, K=max(K, 1), deltas=deltas)
    k_solve = min(K, phi.series.K)
    sol = cohomological_solve(phi.series, alpha, k_solve)
    xs = np.arange(len(phi.samples)) / len(phi.samples)
    psi_here = sol.psi.evaluate(xs).real
    psi_next = sol.psi.evaluate(xs + alpha).real
    b_here = rotation(-psi_here) @ conjugation_C(phi.m_grid)
    b_next = rotation(-psi_next) @ conjugation_C(phi.m_shifted)
    mat = b_next @ _transfer(lam, energy, xs) @ _inverse_sl2(b_here)
    residual = float(np.max(np.abs(mat - rotation(phi.theta))))
    a_val = decay_exponent_a(phi.series, alpha, min(8, phi.series.K))[0]
    return ReducibilityReport(float(energy), phi.theta, residual, sol.dropped_modes, a_val, k_solve)
