"""Transfer matrices, long products, Lyapunov exponents, rotation numbers and P_k determinants."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import SingularNode, ValidationError

TWO_PI = 2.0 * math.pi
GOLDEN_FLOAT = (math.sqrt(5.0) - 1.0) / 2.0
_CHUNK = 1 << 16
_VANISHING_LOG = 28.0  # a node with |P_k| below e^-28 times the grid peak counts as a zero


@dataclass(frozen=True)
class OperatorParams:
    """Coupling, frequency, phase and energy of the operator.

    ``lam = 0`` is accepted so the free Laplacian can serve as a reference case.
    """

    lam: float
    alpha: float
    theta: float = 0.0
    energy: complex | float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.lam) or not math.isfinite(self.alpha):
            raise ValidationError("lambda and alpha must be finite")

    def with_energy(self, energy) -> "OperatorParams":
        return replace(self, energy=energy)

    def with_theta(self, theta) -> "OperatorParams":
        return replace(self, theta=theta)


def potential(lam: float, alpha: float, x):
    """2λ cos 2π x evaluated on the given torus points."""
    return 2.0 * lam * np.cos(TWO_PI * np.asarray(x, dtype=float))


def orbit(x0, alpha: float, start: int, count: int):
    """Points x0 + kα mod 1 for k = start .. start+count-1, shape (..., count)."""
    k = np.arange(start, start + count, dtype=np.float64)
    return np.mod(np.asarray(x0, dtype=float)[..., None] + k * alpha, 1.0)


# ── SL(2,R) products kept in Iwasawa form ───────────────────────────
#
# A = Q(cs, sn) · [[e^l, e^l w], [0, e^-l]] with Q a rotation. The determinant
# is 1 by construction, and l carries the growth, so nothing overflows and the
# tiny singular value is never obtained by cancellation.

def _factor(c):
    """Iwasawa data of [[c, -1], [1, 0]] for an array of c values."""
    r = np.hypot(c, 1.0)
    return c / r, 1.0 / r, np.log(r), -c / (r * r)


def _compose(x, y):
    """Iwasawa data of X·Y (X applied after Y)."""
    cx, sx, lx, wx = x
    cy, sy, ly, wy = y
    with np.errstate(over="ignore", under="ignore"):
        e2 = np.exp(-2.0 * lx)
        u = cy + wx * sy
        v = e2 * sy
        rho = np.hypot(u, v)
        qc, qs = u / rho, v / rho
        wp = (u * (wx * cy - sy) + v * e2 * cy) / (rho * rho)
        ell = lx + np.log(rho) + ly
        w = wy + wp * np.exp(-2.0 * ly)
    cs = cx * qc - sx * qs
    sn = sx * qc + cx * qs
    norm = np.hypot(cs, sn)
    return cs / norm, sn / norm, ell, w


def _tree(parts):
    """Ordered product of factors along the last axis (later factors on the left)."""
    cs, sn, ell, w = parts
    while cs.shape[-1] > 1:
        n = cs.shape[-1]
        m = n - (n % 2)
        even = tuple(a[..., 0:m:2] for a in (cs, sn, ell, w))
        odd = tuple(a[..., 1:m:2] for a in (cs, sn, ell, w))
        merged = _compose(odd, even)
        if n % 2:
            merged = tuple(np.concatenate([a, b[..., -1:]], axis=-1)
                           for a, b in zip(merged, (cs, sn, ell, w)))
        cs, sn, ell, w = merged
    return cs[..., 0], sn[..., 0], ell[..., 0], w[..., 0]


def _product(lam, alpha, energy, x0, n):
    """Iwasawa data of A_n(x0) for arrays of energies/phases (broadcast together)."""
    energy = np.asarray(energy, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    shape = np.broadcast(energy, x0).shape
    energy = np.broadcast_to(energy, shape)
    x0 = np.broadcast_to(x0, shape)
    acc = None
    for start in range(0, n, _CHUNK):
        count = min(_CHUNK, n - start)
        c = energy[..., None] - potential(lam, alpha, orbit(x0, alpha, start, count))
        part = _tree(_factor(c))
        acc = part if acc is None else _compose(part, acc)
    return acc


def _log_opnorm(ell, w):
    d = np.exp(-2.0 * ell)
    f2 = 1.0 + w * w + d * d
    smax2 = 0.5 * (f2 + np.sqrt(np.maximum((f2 - 2 * d) * (f2 + 2 * d), 0.0)))
    return ell + 0.5 * np.log(smax2)


@dataclass(frozen=True)
class ScaledMat2:
    """A real 2×2 matrix of determinant one stored as rotation · upper-triangular.

    ``unit_part`` and ``log_scale`` give the view
    ``matrix = exp(log_scale) · unit_part`` with max |entry| of the unit part
    equal to 1.
    """

    cos: float
    sin: float
    log_r: float
    shear: float

    @classmethod
    def from_matrix(cls, m) -> "ScaledMat2":
        m = np.asarray(m, dtype=float)
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if not abs(det - 1.0) <= 1e-9:
            raise ValidationError(f"matrix is not in SL(2,R): det={det}")
        r = math.hypot(m[0, 0], m[1, 0])
        c, s = m[0, 0] / r, m[1, 0] / r
        r12 = c * m[0, 1] + s * m[1, 1]
        return cls(c, s, math.log(r), r12 / r)

    def __matmul__(self, other: "ScaledMat2") -> "ScaledMat2":
        out = _compose(self._parts(), other._parts())
        return ScaledMat2(*(float(v) for v in out))

    def _parts(self):
        return tuple(np.float64(v) for v in (self.cos, self.sin, self.log_r, self.shear))

    def _raw_unit(self):
        q = np.array([[self.cos, -self.sin], [self.sin, self.cos]])
        return q @ np.array([[1.0, self.shear], [0.0, math.exp(-2.0 * self.log_r)]])

    @property
    def unit_part(self) -> np.ndarray:
        u = self._raw_unit()
        return u / np.max(np.abs(u))

    @property
    def log_scale(self) -> float:
        return self.log_r + math.log(np.max(np.abs(self._raw_unit())))

    def matrix(self) -> np.ndarray:
        return math.exp(self.log_r) * self._raw_unit()

    def det(self) -> float:
        """Determinant from the factored form: det Q times e^l·e^-l."""
        return (self.cos ** 2 + self.sin ** 2) * math.exp(self.log_r - self.log_r)

    def log_norm(self) -> float:
        return float(_log_opnorm(np.float64(self.log_r), np.float64(self.shear)))

    def trace(self) -> float:
        return float(np.trace(self.matrix()))


def transfer_matrix(params: OperatorParams, x: float) -> ScaledMat2:
    """S(x) = [[E − 2λcos2πx, −1], [1, 0]]."""
    c = float(np.real(params.energy)) - float(potential(params.lam, params.alpha, x))
    return ScaledMat2(*(float(v) for v in _factor(np.float64(c))))


def transfer_product(params: OperatorParams, x0: float, n: int) -> ScaledMat2:
    """A_n(x0) = S(x0+(n−1)α) ⋯ S(x0)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    parts = _product(params.lam, params.alpha, float(np.real(params.energy)), x0, n)
    return ScaledMat2(*(float(v) for v in parts))


def log_norm_products(lam, alpha, energies, phases, n):
    """(1/n)·ln‖A_n(x)‖ on the grid energies × phases, shape (len(E), len(x))."""
    e = np.asarray(energies, dtype=float)[:, None]
    x = np.asarray(phases, dtype=float)[None, :]
    _, _, ell, w = _product(lam, alpha, e, x, n)
    return _log_opnorm(ell, w) / n


# ── Lyapunov exponent ───────────────────────────────────────────────

@dataclass(frozen=True)
class LyapunovEstimate:
    value: float
    n_steps: int
    n_phases: int
    spread: float


def kronecker_phases(n_phases: int, seed: int = 0) -> np.ndarray:
    """Low-discrepancy phases frac(offset + j·g) with a seed-dependent offset."""
    offset = math.fmod(seed * math.sqrt(2.0), 1.0)
    return np.mod(offset + np.arange(n_phases) * GOLDEN_FLOAT, 1.0)


def lyapunov_sweep(lam, alpha, energies, n_steps=100_000, n_phases=8, seed=0):
    """Lyapunov estimates for many energies at once."""
    if n_steps < 1000:
        raise ValidationError("n_steps must be >= 1000")
    phases = kronecker_phases(n_phases, seed)
    vals = log_norm_products(lam, alpha, energies, phases, n_steps)
    return [LyapunovEstimate(float(v.mean()), n_steps, n_phases, float(v.max() - v.min()))
            for v in vals]


def lyapunov_exponent(params: OperatorParams, n_steps=100_000, n_phases=8, seed=0) -> LyapunovEstimate:
    """Phase-averaged (1/n)·ln‖A_n‖ with a low-discrepancy phase sample."""
    return lyapunov_sweep(params.lam, params.alpha, [float(np.real(params.energy))],
                          n_steps, n_phases, seed)[0]


def free_lyapunov(energy: float) -> float:
    """Closed form for λ = 0: ln of the larger eigenvalue modulus of [[E,−1],[1,0]]."""
    e = abs(energy)
    return math.log((e + math.sqrt(e * e - 4.0)) / 2.0) if e > 2 else 0.0


# ── rotation number ─────────────────────────────────────────────────

@dataclass(frozen=True)
class RotationReport:
    rho: float
    ids: float
    n_steps: int

    @classmethod
    def from_rho(cls, rho, n_steps):
        return cls(float(rho), 1.0 - 2.0 * float(rho), n_steps)


def fold_rho(raw):
    """Map a lifted rotation number into [0, 1/2]."""
    m = np.mod(raw, 1.0)
    return np.minimum(m, 1.0 - m)


def detect_period(alpha: float, max_q: int = 2000, tol: float = 1e-12):
    """q if α is within tol of some p/q with q <= max_q, else None."""
    f = Fraction(alpha).limit_denominator(max_q)
    return f.denominator if abs(float(f) - alpha) <= tol else None


def lift_average(entries, x0s, alpha, n_steps, burn_in=0, period=None):
    """Birkhoff average of the projective lift increment.

    ``entries(x)`` returns the four matrix entries (a, b, c, d) on an array of
    torus points (broadcastable against the batch shape of ``x0s``). Each step
    the increment is the angle from v to A(x)v taken in (−1/2, 1/2].
    Averaging starts after ``burn_in`` steps and, when ``period`` is given,
    runs over a whole number of periods.
    """
    x0s = np.asarray(x0s, dtype=float)
    n_avg = n_steps - burn_in
    if period:
        n_avg = max(period, (n_avg // period) * period)
    total = burn_in + n_avg
    u = np.ones(x0s.shape)
    v = np.zeros(x0s.shape)
    acc = np.zeros(x0s.shape)
    for start in range(0, total, 4096):
        count = min(4096, total - start)
        xs = np.mod(x0s[..., None] + np.arange(start, start + count) * alpha, 1.0)
        a, b, c, d = entries(xs)
        a, b, c, d = (np.broadcast_to(t, xs.shape) for t in (a, b, c, d))
        for j in range(count):
            nu = a[..., j] * u + b[..., j] * v
            nv = c[..., j] * u + d[..., j] * v
            if start + j >= burn_in:
                acc += np.arctan2(u * nv - v * nu, u * nu + v * nv)
            r = np.hypot(nu, nv)
            u, v = nu / r, nv / r
    return acc / (TWO_PI * n_avg)


def schrodinger_lift_average(lam, alpha, energies, x0s, n_steps, burn_in=0, period=None):
    """Birkhoff average of the exact projective lift for S = [[c, −1], [1, 0]].

    The vector is kept with u >= 0 (angle ϑ in [−π/2, π/2]); its image
    (cu − v, u) then has a nonnegative second coordinate, so the image angle Φ
    lies in [0, π] and Φ − ϑ is the increment continuous in c (π/2 at c = 0).
    Returns ρ in [0, 1/2] without any folding. ``energies`` and ``x0s`` broadcast.
    """
    energies = np.asarray(energies, dtype=float)
    x0s = np.asarray(x0s, dtype=float)
    shape = np.broadcast_shapes(energies.shape, x0s.shape)
    n_avg = n_steps - burn_in
    if period:
        n_avg = max(period, (n_avg // period) * period)
    total = burn_in + n_avg
    u = np.ones(shape)
    v = np.zeros(shape)
    acc = np.zeros(shape)
    for start in range(0, total, 4096):
        count = min(4096, total - start)
        xs = np.mod(x0s[..., None] + np.arange(start, start + count) * alpha, 1.0)
        cs = np.broadcast_to(energies[..., None] - potential(lam, 0.0, xs), shape + (count,))
        for j in range(count):
            nu = cs[..., j] * u - v
            nv = u
            if start + j >= burn_in:
                acc += np.arctan2(nv, nu) - np.arctan2(v, u)
            flip = np.where(nu < 0, -1.0, 1.0)
            r = np.hypot(nu, nv) * flip
            u, v = nu / r, nv / r
    return acc / (TWO_PI * n_avg)


def rotation_sweep(lam, alpha, energies, n_steps=100_000, n_phases=16, seed=0,
                   burn_in=None, period="auto"):
    """Rotation reports for many real energies, phases batched together."""
    if n_steps < 1000:
        raise ValidationError("n_steps must be >= 1000")
    energies = np.asarray(energies, dtype=float)
    bound = 2.0 + 2.0 * abs(lam)
    if period == "auto":
        period = detect_period(alpha)
    burn_in = n_steps // 10 if burn_in is None else burn_in
    phases = kronecker_phases(n_phases, seed)
    inside = np.abs(energies) <= bound
    raw = np.zeros(len(energies))
    if inside.any():
        e = energies[inside][:, None, None]
        x = np.broadcast_to(phases[None, :], (int(inside.sum()), n_phases))
        raw[inside] = schrodinger_lift_average(lam, alpha, e[..., 0], x, n_steps, burn_in,
                                               period).mean(axis=1)
    out = []
    for E, r, ins in zip(energies, raw, inside):
        if ins:
            out.append(RotationReport.from_rho(min(0.5, max(0.0, r)), n_steps))
        else:
            out.append(RotationReport.from_rho(0.5 if E < 0 else 0.0, n_steps))
    return out


def fibered_rotation_number(params: OperatorParams, n_steps=100_000, n_phases=16,
                            seed=0, burn_in=None) -> RotationReport:
    """Rotation number ρ ∈ [0, 1/2] and ids = 1 − 2ρ at a real energy."""
    if np.iscomplexobj(params.energy) and np.imag(params.energy) != 0:
        raise ValidationError("rotation number needs a real energy")
    return rotation_sweep(params.lam, params.alpha, [float(np.real(params.energy))],
                          n_steps, n_phases, seed, burn_in)[0]


def rotation_number_of(entries, alpha, n_steps=10_000, x0=0.0):
    """Folded rotation number of a general cocycle given by its entry function."""
    raw = lift_average(entries, np.array([x0]), alpha, n_steps)
    return float(fold_rho(raw[0]))


# ── determinants P_k ────────────────────────────────────────────────

def determinant_P(params: OperatorParams, k: int, log_scaled: bool = False):
    """P_k(θ) from P_j = (E − 2λcos2π(θ+(j−1)α))·P_{j−1} − P_{j−2}.

    This is det(E − H) on [0, k−1], matching the upper-left entry of A_k(θ).
    With ``log_scaled`` returns (sign, ln|P_k|).
    """
    if k < 0:
        raise ValidationError("k must be >= 0")
    sign, logabs = log_det_P(params.lam, params.alpha, np.array([params.theta]),
                             params.energy, k)
    if log_scaled:
        return float(sign[0]), float(logabs[0])
    return float(sign[0] * math.exp(logabs[0])) if logabs[0] > -np.inf else 0.0


def log_det_P(lam, alpha, thetas, energy, k, record=None):
    """Vectorized (sign, ln|P_k(θ)|) over an array of phases.

    ``record`` optionally lists step counts j whose (sign, ln|P_j|) should
    also be returned, as arrays of shape (len(record), len(thetas)).
    """
    thetas = np.asarray(thetas, dtype=float)
    e = float(np.real(energy))
    p_prev = np.zeros_like(thetas)   # P_{j-1}
    p_cur = np.ones_like(thetas)     # P_j, both divided by exp(scale)
    scale = np.zeros_like(thetas)
    rec = {} if record is None else {int(j): None for j in record}
    if 0 in rec:
        rec[0] = (np.ones_like(thetas), np.zeros_like(thetas))
    for j in range(1, k + 1):
        diag = e - potential(lam, alpha, thetas + (j - 1) * alpha)
        p_cur, p_prev = diag * p_cur - p_prev, p_cur
        big = np.maximum(np.abs(p_cur), np.abs(p_prev))
        big = np.where(big > 0, big, 1.0)
        scale = scale + np.log(big)
        p_cur, p_prev = p_cur / big, p_prev / big
        if j in rec:
            with np.errstate(divide="ignore"):
                rec[j] = (np.sign(p_cur), np.log(np.abs(p_cur)) + scale)
    with np.errstate(divide="ignore"):
        out = (np.sign(p_cur), np.log(np.abs(p_cur)) + scale)
    if record is None:
        return out
    return out, [rec[int(j)] for j in record]


# ── Herman's bound ──────────────────────────────────────────────────

@dataclass(frozen=True)
class HermanReport:
    integral_estimate: float
    bound: float
    passed: bool
    n_nodes: int
    refinement_delta: float
    jittered: bool


def herman_bound_check(params: OperatorParams, k: int, n_quad: int | None = None,
                       tol: float | None = None) -> HermanReport:
    """Trapezoid estimate of ∫ ln|P_k(θ)| dθ against k·ln|λ|.

    The rule is applied at N and 2N nodes; the finer value is reported and the
    difference is kept as a refinement diagnostic. A node where P_k vanishes
    (relative to the grid peak) shifts the whole grid by a fixed irrational
    fraction of the spacing.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    n = max(n_quad or 0, 64 * k, 256)
    tol = 0.05 * k if tol is None else tol
    bound = k * math.log(abs(params.lam)) if params.lam != 0 else -math.inf
    jittered = False

    def trapezoid(m, shift):
        nonlocal jittered
        th = (np.arange(m) + shift) / m
        _, logabs = log_det_P(params.lam, params.alpha, th, params.energy, k)
        if not np.all(logabs > np.max(logabs) - _VANISHING_LOG):
            jittered = True
            th = (np.arange(m) + shift + 0.5 * GOLDEN_FLOAT) / m
            _, logabs = log_det_P(params.lam, params.alpha, th, params.energy, k)
        return float(np.mean(logabs))

    coarse = trapezoid(n, 0.0)
    fine = trapezoid(2 * n, 0.0)
    return HermanReport(fine, bound, bool(fine >= bound - tol), 2 * n,
                        abs(fine - coarse), jittered)


# ── Thouless formula ────────────────────────────────────────────────

@dataclass(frozen=True)
class ThoulessReport:
    residual: float
    lyapunov: float
    log_potential: float
    excluded_atoms: tuple


def log_potential(atoms, weights, energy, tol=1e-14):
    """Σ w_i ln|E − a_i|, skipping atoms that coincide with E."""
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    gap = np.abs(energy - atoms)
    hit = gap <= tol * max(1.0, abs(energy))
    with np.errstate(divide="ignore"):
        total = float(np.sum(weights[~hit] * np.log(gap[~hit])))
    return total, tuple(int(i) for i in np.nonzero(hit)[0])


def thouless_residual(params: OperatorParams, atoms, weights=None, lyapunov=None,
                      n_steps=100_000, n_phases=8, seed=0) -> ThoulessReport:
    """|L(E) − Σ w_i ln|E − a_i|| for an atomic approximation of dN.

    ``lyapunov`` may be supplied to reuse a value; otherwise it is estimated.
    Atoms sitting on E are excluded and listed in ``excluded_atoms``.
    """
    atoms = np.asarray(atoms, dtype=float)
    weights = np.full(len(atoms), 1.0 / len(atoms)) if weights is None else np.asarray(weights)
    E = float(np.real(params.energy))
    if lyapunov is None:
        if params.lam == 0:
            lyapunov = free_lyapunov(E)
        else:
            lyapunov = lyapunov_exponent(params, n_steps, n_phases, seed).value
    pot, excluded = log_potential(atoms, weights, E)
    return ThoulessReport(abs(lyapunov - pot), float(lyapunov), pot, excluded)


def check_singular(report: ThoulessReport):
    """Raise SingularNode if any atom had to be excluded."""
    if report.excluded_atoms:
        raise SingularNode(f"energy coincides with atoms {report.excluded_atoms}")
