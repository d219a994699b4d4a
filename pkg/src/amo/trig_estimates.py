"""Logarithmic sine sums and the node-uniformity measure behind Lagrange bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .arithmetic import ContinuedFractionExpansion
from .cocycle import OperatorParams, log_det_P
from .errors import CoincidentNodes, DegenerateNode, PreconditionViolated, ValidationError
from .localization import A_kr_membership

LN2 = math.log(2.0)
DEGENERATE_SINE = 1e-15
COINCIDENT_GAP = 1e-13
_GOLDEN_STEPS = 80
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


# ── sine sums ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class SinSumReport:
    total: float        # sum over k ≠ k0
    k0: int             # excluded index (1-based, lowest on ties)
    tie: bool           # another index attains the same minimum
    deviation: float    # total + (q−1)·ln 2
    lower: float
    upper: float
    passed: bool


def _excluded_sum(args: np.ndarray):
    """Σ_{k≠k0} ln|sin 2π·arg_k| with k0 the index of the smallest |sin|."""
    sines = np.abs(np.sin(2.0 * np.pi * args))
    k0 = int(np.argmin(sines))
    tie = bool(np.sum(sines <= sines[k0] * (1 + 1e-12) + 1e-300) > 1)
    rest = np.delete(sines, k0)
    if len(rest) and np.min(rest) < DEGENERATE_SINE:
        raise DegenerateNode("a retained sine factor vanishes")
    return float(np.sum(np.log(rest))), k0 + 1, tie


def log_sin_sum_rational(x: float, p: int, q: int) -> SinSumReport:
    """Σ_{k=1..q, k≠k0} ln|sin 2π(x + kp/2q)| against ln q + ln(2/π) < · + (q−1)ln 2 ≤ ln q."""
    if q < 1 or math.gcd(p, q) != 1:
        raise ValidationError("need q >= 1 and gcd(p, q) = 1")
    k = np.arange(1, q + 1)
    total, k0, tie = _excluded_sum(x + k * p / (2.0 * q))
    dev = total + (q - 1) * LN2
    lower = math.log(q) + math.log(2.0 / math.pi)
    upper = math.log(q)
    slack = 1e-12 * max(1.0, q)
    return SinSumReport(total, k0, tie, dev, lower, upper,
                        lower - slack < dev <= upper + slack)


@dataclass(frozen=True)
class IdentityCheck:
    direct: float
    closed_form: float
    deviation: float


def rat0_identity(p: int, q: int, dps: int | None = None) -> IdentityCheck:
    """Σ_{k=1}^{q−1} ln|sin(πkp/q)| against −(q−1)ln 2 + ln q.

    With ``dps`` set the sum is evaluated in mpmath at that many digits.
    """
    if q < 1 or math.gcd(p, q) != 1:
        raise ValidationError("need q >= 1 and gcd(p, q) = 1")
    if dps is None:
        k = np.arange(1, q)
        direct = float(np.sum(np.log(np.abs(np.sin(np.pi * ((k * p) % q) / q)))))
        closed = -(q - 1) * LN2 + math.log(q)
        return IdentityCheck(direct, closed, abs(direct - closed))
    with mpmath.workdps(dps):
        direct = mpmath.fsum(mpmath.log(abs(mpmath.sinpi(mpmath.mpf((k * p) % q) / q)))
                             for k in range(1, q))
        closed = -(q - 1) * mpmath.log(2) + mpmath.log(q)
        return IdentityCheck(direct, closed, abs(direct - closed))


def lnsin_partial_sum(x: float, n_terms: int):
    """Partial Fourier sum −ln 2 − Σ_{k=1}^{n} cos(kx)/k of ln|sin(x/2)|.

    Returns the value and, at x = π where the series alternates, the tail
    bound 1/(n+1).
    """
    k = np.arange(1, n_terms + 1)
    value = -LN2 - float(np.sum(np.cos(k * x) / k))
    return value, 1.0 / (n_terms + 1)


@dataclass(frozen=True)
class IrrationalSumReport:
    total: float
    k0: int
    tie: bool
    deviation: float       # |total + (q_n − 1)·ln 2|
    empirical_C: float     # deviation / ln q_n


def _alpha(cf: ContinuedFractionExpansion) -> float:
    return float(cf.alpha)


def log_sin_sum_irrational(x: float, cf: ContinuedFractionExpansion, n: int) -> IrrationalSumReport:
    """Σ_{k=1..q_n, k≠k0} ln|sin 2π(x + kα/2)| and its deviation from −(q_n−1)ln 2."""
    q = cf.convergents[n][1]
    if q == 1:
        return IrrationalSumReport(0.0, 1, False, 0.0, math.nan)
    k = np.arange(1, q + 1)
    total, k0, tie = _excluded_sum(x + k * _alpha(cf) / 2.0)
    dev = abs(total + (q - 1) * LN2)
    return IrrationalSumReport(total, k0, tie, dev, dev / math.log(q))


@dataclass(frozen=True)
class ShiftedSumReport:
    deviation: float
    bound: float
    passed: bool
    k0: int
    empirical_C: float   # smallest C for which the bound holds


def shifted_sum_check(x: float, cf: ContinuedFractionExpansion, n: int, r: int, ell: int,
                      ell_ks, C: float = 10.0) -> ShiftedSumReport:
    """Deviation of Σ_{k≠k0} ln|sin 2π(x + (k + ℓ_k q_r)α/2)| + (q_n−1)ln 2.

    Compared with ln q_n + C(Δ_n + (ℓ−1)Δ_r)·q_n ln q_n. Requires r ≥ n,
    |ℓ_k| ≤ ℓ − 1 and ℓ < q_{r+1}/(10 q_n).
    """
    if r < n:
        raise PreconditionViolated("need r >= n")
    if r + 1 >= len(cf.convergents):
        raise PreconditionViolated(f"convergent {r + 1} not available")
    q_n = cf.convergents[n][1]
    q_r = cf.convergents[r][1]
    q_r1 = cf.convergents[r + 1][1]
    if not ell * 10 * q_n < q_r1:
        raise PreconditionViolated(f"ell={ell} is not below q_(r+1)/(10 q_n) = {q_r1 / (10 * q_n):.4g}")
    ell_ks = np.asarray(ell_ks, dtype=np.int64)
    if len(ell_ks) != q_n or np.any(np.abs(ell_ks) > ell - 1):
        raise PreconditionViolated("need q_n shifts with |ell_k| <= ell - 1")
    alpha = _alpha(cf)
    k = np.arange(1, q_n + 1)
    total, k0, _ = _excluded_sum(x + (k + ell_ks * q_r) * alpha / 2.0)
    dev = abs(total + (q_n - 1) * LN2)
    delta_n = abs(float(cf.signed_errors[n]))
    delta_r = abs(float(cf.signed_errors[r]))
    ln_q = math.log(q_n) if q_n > 1 else 0.0
    scale = (delta_n + (ell - 1) * delta_r) * q_n * ln_q
    bound = ln_q + C * scale
    c_needed = (dev - ln_q) / scale if scale > 0 else (0.0 if dev <= ln_q else math.inf)
    return ShiftedSumReport(dev, bound, dev < bound, k0, max(0.0, c_needed))


# ── uniformity of interpolation nodes ───────────────────────────────

@dataclass(frozen=True)
class UniformitySample:
    thetas: tuple
    epsilon_measured: float
    argmax_node: int      # j attaining the maximum (0-based)
    argmax_z: float


def _log_basis(z, nodes, j_idx, denoms):
    """ln|ℓ_j(z)| for Lagrange basis polynomials, z of shape (m,) paired with j_idx."""
    diff = np.abs(z[:, None] - nodes[None, :])
    diff[np.arange(len(z)), j_idx] = 1.0
    with np.errstate(divide="ignore"):
        return np.sum(np.log(diff), axis=1) - denoms[j_idx]


def uniformity_measure(thetas) -> UniformitySample:
    """ε = (1/k)·max_{z∈[−1,1], j} ln ∏_{ℓ≠j} |z − c_ℓ|/|c_j − c_ℓ|, c = cos 2πθ.

    Between consecutive nodes other than c_j, ln|ℓ_j| is concave, so a
    golden-section search on every such interval finds the exact maximum.
    """
    thetas = np.asarray(thetas, dtype=float)
    if len(thetas) < 2:
        raise ValidationError("need at least two nodes")
    nodes = np.cos(2.0 * np.pi * thetas)
    order = np.sort(nodes)
    if np.min(np.diff(order)) <= COINCIDENT_GAP:
        raise CoincidentNodes("two nodes share a cosine value")
    k = len(nodes) - 1
    gaps = np.abs(nodes[:, None] - nodes[None, :])
    np.fill_diagonal(gaps, 1.0)
    denoms = np.sum(np.log(gaps), axis=1)

    # intervals between consecutive roots of ℓ_j, for every j
    js, los, his = [], [], []
    for j in range(k + 1):
        roots = np.delete(order, np.searchsorted(order, nodes[j]))
        cuts = np.concatenate([[-1.0], roots[(roots > -1.0) & (roots < 1.0)], [1.0]])
        js.append(np.full(len(cuts) - 1, j))
        los.append(cuts[:-1])
        his.append(cuts[1:])
    j_idx = np.concatenate(js)
    a, b = np.concatenate(los), np.concatenate(his)

    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc = _log_basis(c, nodes, j_idx, denoms)
    fd = _log_basis(d, nodes, j_idx, denoms)
    for _ in range(_GOLDEN_STEPS):
        left = fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + _INV_PHI * (b - a))
        c_new = np.where(left, b - _INV_PHI * (b - a), d)
        fc, fd = (np.where(left, _log_basis(c_new, nodes, j_idx, denoms), fd),
                  np.where(left, fc, _log_basis(d_new, nodes, j_idx, denoms)))
        c, d = c_new, d_new
    z = 0.5 * (a + b)
    # the ±1 endpoints belong to the outer intervals
    z_all = np.concatenate([z, np.full(len(j_idx), -1.0), np.full(len(j_idx), 1.0)])
    j_all = np.concatenate([j_idx, j_idx, j_idx])
    vals = _log_basis(z_all, nodes, j_all, denoms)
    best = int(np.argmax(vals))
    return UniformitySample(tuple(float(t) for t in thetas), float(vals[best]) / k,
                            int(j_all[best]), float(z_all[best]))


def lagrange_interpolate(values, nodes, z) -> float:
    """Σ_j values_j ∏_{ℓ≠j} (z − c_ℓ)/(c_j − c_ℓ)."""
    values = np.asarray(values, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    out = 0.0
    for j in range(len(nodes)):
        others = np.delete(nodes, j)
        out += values[j] * np.prod((z - others) / (nodes[j] - others))
    return float(out)


# ── Lagrange blow-up ────────────────────────────────────────────────

@dataclass(frozen=True)
class LagrangeReport:
    status: str                 # "Applicable" or "NotApplicable"
    members: tuple
    epsilon_measured: float
    implied_lower: float        # uniformity forced by interpolation at the peak phase
    peak_log: float             # max over probe phases of ln|P_k|
    passed: bool                # measured uniformity respects the forced lower bound
    not_eps1_uniform: bool      # measured uniformity ≥ ε₁


def lagrange_blowup_check(params: OperatorParams, k: int, thetas, eps: float,
                          eps1: float, n_probe: int = 1024) -> LagrangeReport:
    """Interpolating Q_k through k+1 small values forces non-uniform nodes.

    If every node lies in A_{k,L−ε} then at the phase where |P_k| peaks,
    peak ≤ ln(k+1) + (k+1)(L−ε) + k·ε_measured, which gives the lower bound
    reported as ``implied_lower``. L is taken as max(0, ln|λ|).
    """
    thetas = np.asarray(thetas, dtype=float)
    if len(thetas) != k + 1:
        raise ValidationError("need exactly k+1 nodes")
    lyap = max(0.0, math.log(abs(params.lam))) if params.lam != 0 else 0.0
    membership = A_kr_membership(params, k, lyap - eps, thetas)
    members = tuple(bool(m) for m in membership.member)
    sample = uniformity_measure(thetas)
    probes = np.arange(n_probe) / n_probe
    _, logp = log_det_P(params.lam, params.alpha, probes, params.energy, k)
    peak = float(np.max(logp))
    implied = (peak - math.log(k + 1) - (k + 1) * (lyap - eps)) / k
    if not all(members):
        return LagrangeReport("NotApplicable", members, sample.epsilon_measured, implied,
                              peak, True, sample.epsilon_measured >= eps1)
    passed = sample.epsilon_measured >= implied - 1e-9
    return LagrangeReport("Applicable", members, sample.epsilon_measured, implied, peak,
                          passed, sample.epsilon_measured >= eps1)


def q_polynomial(params: OperatorParams, k: int, z) -> np.ndarray:
    """Q_k(cos 2πθ) = P_k(θ − (k−1)α/2) evaluated at z = cos 2πθ, θ ∈ [0, 1/2]."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    theta = np.arccos(np.clip(z, -1.0, 1.0)) / (2.0 * np.pi)
    sign, logp = log_det_P(params.lam, params.alpha, theta - 0.5 * (k - 1) * params.alpha,
                           params.energy, k)
    return sign * np.exp(logp)
