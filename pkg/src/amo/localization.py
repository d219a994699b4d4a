"""Finite-box localization diagnostics: eigenpairs, Green functions, regularity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cocycle import OperatorParams, log_det_P, potential
from .errors import (InverseIterationStall, NearSingularWindow, NoDecayDetected,
                     ValidationError)

EIG_TOL = 1e-12
RESIDUAL_TOL = 1e-8
SINGULAR_GUARD = 1e-10
_MAX_INVERSE_ITER = 50


# ── truncated operator ──────────────────────────────────────────────

@dataclass(frozen=True)
class TruncatedOperator:
    """H restricted to sites x1..x2 with zero boundary conditions."""

    params: OperatorParams
    x1: int
    x2: int

    def __post_init__(self):
        if self.x2 < self.x1:
            raise ValidationError(f"empty window [{self.x1}, {self.x2}]")

    @property
    def dimension(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.x1, self.x2 + 1)

    @property
    def diagonal(self) -> np.ndarray:
        p = self.params
        return potential(p.lam, p.alpha, p.theta + self.sites * p.alpha)

    def dense(self) -> np.ndarray:
        n = self.dimension
        return np.diag(self.diagonal) + np.eye(n, k=1) + np.eye(n, k=-1)

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = self.diagonal * v
        out[:-1] += v[1:]
        out[1:] += v[:-1]
        return out


# ── Sturm sequences ─────────────────────────────────────────────────

def sturm_count(diag: np.ndarray, shifts) -> np.ndarray:
    """Number of eigenvalues strictly below each shift (unit off-diagonal)."""
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    tiny = np.finfo(float).tiny ** 0.5
    # pivots decrease in the shift, so a zero pivot is the limit from the
    # left of a positive one: replace it by +tiny (not counted)
    pivot = diag[0] - shifts
    pivot = np.where(pivot == 0, tiny, pivot)
    count = (pivot < 0).astype(np.int64)
    with np.errstate(over="ignore", divide="ignore"):
        # a denormal pivot gives −inf next, which counts once and then resets
        for a in diag[1:]:
            pivot = a - shifts - 1.0 / pivot
            pivot = np.where(pivot == 0, tiny, pivot)
            count += pivot < 0
    return count


def bisect_eigenvalues(diag: np.ndarray, indices=None, tol: float = EIG_TOL) -> np.ndarray:
    """Eigenvalues with the given ascending indices, by simultaneous bisection."""
    n = len(diag)
    idx = np.arange(n) if indices is None else np.asarray(indices, dtype=np.int64)
    lo = np.full(len(idx), float(np.min(diag)) - 2.0 - tol)
    hi = np.full(len(idx), float(np.max(diag)) + 2.0 + tol)
    while np.any(hi - lo > tol):
        mid = 0.5 * (lo + hi)
        above = sturm_count(diag, mid) > idx
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return 0.5 * (lo + hi)


# ── eigenvectors ────────────────────────────────────────────────────

@dataclass(frozen=True)
class EigenPair:
    """Eigenvector stored as log-magnitudes and signs, so tails never underflow."""

    energy: float
    log_abs: np.ndarray
    signs: np.ndarray
    residual: float
    x1: int
    iterations: int = 0

    @property
    def center(self) -> int:
        return int(self.x1 + np.argmax(self.log_abs))

    def vector(self) -> np.ndarray:
        """Vector scaled to unit maximum entry."""
        return self.signs * np.exp(self.log_abs - np.max(self.log_abs))


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray
    pairs: tuple


def _twisted_vector(diag, energy):
    """Null vector of the twisted factorization of T − E at the best twist index."""
    n = len(diag)
    shifted = diag - energy
    tiny = np.finfo(float).tiny ** 0.5
    fwd = np.empty(n)
    bwd = np.empty(n)
    fwd[0] = shifted[0]
    for i in range(1, n):
        prev = fwd[i - 1] if fwd[i - 1] != 0 else tiny
        fwd[i] = shifted[i] - 1.0 / prev
    bwd[-1] = shifted[-1]
    for i in range(n - 2, -1, -1):
        nxt = bwd[i + 1] if bwd[i + 1] != 0 else tiny
        bwd[i] = shifted[i] - 1.0 / nxt
    gamma = fwd + bwd - shifted
    r = int(np.argmin(np.abs(gamma)))
    log_abs = np.zeros(n)
    signs = np.ones(n)
    # z_i = −z_{i+1}/fwd_i below the twist, z_i = −z_{i−1}/bwd_i above it
    if r > 0:
        f = np.where(fwd[:r] == 0, tiny, fwd[:r])
        log_abs[:r] = np.cumsum(-np.log(np.abs(f))[::-1])[::-1]
        signs[:r] = np.cumprod(-np.sign(f)[::-1])[::-1]
    if r < n - 1:
        b = np.where(bwd[r + 1:] == 0, tiny, bwd[r + 1:])
        log_abs[r + 1:] = np.cumsum(-np.log(np.abs(b)))
        signs[r + 1:] = np.cumprod(-np.sign(b))
    return log_abs, signs


def _residual(op: TruncatedOperator, energy, vec) -> float:
    return float(np.linalg.norm(op.apply(vec) - energy * vec) / np.linalg.norm(vec))


def _solve_shifted(diag, energy, rhs):
    """Thomas algorithm for (T − E) x = rhs with unit off-diagonals."""
    n = len(diag)
    tiny = np.finfo(float).eps * (1.0 + np.max(np.abs(diag)))
    piv = np.empty(n)
    y = np.empty(n)
    piv[0] = diag[0] - energy
    y[0] = rhs[0]
    for i in range(1, n):
        prev = piv[i - 1] if abs(piv[i - 1]) > tiny else tiny
        piv[i] = diag[i] - energy - 1.0 / prev
        y[i] = rhs[i] - y[i - 1] / prev
    piv[-1] = piv[-1] if abs(piv[-1]) > tiny else tiny
    x = np.empty(n)
    x[-1] = y[-1] / piv[-1]
    for i in range(n - 2, -1, -1):
        p = piv[i] if abs(piv[i]) > tiny else tiny
        x[i] = (y[i] - x[i + 1]) / p
    return x


def eigenpair(op: TruncatedOperator, energy: float) -> EigenPair:
    """Eigenvector for a computed eigenvalue, with inverse iteration as fallback."""
    diag = op.diagonal
    if op.dimension == 1:
        return EigenPair(float(energy), np.zeros(1), np.ones(1), 0.0, op.x1)
    log_abs, signs = _twisted_vector(diag, energy)
    vec = signs * np.exp(log_abs - np.max(log_abs))
    res = _residual(op, energy, vec)
    iters = 0
    while res > RESIDUAL_TOL:
        if iters >= _MAX_INVERSE_ITER:
            raise InverseIterationStall(f"no convergence at E={energy}", residual=res)
        vec = _solve_shifted(diag, energy, vec)
        vec /= np.max(np.abs(vec))
        res = _residual(op, energy, vec)
        iters += 1
    if iters:
        with np.errstate(divide="ignore"):
            log_abs, signs = np.log(np.abs(vec)), np.where(vec < 0, -1.0, 1.0)
    return EigenPair(float(energy), log_abs, signs, res, op.x1, iters)


def eigen_tridiagonal(op: TruncatedOperator, select=None, tol: float = EIG_TOL) -> EigenResult:
    """All eigenvalues by Sturm bisection; eigenvectors for ascending indices in ``select``."""
    diag = op.diagonal
    values = bisect_eigenvalues(diag, tol=tol)
    pairs = () if select is None else tuple(eigenpair(op, values[i]) for i in select)
    return EigenResult(values, pairs)


def middle_states(op: TruncatedOperator, n_states: int, tol: float = EIG_TOL):
    """The n_states eigenpairs with indices centered in the spectrum."""
    n = op.dimension
    start = max(0, n // 2 - n_states // 2)
    idx = np.arange(start, min(n, start + n_states))
    values = bisect_eigenvalues(op.diagonal, idx, tol)
    return [eigenpair(op, e) for e in values]


# ── Green functions ─────────────────────────────────────────────────

def _log_dets(op: TruncatedOperator, energy):
    """Signed log-determinants of E − H on [x1, x−1] (forward) and [y+1, x2] (backward).

    Entry i of each array refers to site x1 + i; the forward array has one
    extra entry holding the full-window determinant P_k.
    """
    shifted = energy - op.diagonal
    n = op.dimension

    def run(coeffs):
        sign = np.ones(n + 1)
        logv = np.zeros(n + 1)
        prev, cur, scale = 0.0, 1.0, 0.0
        for j, c in enumerate(coeffs, start=1):
            cur, prev = c * cur - prev, cur
            big = max(abs(cur), abs(prev)) or 1.0
            scale += math.log(big)
            cur, prev = cur / big, prev / big
            sign[j] = math.copysign(1.0, cur) if cur != 0 else 0.0
            logv[j] = math.log(abs(cur)) + scale if cur != 0 else -math.inf
        return sign, logv

    fs, fl = run(shifted)
    bs, bl = run(shifted[::-1])
    return (fs, fl), (bs[::-1][1:], bl[::-1][1:])


def window_determinant(params: OperatorParams, window) -> tuple:
    """(sign, ln|P_k|) of det(E − H) on the window, k its length."""
    op = TruncatedOperator(params, *window)
    (fs, fl), _ = _log_dets(op, params.energy)
    return float(fs[-1]), float(fl[-1])


def _guard(op: TruncatedOperator, energy):
    near = sturm_count(op.diagonal, [energy - SINGULAR_GUARD, energy + SINGULAR_GUARD])
    if near[1] != near[0]:
        raise NearSingularWindow(f"E={energy} within {SINGULAR_GUARD} of a window eigenvalue")


def green_matrix(params: OperatorParams, window) -> np.ndarray:
    """(H − E)^{-1} on the window from determinant quotients."""
    op = TruncatedOperator(params, *window)
    _guard(op, params.energy)
    (fs, fl), (bs, bl) = _log_dets(op, params.energy)
    n = op.dimension
    i = np.arange(n)
    lo, hi = np.minimum.outer(i, i), np.maximum.outer(i, i)
    logs = fl[lo] + bl[hi] - fl[-1]
    return -fs[lo] * bs[hi] * fs[-1] * np.exp(logs)


def green_function(params: OperatorParams, window, x: int, y: int) -> float:
    """G(x, y) = (H|_window − E)^{-1}(x, y)."""
    op = TruncatedOperator(params, *window)
    x1, x2 = window
    if not (x1 <= x <= x2 and x1 <= y <= x2):
        raise ValidationError("x and y must lie in the window")
    _guard(op, params.energy)
    (fs, fl), (bs, bl) = _log_dets(op, params.energy)
    a, b = min(x, y) - x1, max(x, y) - x1
    return float(-fs[a] * bs[b] * fs[-1] * math.exp(fl[a] + bl[b] - fl[-1]))


def formal_solution(params: OperatorParams, start: int, u_prev: float, u_start: float,
                    length: int) -> np.ndarray:
    """u on sites start−1 .. start+length−1 from u_{n+1} = (E − v_n)u_n − u_{n−1}."""
    u = np.empty(length + 1)
    u[0], u[1] = u_prev, u_start
    sites = start + np.arange(length - 1)
    v = potential(params.lam, params.alpha, params.theta + sites * params.alpha)
    for j in range(length - 1):
        u[j + 2] = (params.energy - v[j]) * u[j + 1] - u[j]
    return u


def poisson_residual(params: OperatorParams, window, psi: np.ndarray) -> float:
    """Max relative violation of Ψ(x) = −G(x,x1)Ψ(x1−1) − G(x,x2)Ψ(x2+1) on the window.

    ``psi`` holds a solution on sites x1−1 .. x2+1.
    """
    x1, x2 = window
    g = green_matrix(params, window)
    inner = psi[1:-1]
    rebuilt = -g[:, 0] * psi[0] - g[:, -1] * psi[-1]
    return float(np.max(np.abs(rebuilt - inner)) / np.max(np.abs(psi)))


# ── regularity ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class RegularityReport:
    y: int
    k: int
    m: float
    witness: tuple | None
    classification: str  # "Regular" or "Singular"
    best_margin: float   # max over scanned windows of the smaller log-margin
    n_windows: int

    @property
    def regular(self) -> bool:
        return self.classification == "Regular"


def regularity_classify(params: OperatorParams, y: int, k: int, m: float,
                        stride: int | None = None) -> RegularityReport:
    """Look for a length-k window around y where G decays at rate m to both ends.

    Windows [x1, x1+k−1] need dist(y, x_i) ≥ k/40 at both ends. Every start
    is scanned for k ≤ 500, otherwise every ⌈k/100⌉-th.
    """
    if k < 40:
        raise ValidationError("k must be >= 40")
    margin = math.ceil(k / 40)
    if stride is None:
        stride = 1 if k <= 500 else math.ceil(k / 100)
    starts = np.arange(y - (k - 1) + margin, y - margin + 1, stride)
    if len(starts) == 0:
        return RegularityReport(y, k, m, None, "Singular", -math.inf, 0)
    lam, alpha, theta, e = params.lam, params.alpha, params.theta, params.energy
    phases = theta + starts * alpha
    left_len = y - starts                      # P_{y−x1}(θ+x1α)
    right_len = starts + k - 1 - y             # P_{x2−y}(θ+(y+1)α)
    (full_s, full_l), left_rec = log_det_P(lam, alpha, phases, e, k, record=np.unique(left_len))
    lookup = {int(j): i for i, j in enumerate(np.unique(left_len))}
    left_l = np.array([left_rec[lookup[int(j)]][1][i] for i, j in enumerate(left_len)])
    uniq_r = np.unique(right_len)
    _, right_rec = log_det_P(lam, alpha, np.array([theta + (y + 1) * alpha]), e,
                             int(uniq_r.max()), record=uniq_r)
    rlookup = {int(j): right_rec[i][1][0] for i, j in enumerate(uniq_r)}
    right_l = np.array([rlookup[int(j)] for j in right_len])
    # log|G(y, x1)| = ln|P_{x2−y}| − ln|P_k| and log|G(y, x2)| = ln|P_{y−x1}| − ln|P_k|
    margin_left = -m * left_len - (right_l - full_l)
    margin_right = -m * right_len - (left_l - full_l)
    worst = np.minimum(margin_left, margin_right)
    ok = worst > 0
    best = int(np.argmax(worst))
    witness = None
    if np.any(ok):
        first = int(np.argmax(ok))
        witness = (int(starts[first]), int(starts[first] + k - 1))
    return RegularityReport(y, k, m, witness, "Regular" if witness else "Singular",
                            float(worst[best]), len(starts))


# ── decay fit ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class DecayFit:
    slope: float
    r2: float
    window_used: tuple  # (d_min, d_max) distances from the center
    center: int
    n_points: int


def decay_rate(log_abs, boundary_fraction: float = 0.1, min_r2: float = 0.5) -> DecayFit:
    """Least-squares slope of ln|v_n| against |n − center|.

    The center is argmax |v|. Sites within ``boundary_fraction`` of either end
    are dropped; of the remaining distances 0..D the fit uses [0.2D, 0.8D].
    Accepts an EigenPair or an array of ln|v_n|.
    """
    if isinstance(log_abs, EigenPair):
        log_abs = log_abs.log_abs
    log_abs = np.asarray(log_abs, dtype=float)
    n = len(log_abs)
    center = int(np.argmax(log_abs))
    cut = int(math.floor(boundary_fraction * n))
    sites = np.arange(cut, n - cut)
    dist = np.abs(sites - center)
    d_max = int(dist.max()) if len(dist) else 0
    lo_d, hi_d = 0.2 * d_max, 0.8 * d_max
    use = (dist >= lo_d) & (dist <= hi_d) & np.isfinite(log_abs[sites])
    x, yv = dist[use].astype(float), log_abs[sites][use]
    if len(x) < 3 or np.ptp(x) == 0:
        raise NoDecayDetected("too few sites for a decay fit")
    slope, intercept = np.polyfit(x, yv, 1)
    resid = yv - (slope * x + intercept)
    total = np.sum((yv - yv.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / total if total > 0 else 0.0
    if r2 < min_r2:
        raise NoDecayDetected(f"r2 = {r2:.3f}", slope=float(slope), r2=float(r2))
    return DecayFit(float(slope), float(r2), (lo_d, hi_d), center, int(len(x)))


# ── phase sets and growth bounds ────────────────────────────────────

@dataclass(frozen=True)
class MembershipReport:
    member: np.ndarray
    log_margin: np.ndarray  # (k+1)·r − ln|Q_k(cos 2πθ)|


def A_kr_membership(params: OperatorParams, k: int, r: float, theta_probe) -> MembershipReport:
    """Whether |Q_k(cos 2πθ)| ≤ e^{(k+1)r} at each probe phase.

    Q_k(cos 2πθ) is P_k evaluated at θ − (k−1)α/2.
    """
    probes = np.atleast_1d(np.asarray(theta_probe, dtype=float))
    shifted = probes - 0.5 * (k - 1) * params.alpha
    _, logp = log_det_P(params.lam, params.alpha, shifted, params.energy, k)
    with np.errstate(invalid="ignore"):
        margin = (k + 1) * r - logp
    margin = np.where(np.isposinf(r), np.inf, margin)
    return MembershipReport(margin >= 0, margin)


def generalized_bound_check(psi, C: float | None = None, sites=None):
    """Check |Ψ(x)| ≤ C(1+|x|); returns (passed, smallest admissible C)."""
    psi = np.asarray(psi, dtype=float)
    x = np.arange(len(psi)) if sites is None else np.asarray(sites)
    needed = float(np.max(np.abs(psi) / (1.0 + np.abs(x))))
    return (True if C is None else needed <= C), needed
