"""Band and gap structure for rational frequency p/q."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

from .arithmetic import ContinuedFractionExpansion, torus_norm
from .cocycle import TWO_PI, potential
from .errors import RootCountMismatch, ThetaDependenceDetected, ValidationError

EDGE_TOL = 1e-12
_REFINE_RTOL = 1e-11


def _check_fraction(p: int, q: int):
    if q < 1 or math.gcd(p, q) != 1:
        raise ValidationError(f"need q >= 1 and gcd(p, q) = 1, got {p}/{q}")


# ── discriminant ────────────────────────────────────────────────────

def _scale_base(lam: float) -> float:
    return max(1.0, abs(lam))


def _scaled_trace(lam, p, q, energies, theta=0.0):
    """trace(A_q(θ)) / μ^q with μ = max(1, |λ|), vectorized over energies and phases."""
    alpha = p / q
    mu = _scale_base(lam)
    energies = np.asarray(energies, dtype=float)
    theta = np.asarray(theta, dtype=float)
    shape = np.broadcast(energies, theta).shape
    a = np.ones(shape) / 1.0
    b = np.zeros(shape)
    c = np.zeros(shape)
    d = np.ones(shape)
    for j in range(q):
        diag = (energies - potential(lam, alpha, theta + j * alpha)) / mu
        a, b, c, d = diag * a - c / mu, diag * b - d / mu, a / mu, b / mu
    return a + d


def _scaled_terms(lam, q, theta):
    """(2λ^q cos 2πqθ) / μ^q and the band threshold (2 + 2|λ|^q) / μ^q."""
    mu = _scale_base(lam)
    log_ratio = q * (math.log(abs(lam)) - math.log(mu)) if lam != 0 else -math.inf
    lam_term = 2.0 * math.copysign(1.0, lam) ** q * math.exp(log_ratio)
    two = 2.0 * math.exp(-q * math.log(mu))
    return lam_term * np.cos(TWO_PI * q * np.asarray(theta, dtype=float)), two + 2.0 * math.exp(log_ratio)


def _scaled_product(lam, p, q, energies, theta):
    """trace(A_q(θ))/μ^q and max |entry| of A_q(θ)/μ^q."""
    alpha = p / q
    mu = _scale_base(lam)
    a, b, c, d = 1.0, 0.0, 0.0, 1.0
    for j in range(q):
        diag = (energies - potential(lam, alpha, theta + j * alpha)) / mu
        a, b, c, d = diag * a - c / mu, diag * b - d / mu, a / mu, b / mu
    size = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.maximum(np.abs(c), np.abs(d)))
    return a + d, size


def _mp_discriminant(lam, p, q, energy, theta, dps):
    with mpmath.workdps(dps):
        lam_mp, e_mp, th = mpmath.mpf(lam), mpmath.mpf(energy), mpmath.mpf(theta)
        alpha = mpmath.mpf(p) / q
        u_prev, u = mpmath.mpf(0), mpmath.mpf(1)    # first column of A_j
        v_prev, v = mpmath.mpf(1), mpmath.mpf(0)    # second column, top entries
        for j in range(q):
            diag = e_mp - 2 * lam_mp * mpmath.cos(2 * mpmath.pi * (th + j * alpha))
            u, u_prev = diag * u - u_prev, u
            v, v_prev = diag * v - v_prev, v
        # A_q = [[u_q, v_q], [u_{q-1}, v_{q-1}]]
        phi = u + v_prev + 2 * lam_mp ** q * mpmath.cos(2 * mpmath.pi * q * th)
        return float(phi)


def discriminant(lam: float, p: int, q: int, energy, theta: float = 0.0):
    """Φ(E) = trace(A_q(θ)) + 2λ^q cos 2πqθ, independent of θ.

    Evaluated in float64; entries where cancellation could cost more than
    about 1e-11·max(1, |Φ|) are recomputed with mpmath at enough digits.
    """
    _check_fraction(p, q)
    energy = np.asarray(energy, dtype=float)
    theta = np.asarray(theta, dtype=float)
    lam_term, _ = _scaled_terms(lam, q, theta)
    trace, size = _scaled_product(lam, p, q, energy, theta)
    scale = _scale_base(lam) ** q
    with np.errstate(over="ignore"):
        phi = (trace + lam_term) * scale
        noise = 16.0 * q * np.finfo(float).eps * np.maximum(size, np.abs(lam_term) + 1.0) * scale
    redo = noise > _REFINE_RTOL * np.maximum(1.0, np.abs(phi))
    if np.any(redo):
        scalar = np.ndim(phi) == 0
        phi = np.atleast_1d(np.array(phi, dtype=float))
        e_b, th_b, noise, redo = (np.broadcast_to(np.atleast_1d(a), phi.shape)
                                  for a in (energy, theta, noise, redo))
        for idx in zip(*np.nonzero(redo)):
            digits = 30 + int(math.ceil(math.log10(max(1.0, noise[idx] / np.finfo(float).eps))))
            phi[idx] = _mp_discriminant(lam, p, q, e_b[idx], th_b[idx], digits)
        if scalar:
            phi = float(phi[0])
    return phi


def discriminant_spread(lam, p, q, energy, n_phases=32, raise_on_fail=False, rtol=1e-9):
    """Max minus min of Φ(E) over n_phases equispaced probe phases, and Φ itself."""
    thetas = (np.arange(n_phases) + 0.5) / n_phases / q + 0.123
    vals = discriminant(lam, p, q, float(energy), thetas)
    spread = float(vals.max() - vals.min())
    phi = float(np.median(vals))
    if raise_on_fail and spread > rtol * max(1.0, abs(phi)):
        raise ThetaDependenceDetected(f"spread {spread:.3e} at E={energy}")
    return spread, phi


# ── bands ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BandList:
    lam: float
    p: int
    q: int
    bands: tuple  # ((E_low, E_high), ...) in increasing order
    edge_tolerance: float = EDGE_TOL

    @property
    def edges(self) -> np.ndarray:
        return np.array(self.bands, dtype=float)

    @property
    def max_band_length(self) -> float:
        e = self.edges
        return float(np.max(e[:, 1] - e[:, 0]))

    @property
    def measure(self) -> float:
        e = self.edges
        return float(np.sum(e[:, 1] - e[:, 0]))

    def contains(self, energies, tol=0.0) -> np.ndarray:
        energies = np.atleast_1d(np.asarray(energies, dtype=float))
        e = self.edges
        inside = (energies[:, None] >= e[None, :, 0] - tol) & (energies[:, None] <= e[None, :, 1] + tol)
        return inside.any(axis=1)

    def touchings(self) -> list[float]:
        e = self.edges
        return [float(0.5 * (e[j, 1] + e[j + 1, 0])) for j in range(self.q - 1)
                if e[j + 1, 0] - e[j, 1] <= 10 * self.edge_tolerance]

    def to_json(self) -> dict:
        return {"lambda": self.lam, "p": self.p, "q": self.q,
                "bands": [list(b) for b in self.bands], "edge_tolerance": self.edge_tolerance}

    @classmethod
    def from_json(cls, data: dict) -> "BandList":
        return cls(float(data["lambda"]), int(data["p"]), int(data["q"]),
                   tuple((float(a), float(b)) for a, b in data["bands"]),
                   float(data["edge_tolerance"]))


def _rounding_noise(lam, p, q, energies):
    """First-order bound on the float64 rounding error of the scaled Φ."""
    alpha = p / q
    mu = _scale_base(lam)
    energies = np.asarray(energies, dtype=float)
    a, b = np.ones_like(energies), np.zeros_like(energies)
    c, d = np.zeros_like(energies), np.ones_like(energies)
    for j in range(q):
        diag = np.abs(energies - potential(lam, alpha, j * alpha)) / mu
        a, b, c, d = diag * a + c / mu, diag * b + d / mu, a / mu, b / mu
    return 4.0 * q * np.finfo(float).eps * (a + d + 2.0)


def band_edges(lam: float, p: int, q: int, tol: float = EDGE_TOL) -> BandList:
    """The q bands {E : |Φ(E)| ≤ 2 + 2|λ|^q} of the period-q operator.

    The roots of Φ = 2 + 2|λ|^q are the eigenvalues of the periodic q×q
    matrix at θ = 0, and the roots of Φ = −(2 + 2|λ|^q) those of the
    antiperiodic matrix at θ = 1/(2q). Sorting the 2q roots and pairing them
    gives the bands; every band midpoint is then checked to satisfy
    |Φ| ≤ threshold. For even q the two central roots coincide at the
    touching point 0 and are merged.
    """
    _check_fraction(p, q)
    if lam == 0:
        raise ValidationError("lambda must be nonzero")
    plus = periodic_eigenvalues(abs(lam), p, q, [0.0])[0]
    minus = periodic_eigenvalues(abs(lam), p, q, [0.5 / q], bloch=0.5)[0]
    edges = np.sort(np.concatenate([plus, minus]))
    if q % 2 == 0:
        edges[q - 1] = edges[q] = 0.5 * (edges[q - 1] + edges[q])
    low, high = edges[0::2], edges[1::2]

    mids = 0.5 * (low + high)
    lam_term, thr = _scaled_terms(lam, q, 0.0)
    excess = np.abs(_scaled_trace(lam, p, q, mids) + lam_term) - thr
    bad = excess > _rounding_noise(lam, p, q, mids) + 1e-9 * thr
    if np.any(bad):
        raise RootCountMismatch(f"{int(bad.sum())} band midpoints lie outside "
                                f"|Φ| ≤ threshold for lam={lam}, {p}/{q}")
    bands = tuple((float(a), float(b)) for a, b in zip(low, high))
    return BandList(float(lam), int(p), int(q), bands, tol)


def periodic_matrices(lam, p, q, thetas, bloch=0.0):
    """Dense q×q Bloch matrices of the period-q operator at each phase."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    alpha = p / q
    diag = potential(lam, alpha, thetas[:, None] + alpha * np.arange(q)[None, :])
    h = np.zeros((len(thetas), q, q), dtype=complex)
    idx = np.arange(q)
    h[:, idx, idx] = diag
    phase = np.exp(2j * np.pi * bloch)
    if q == 1:
        h[:, 0, 0] += 2 * np.cos(2 * np.pi * bloch)
        return h
    h[:, idx[:-1], idx[1:]] += 1.0
    h[:, idx[1:], idx[:-1]] += 1.0
    h[:, q - 1, 0] += phase
    h[:, 0, q - 1] += np.conj(phase)
    return h


def periodic_eigenvalues(lam, p, q, thetas, bloch=0.0) -> np.ndarray:
    """Eigenvalues of the Bloch matrices, shape (len(thetas), q)."""
    return np.linalg.eigvalsh(periodic_matrices(lam, p, q, thetas, bloch))


# ── gaps ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Gap:
    index: int  # j = number of bands below
    a: float
    b: float
    size: float
    ids_value: Fraction
    label_k: int | None = None
    label_l: int | None = None
    label_dist: float | None = None


def gap_label(ids_value: Fraction, q: int, alpha_target: float):
    """k minimizing ‖j/q − kα‖ over |k| ≤ q/2 (ties to smaller |k|), with l and the distance."""
    ks = np.arange(-(q // 2), q // 2 + 1)
    order = np.argsort(np.abs(ks), kind="stable")
    ks = ks[order]
    diffs = float(ids_value) - ks * alpha_target
    dist = torus_norm(diffs)
    i = int(np.argmin(dist))
    return int(ks[i]), int(np.round(diffs[i])), float(dist[i])


def gap_catalog(bands: BandList, alpha_target: float | None = None) -> list[Gap]:
    """Bounded gaps between consecutive bands; touchings are not gaps."""
    e = bands.edges
    out = []
    for j in range(1, bands.q):
        a, b = float(e[j - 1, 1]), float(e[j, 0])
        size = b - a
        if size <= 10 * bands.edge_tolerance:
            continue
        ids = Fraction(j, bands.q)
        k = l = dist = None
        if alpha_target is not None:
            k, l, dist = gap_label(ids, bands.q, alpha_target)
        out.append(Gap(j, a, b, size, ids, k, l, dist))
    return out


@dataclass(frozen=True)
class GapBoundRow:
    n: int
    p: int
    q: int
    min_gap: float
    log_bound: float
    passed: bool
    n_gaps: int

    @property
    def bound(self) -> float:
        return math.exp(self.log_bound)


def gap_bound_check(lam: float, cf: ContinuedFractionExpansion, n_range, eps: float = 0.1):
    """Smallest bounded gap of each approximant against e^{−εq} λ^{q/2}."""
    if not 0 < lam <= 1:
        raise ValidationError("gap bound needs 0 < lambda <= 1")
    rows = []
    for n in n_range:
        p, q = cf.convergents[n]
        p %= q
        bl = band_edges(lam, p, q)
        gaps = gap_catalog(bl)
        min_gap = min((g.size for g in gaps), default=math.inf)
        log_bound = -eps * q + 0.5 * q * math.log(lam)
        passed = min_gap == math.inf or math.log(min_gap) >= log_bound
        rows.append(GapBoundRow(n, p, q, min_gap, log_bound, passed, len(gaps)))
    return rows


# ── product bound on band representatives ───────────────────────────

@dataclass(frozen=True)
class ProductReport:
    points: tuple
    log_products: tuple
    log_bound: float
    min_log_ratio: float
    passed: bool
    fallback_used: bool


def _log_products(points):
    pts = np.asarray(points, dtype=float)
    diff = np.abs(pts[:, None] - pts[None, :])
    np.fill_diagonal(diff, 1.0)
    with np.errstate(divide="ignore"):
        return np.sum(np.log(diff), axis=1)


def cey_product_check(bands: BandList, n_cheb: int = 8, sweeps: int = 3) -> ProductReport:
    """Check ∏_{j≠i} |a_j − a_i| ≥ |λ|^m, q = 2m+1 or 2m+2, for one point per band.

    Midpoints are tried first. If some product falls short, each point is in
    turn moved to the Chebyshev node of its band that maximizes the smallest
    log-ratio, for a few sweeps.
    """
    q = bands.q
    m = (q - 1) // 2
    log_bound = m * math.log(abs(bands.lam))
    e = bands.edges
    points = 0.5 * (e[:, 0] + e[:, 1])
    logs = _log_products(points)
    fallback = False
    if q > 1 and np.min(logs) < log_bound:
        fallback = True
        cheb = np.cos(np.pi * (2 * np.arange(n_cheb) + 1) / (2 * n_cheb))
        for _ in range(sweeps):
            for i in range(q):
                mid, half = 0.5 * (e[i, 0] + e[i, 1]), 0.5 * (e[i, 1] - e[i, 0])
                best, best_val = points[i], np.min(logs)
                for c in cheb:
                    trial = points.copy()
                    trial[i] = mid + half * c
                    val = np.min(_log_products(trial))
                    if val > best_val:
                        best, best_val = trial[i], val
                points[i] = best
                logs = _log_products(points)
            if np.min(logs) >= log_bound:
                break
    min_ratio = float(np.min(logs) - log_bound) if q > 1 else 0.0
    return ProductReport(tuple(float(x) for x in points), tuple(float(x) for x in logs),
                         log_bound, min_ratio, min_ratio >= 0, fallback)


# ── butterfly and density of states ─────────────────────────────────

def reduced_fractions(q_max: int):
    """(p, q) with 0 ≤ p < q ≤ q_max and gcd = 1, ordered by q then p."""
    return [(p, q) for q in range(1, q_max + 1) for p in range(q) if math.gcd(p, q) == 1]


@dataclass
class Butterfly:
    lam: float
    tiles: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (p, q, message)


def butterfly(lam: float, q_max: int, workers: int = 1, cache=None) -> Butterfly:
    """Band lists for every reduced p/q with q ≤ q_max, in (q, p) order."""
    if q_max < 1:
        raise ValidationError("q_max must be >= 1")
    fracs = reduced_fractions(q_max)

    def one(pq):
        p, q = pq
        try:
            if cache is not None:
                return cache.bands(lam, p, q), None
            return band_edges(lam, p, q), None
        except (RootCountMismatch, ThetaDependenceDetected) as exc:
            return None, (p, q, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, fracs))
    else:
        results = [one(pq) for pq in fracs]
    out = Butterfly(lam)
    for tile, err in results:
        if err is None:
            out.tiles.append(tile)
        else:
            out.failures.append(err)
    return out


@dataclass(frozen=True)
class DosAtoms:
    positions: tuple
    weights: tuple
    max_band_length: float


def dos_atoms(bands: BandList) -> DosAtoms:
    """One atom of mass 1/q at each band midpoint, plus the largest band length."""
    e = bands.edges
    mids = 0.5 * (e[:, 0] + e[:, 1])
    return DosAtoms(tuple(float(x) for x in mids), tuple([1.0 / bands.q] * bands.q),
                    bands.max_band_length)


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Hausdorff distance between two finite unions of closed intervals."""
    return max(_directed(a, b), _directed(b, a))


def _dist_to_union(x, iv):
    below = np.maximum(iv[:, 0] - x, 0.0)
    above = np.maximum(x - iv[:, 1], 0.0)
    return float(np.min(below + above))


def _directed(a, b):
    # sup over x in A of dist(x, B) is attained at an endpoint of A or at the
    # midpoint of a gap of B lying inside A
    cands = list(a.ravel())
    bs = b[np.argsort(b[:, 0])]
    for j in range(len(bs) - 1):
        mid = 0.5 * (bs[j, 1] + bs[j + 1, 0])
        for lo, hi in a:
            if lo <= mid <= hi:
                cands.append(mid)
    return max(_dist_to_union(x, b) for x in cands)
