"""The fourteen acceptance criteria, each checked at its stated tolerance and time budget."""

import math
import time

import numpy as np
import pytest

from amo.arithmetic import GOLDEN, expand
from amo.cocycle import (OperatorParams, fibered_rotation_number, herman_bound_check, lyapunov_sweep,
                         thouless_residual)
from amo.duality import spectra_duality_check
from amo.errors import NearSingularWindow, NoDecayDetected, SmallDivisorOverflow
from amo.localization import (TruncatedOperator, decay_rate, formal_solution, green_matrix,
                              middle_states, poisson_residual)
from amo.mfunction import FourierSeries, cohomological_solve, m_iterate
from amo.rational_spectrum import (band_edges, discriminant, dos_atoms, gap_bound_check,
                                   gap_catalog, periodic_eigenvalues, reduced_fractions)
from amo.trig_estimates import rat0_identity

G = (math.sqrt(5.0) - 1.0) / 2.0
pytestmark = pytest.mark.acceptance


def coprime_residues(q):
    return [p for p in range(1, q + 1) if math.gcd(p, q) == 1 and (p < q or q == 1)]


def golden_approximant(q):
    for p_n, q_n in expand(GOLDEN, 30).convergents:
        if q_n == q:
            return p_n, q_n
    raise AssertionError(f"{q} is not a golden denominator")


# ── 1. exact sine-product identity ──────────────────────────────────

def test_criterion_01_rat0_identity(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst, count, fails = 0.0, 0, 0
    for q in range(1, 501):
        for p in rng.choice(coprime_residues(q), size=5):
            ratio = rat0_identity(int(p), q).deviation / q
            worst = max(worst, ratio)
            fails += ratio > 1e-9
            count += 1
    elapsed = time.perf_counter() - t0
    ok = fails == 0
    assert criterion(1, "sum ln|sin(pi k p/q)| = ln q - (q-1) ln 2", ok,
                     f"{count} pairs, worst deviation/q {worst:.2e} (limit 1e-9)", elapsed, 10)
    assert ok and elapsed < 10


# ── 2. discriminant phase independence ──────────────────────────────

def test_criterion_02_discriminant_phase_independence(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, fails = 0.0, 0
    for _ in range(50):
        lam = rng.uniform(0.2, 3.0)
        q = int(rng.integers(1, 41))
        p = int(rng.choice(coprime_residues(q)))
        bound = 2.0 + 2.0 * lam
        E = rng.uniform(-bound, bound)
        vals = discriminant(lam, p, q, E, rng.random(32))
        ratio = (vals.max() - vals.min()) / max(1.0, abs(float(np.median(vals))))
        worst = max(worst, ratio)
        fails += ratio > 1e-9
    elapsed = time.perf_counter() - t0
    ok = fails == 0
    assert criterion(2, "discriminant independent of phase", ok,
                     f"50 instances x 32 phases, worst relative spread {worst:.2e} (limit 1e-9)",
                     elapsed, 5)
    assert ok and elapsed < 5


# ── 3. band structure ───────────────────────────────────────────────

def test_criterion_03_band_structure(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    problems = []
    n_fractions = 0
    for lam in (0.5, 1.0, 2.0):
        for p, q in reduced_fractions(40):
            n_fractions += 1
            e = band_edges(lam, p, q).edges
            if len(e) != q:
                problems.append((lam, p, q, "band count"))
                continue
            if np.any(e[:-1, 1] > e[1:, 0] + 1e-8):
                problems.append((lam, p, q, "overlapping interiors"))
            if q % 2 == 0 and max(abs(e[q // 2 - 1, 1]), abs(e[q // 2, 0])) > 1e-8:
                problems.append((lam, p, q, "central touching away from 0"))
            eig = periodic_eigenvalues(lam, p, q, rng.random(64)).ravel()
            inside = (eig[:, None] >= e[None, :, 0] - 1e-8) & (eig[:, None] <= e[None, :, 1] + 1e-8)
            if not inside.any(axis=1).all():
                problems.append((lam, p, q, "probe eigenvalue outside bands"))
    elapsed = time.perf_counter() - t0
    ok = not problems
    assert criterion(3, "q bands, disjoint interiors, touching at 0, probes inside", ok,
                     f"{n_fractions} (lambda, p/q) cases, {len(problems)} problems {problems[:3]}",
                     elapsed, 60)
    assert ok and elapsed < 60


# ── 4. IDS quantization ─────────────────────────────────────────────

def test_criterion_04_ids_quantization(criterion):
    t0 = time.perf_counter()
    edges = band_edges(1.0, 55, 89).edges
    js = np.linspace(1, 89, 10).round().astype(int)
    devs = []
    for j in js:
        E = edges[j - 1, 1] - 1e-6
        rep = fibered_rotation_number(OperatorParams(1.0, 55 / 89, 0.0, E), n_steps=20_000,
                                      n_phases=256)
        devs.append(abs(rep.ids - j / 89))
    elapsed = time.perf_counter() - t0
    ok = max(devs) <= 1e-4
    assert criterion(4, "ids = j/89 just inside band tops of 55/89", ok,
                     f"bands {list(map(int, js))}, worst |ids - j/89| {max(devs):.2e} (limit 1e-4)",
                     elapsed, 30)
    assert ok and elapsed < 30


# ── 5. Lyapunov exponent on the spectrum ────────────────────────────

def test_criterion_05_lyapunov_on_spectrum(criterion):
    t0 = time.perf_counter()
    worst = {}
    for lam in (2.0, 0.5):
        mids = 0.5 * band_edges(lam, 55, 89).edges.sum(axis=1)
        energies = mids[np.linspace(0, 88, 20).round().astype(int)]
        ests = lyapunov_sweep(lam, G, energies, n_steps=100_000, n_phases=8)
        target = max(0.0, math.log(lam))
        worst[lam] = max(abs(est.value - target) for est in ests)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 0.05
    assert criterion(5, "L = max(0, ln lambda) at band midpoints", ok,
                     f"worst |L - ln 2| {worst[2.0]:.2e}, worst |L| at 0.5 {worst[0.5]:.2e} (limit 0.05)",
                     elapsed, 60)
    assert ok and elapsed < 60


# ── 6. Thouless formula ─────────────────────────────────────────────

def thouless_energies(edges):
    """Five in-band quarter points and five energies off the approximant's spectrum."""
    idx = np.linspace(0, len(edges) - 1, 5).round().astype(int)
    inside = edges[idx, 0] + 0.25 * (edges[idx, 1] - edges[idx, 0])
    gaps = edges[1:, 0] - edges[:-1, 1]
    big = np.sort(np.argsort(gaps)[-3:])
    outside = np.concatenate([[edges[0, 0] - 1.0],
                              0.5 * (edges[big, 1] + edges[big + 1, 0]),
                              [edges[-1, 1] + 1.0]])
    return inside, outside


def test_criterion_06_thouless_formula(criterion):
    t0 = time.perf_counter()
    worst = {}
    for lam in (0.5, 2.0):
        bands = band_edges(lam, 55, 89)
        atoms = dos_atoms(bands)
        inside, outside = thouless_energies(bands.edges)
        res = [thouless_residual(OperatorParams(lam, G, 0.0, float(E)), atoms.positions,
                                 atoms.weights).residual for E in np.concatenate([inside, outside])]
        worst[lam] = max(res)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 0.05
    assert criterion(6, "L(E) = integral of ln|E - E'| dN", ok,
                     f"10 energies each, worst residual {worst[0.5]:.4f} (lambda 0.5), "
                     f"{worst[2.0]:.4f} (lambda 2) (limit 0.05)", elapsed, 60)
    assert ok and elapsed < 60


# ── 7. gap lower bound ──────────────────────────────────────────────

def test_criterion_07_gap_lower_bound(criterion):
    t0 = time.perf_counter()
    cf = expand(GOLDEN, 30)
    ns = [n for n, (_, q) in enumerate(cf.convergents) if q in (5, 8, 13, 21, 34)]
    failures = []
    for lam in (0.5, 1.0):
        for row in gap_bound_check(lam, cf, ns, eps=0.1):
            if not row.passed:
                failures.append(f"lambda={lam:g} q={row.q}: {row.min_gap:.3g} < {row.bound:.3g}")
    elapsed = time.perf_counter() - t0
    ok = not failures
    detail = "all bounded gaps above exp(-0.1 q) lambda^(q/2)" if ok else "; ".join(failures)
    assert criterion(7, "smallest bounded gap >= exp(-eps q) lambda^(q/2)", ok, detail, elapsed, 60)
    assert ok and elapsed < 60


# ── 8. duality of rational spectra ──────────────────────────────────

def test_criterion_08_spectral_duality(criterion):
    t0 = time.perf_counter()
    worst = max(spectra_duality_check(lam, p, q) for lam in (2.0, 3.0)
                for p, q in reduced_fractions(20))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8
    assert criterion(8, "Sigma(lambda) = lambda Sigma(1/lambda)", ok,
                     f"all p/q with q <= 20, worst Hausdorff distance {worst:.2e} (limit 1e-8)",
                     elapsed, 60)
    assert ok and elapsed < 60


# ── 9. localization ─────────────────────────────────────────────────

def test_criterion_09_localization_decay(criterion):
    t0 = time.perf_counter()
    op = TruncatedOperator(OperatorParams(3.0, G, 0.1), -750, 749)
    target = -math.log(3.0)
    good = 0
    slopes = []
    for pair in middle_states(op, 20):
        try:
            fit = decay_rate(pair)
        except NoDecayDetected:
            continue
        slopes.append(fit.slope)
        good += abs(fit.slope - target) <= 0.1 * abs(target) and fit.r2 >= 0.9
    elapsed = time.perf_counter() - t0
    ok = good >= 16
    assert criterion(9, "eigenvectors decay at rate ln 3", ok,
                     f"{good} of 20 states within 10% with r2 >= 0.9, slopes "
                     f"[{min(slopes):.3f}, {max(slopes):.3f}] (need 16)", elapsed, 120)
    assert ok and elapsed < 120


# ── 10. Green function and Poisson identity ─────────────────────────

def random_instance(rng):
    lam = rng.uniform(0.1, 3.0)
    bound = 2.0 + 2.0 * lam
    params = OperatorParams(lam, rng.random(), rng.random(), rng.uniform(-bound, bound))
    x1 = int(rng.integers(-50, 50))
    return params, (x1, x1 + int(rng.integers(0, 30)))


def test_criterion_10_green_function(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    errs, skipped = [], 0
    while len(errs) < 200:
        params, window = random_instance(rng)
        try:
            g = green_matrix(params, window)
        except NearSingularWindow:
            skipped += 1
            continue
        n = window[1] - window[0] + 1
        dense = np.linalg.inv(TruncatedOperator(params, *window).dense() - params.energy * np.eye(n))
        errs.append(np.max(np.abs(g - dense)) / np.max(np.abs(dense)))
    res = []
    while len(res) < 50:
        params, (x1, x2) = random_instance(rng)
        psi = formal_solution(params, x1, rng.normal(), rng.normal(), x2 - x1 + 2)
        try:
            res.append(poisson_residual(params, (x1, x2), psi))
        except NearSingularWindow:
            skipped += 1
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-8 and max(res) <= 1e-8
    assert criterion(10, "Green function by determinants; Poisson identity", ok,
                     f"200 windows worst relative error {max(errs):.2e}, 50 solutions worst "
                     f"residual {max(res):.2e} (limit 1e-8, {skipped} near-singular redrawn)",
                     elapsed, 20)
    assert ok and elapsed < 20


# ── 11. m-function ──────────────────────────────────────────────────

def test_criterion_11_m_function(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    free = m_iterate(0.0, G, 2j, rng.random(10), 200)
    err = float(np.max(np.abs(free.value - 1j * (1.0 + math.sqrt(2.0)))))
    inv = m_iterate(0.5, G, 1j, rng.random(100), 500).invariance_residual
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-10 and inv <= 1e-8
    assert criterion(11, "m-function limit and invariance", ok,
                     f"free error {err:.2e} (limit 1e-10), invariance residual {inv:.2e} (limit 1e-8)",
                     elapsed, 10)
    assert ok and elapsed < 10


# ── 12. cohomological equation ──────────────────────────────────────

def test_criterion_12_cohomological_solver(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    K = 128
    residuals = [cohomological_solve(FourierSeries.from_dict({1: 0.5, -1: 0.5}, K), G, K).residual]
    for _ in range(20):
        ks = np.arange(1, K + 1)
        pos = (rng.normal(size=K) + 1j * rng.normal(size=K)) * np.exp(-rng.uniform(0.1, 1.0) * ks)
        phi = FourierSeries(np.concatenate([np.conj(pos[::-1]), [rng.normal()], pos]))
        residuals.append(cohomological_solve(phi, G, K).residual)
    try:
        cohomological_solve(FourierSeries.from_dict({5: 0.1, -5: 0.1, 1: 0.2, -1: 0.2}, K), 2 / 5, K)
        raised = False
    except SmallDivisorOverflow:
        raised = True
    elapsed = time.perf_counter() - t0
    ok = max(residuals) <= 1e-6 and raised
    assert criterion(12, "small-divisor solver", ok,
                     f"21 inputs worst residual {max(residuals):.2e} (limit 1e-6), rational "
                     f"frequency raised: {raised}", elapsed, 10)
    assert ok and elapsed < 10


# ── 13. Herman bound ────────────────────────────────────────────────

def test_criterion_13_herman_bound(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(13)
    worst = math.inf
    for lam in (2.0, 3.0):
        bound = 2.0 + 2.0 * lam
        for E in rng.uniform(-bound, bound, size=10):
            for k in (10, 20, 50):
                rep = herman_bound_check(OperatorParams(lam, G, 0.0, float(E)), k)
                worst = min(worst, (rep.integral_estimate - k * math.log(lam)) / k)
    elapsed = time.perf_counter() - t0
    ok = worst >= -0.05
    assert criterion(13, "integral of ln|P_k| >= k ln lambda", ok,
                     f"60 cases, worst (estimate - k ln lambda)/k {worst:.2e} (limit -0.05)",
                     elapsed, 30)
    assert ok and elapsed < 30


# ── 14. gap counts and labels ───────────────────────────────────────

def test_criterion_14_gap_labels(criterion):
    t0 = time.perf_counter()
    counts, bad_labels = [], []
    for q in (8, 13, 21, 34):
        p, _ = golden_approximant(q)
        big = [g for g in gap_catalog(band_edges(0.5, p, q), G) if g.size > 1e-3]
        counts.append(len(big))
        bad_labels += [(q, g.index) for g in big if not g.label_dist < 1.0 / (2 * q)]
    elapsed = time.perf_counter() - t0
    ok = all(b >= a for a, b in zip(counts, counts[1:])) and not bad_labels
    assert criterion(14, "open gaps grow and carry labels k alpha", ok,
                     f"gap counts above 1e-3 {counts}, mislabelled {bad_labels}", elapsed, 60)
    assert ok and elapsed < 60
