import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amo.arithmetic import GOLDEN, expand
from amo.cocycle import OperatorParams
from amo.errors import CoincidentNodes, PreconditionViolated
from amo.rational_spectrum import band_edges
from amo.trig_estimates import (lagrange_blowup_check, lagrange_interpolate, lnsin_partial_sum,
                                log_sin_sum_irrational, log_sin_sum_rational, q_polynomial,
                                rat0_identity, shifted_sum_check, uniformity_measure)

G = (math.sqrt(5.0) - 1.0) / 2.0
LN2 = math.log(2.0)


# ── rational sums ───────────────────────────────────────────────────

def test_rat0_fifths():
    chk = rat0_identity(2, 5)
    assert chk.closed_form == pytest.approx(-4 * LN2 + math.log(5))
    assert chk.closed_form == pytest.approx(-1.16315, abs=1e-5)
    assert chk.deviation <= 1e-10


def test_rat0_halves():
    chk = rat0_identity(1, 2)
    assert chk.direct == pytest.approx(0.0, abs=1e-15)
    assert chk.closed_form == pytest.approx(0.0, abs=1e-15)


def test_rat0_high_precision():
    for q in (7, 31, 50):
        chk = rat0_identity(3 if q % 3 else 1, q, dps=50)
        assert chk.deviation <= mpmath.mpf(10) ** -30


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 500), st.integers(1, 10 ** 6))
def test_rat0_all_denominators(q, seed):
    p = seed % q or 1
    while math.gcd(p, q) != 1:
        p = p % q + 1
    assert rat0_identity(p, q).deviation <= 1e-9 * q


def mp_excluded_sum(x, p, q):
    with mpmath.workprec(256):
        terms = [abs(mpmath.sin(2 * mpmath.pi * (mpmath.mpf(x) + mpmath.mpf(k * p) / (2 * q))))
                 for k in range(1, q + 1)]
        k0 = min(range(q), key=lambda i: terms[i])
        return float(mpmath.fsum(mpmath.log(t) for i, t in enumerate(terms) if i != k0))


def test_rat1_bounds_large_q():
    rng = np.random.default_rng(5)
    q = 500
    for _ in range(20):
        p = int(rng.integers(1, q))
        while math.gcd(p, q) != 1:
            p += 1
        x = float(rng.random())
        rep = log_sin_sum_rational(x, p, q)
        assert rep.passed
        assert math.log(q) + math.log(2 / math.pi) < rep.deviation <= math.log(q) + 1e-12
    rep = log_sin_sum_rational(0.123, 7, 500)
    assert rep.total == pytest.approx(mp_excluded_sum(0.123, 7, 500), abs=1e-9)


def test_rat1_tie_flagged_lowest_index():
    # x = 0 makes k = q a zero; x = 1/(4q) symmetric ties are possible
    rep = log_sin_sum_rational(0.25 / 3, 1, 3)
    assert rep.k0 >= 1
    sines = [abs(math.sin(2 * math.pi * (0.25 / 3 + k / 6))) for k in range(1, 4)]
    assert rep.k0 == 1 + int(np.argmin(sines))


def test_rat1_single_zero_is_excluded():
    # x = 0, p/q = 1/2: the k = 2 factor is sin(pi) = 0 and is the excluded one
    rep = log_sin_sum_rational(0.0, 1, 2)
    assert rep.k0 == 2
    assert rep.total == pytest.approx(0.0, abs=1e-15)


# ── irrational sums ─────────────────────────────────────────────────

def test_irrational_golden_89():
    cf = expand(GOLDEN, 15)
    assert cf.qs[10] == 89
    rep = log_sin_sum_irrational(0.37, cf, 10)
    assert rep.empirical_C <= 5


def test_irrational_trivial_scale():
    rep = log_sin_sum_irrational(0.37, expand(GOLDEN, 15), 1)
    assert rep.total == 0.0 and rep.deviation == 0.0


def test_irrational_excludes_vanishing_term():
    cf = expand(GOLDEN, 15)
    x = -5 * G / 2  # k = 5 term vanishes exactly up to rounding
    rep = log_sin_sum_irrational(x, cf, 8)
    assert rep.k0 == 5
    assert math.isfinite(rep.total)


# ── shifted sums ────────────────────────────────────────────────────

def test_shifted_zero_shifts_reduce_to_irrational():
    cf = expand(GOLDEN, 25)
    q_n = cf.qs[8]
    rep = shifted_sum_check(0.37, cf, 8, 12, 1, np.zeros(q_n, dtype=int))
    ref = log_sin_sum_irrational(0.37, cf, 8)
    assert rep.deviation == pytest.approx(ref.deviation, abs=1e-12)


def test_shifted_precondition_small_r():
    cf = expand(GOLDEN, 25)
    with pytest.raises(PreconditionViolated):
        shifted_sum_check(0.37, cf, 8, 10, 2, np.zeros(cf.qs[8], dtype=int))


def test_shifted_passes_with_room():
    cf = expand(GOLDEN, 25)
    rng = np.random.default_rng(2)
    shifts = rng.integers(-1, 2, size=cf.qs[8])
    rep = shifted_sum_check(0.37, cf, 8, 16, 2, shifts, C=10.0)
    assert rep.passed


def test_shifted_precondition_large_ell():
    cf = expand(GOLDEN, 25)
    n, r = 8, 16
    ell = cf.qs[r + 1] // (5 * cf.qs[n])
    with pytest.raises(PreconditionViolated):
        shifted_sum_check(0.37, cf, n, r, ell, np.zeros(cf.qs[n], dtype=int))


# ── Fourier series of ln|sin| ───────────────────────────────────────

def test_lnsin_series_at_pi():
    for n in (10, 100, 1001):
        value, tail = lnsin_partial_sum(math.pi, n)
        assert abs(value - 0.0) <= tail + 1e-14


# ── uniformity ──────────────────────────────────────────────────────

def brute_uniformity(thetas, n_grid=200001):
    c = np.cos(2 * np.pi * np.asarray(thetas))
    z = np.linspace(-1, 1, n_grid)
    best = -np.inf
    for j in range(len(c)):
        others = np.delete(c, j)
        val = np.sum(np.log(np.abs(z[:, None] - others[None, :])), axis=1) - np.sum(np.log(np.abs(c[j] - others)))
        best = max(best, val.max())
    return best / (len(c) - 1)


def test_uniformity_two_nodes_closed_form():
    th = [0.1, 0.3]
    c0, c1 = np.cos(2 * np.pi * np.array(th))
    ref = max(math.log(max(abs(-1 - c1), abs(1 - c1)) / abs(c0 - c1)),
              math.log(max(abs(-1 - c0), abs(1 - c0)) / abs(c0 - c1)))
    assert uniformity_measure(th).epsilon_measured == pytest.approx(ref, abs=1e-12)


def test_uniformity_matches_dense_grid():
    rng = np.random.default_rng(9)
    th = rng.random(9) * 0.5
    got = uniformity_measure(th).epsilon_measured
    ref = brute_uniformity(th)
    assert got >= ref - 1e-12
    assert got == pytest.approx(ref, abs=1e-4)


def test_uniformity_chebyshev_nodes_are_small():
    q = 20
    cheb = uniformity_measure(np.arange(q) / (2 * q)).epsilon_measured
    rng = np.random.default_rng(1)
    rand = uniformity_measure(rng.random(q) * 0.5).epsilon_measured
    assert cheb < rand
    assert cheb < 0.2


def test_uniformity_near_coincident_grows():
    base = [0.05, 0.15, 0.3, 0.4]
    eps = [uniformity_measure(base + [0.15 + d]).epsilon_measured for d in (1e-2, 1e-4, 1e-6)]
    assert eps[0] < eps[1] < eps[2]


def test_uniformity_coincident_raises():
    with pytest.raises(CoincidentNodes):
        uniformity_measure([0.1, 0.2, -0.1])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.001, 0.499), min_size=3, max_size=8, unique=True))
def test_uniformity_depends_only_on_cosines(th):
    th = np.array(th)
    if np.min(np.diff(np.sort(np.cos(2 * np.pi * th)))) < 1e-6:
        return
    a = uniformity_measure(th).epsilon_measured
    b = uniformity_measure(-th[::-1]).epsilon_measured
    c = uniformity_measure(1 + th).epsilon_measured
    assert b == pytest.approx(a, abs=1e-9) and c == pytest.approx(a, abs=1e-9)


# ── Lagrange interpolation ──────────────────────────────────────────

def test_two_point_interpolation_exact():
    nodes = [0.3, -0.5]
    vals = [2 * 0.3 + 1, 2 * -0.5 + 1]
    for z in (-1.0, 0.0, 0.7):
        assert lagrange_interpolate(vals, nodes, z) == pytest.approx(2 * z + 1, abs=1e-14)


def test_q_polynomial_interpolates_exactly():
    p = OperatorParams(2.0, G, 0.0, 0.4)
    k = 6
    z_nodes = np.cos(np.pi * (np.arange(k + 1) + 0.5) / (k + 1))
    vals = q_polynomial(p, k, z_nodes)
    for z in (-0.9, 0.1, 0.8):
        assert lagrange_interpolate(vals, z_nodes, z) == pytest.approx(q_polynomial(p, k, [z])[0], rel=1e-9)


def _roots_of_q(p, k):
    f = lambda t: q_polynomial(p, k, np.cos(2 * np.pi * t))
    th = np.linspace(0, 0.5, 20001)
    vals = f(th)
    idx = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    a, b, fa = th[idx], th[idx + 1], vals[idx]
    for _ in range(60):
        m = 0.5 * (a + b)
        fm = f(m)
        left = np.sign(fm) == np.sign(fa)
        a, fa, b = np.where(left, m, a), np.where(left, fm, fa), np.where(left, b, m)
    return 0.5 * (a + b)


def test_lagrange_singular_construction():
    E = 0.5 * sum(band_edges(2.0, 55, 89).bands[44])
    p = OperatorParams(2.0, G, 0.0, E)
    k, eps = 40, 0.2
    roots = _roots_of_q(p, k)
    assert len(roots) == k
    nodes = np.concatenate([roots, [roots[20] + 1e-6]])
    rep = lagrange_blowup_check(p, k, nodes, eps, eps)
    assert rep.status == "Applicable"
    assert rep.epsilon_measured >= eps - 0.1
    assert rep.passed


def test_lagrange_not_applicable():
    p = OperatorParams(2.0, G, 0.0, 0.3)
    rep = lagrange_blowup_check(p, 3, [0.05, 0.15, 0.3, 0.45], 5.0, 0.1)
    assert rep.status == "NotApplicable"
