import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amo.cocycle import (OperatorParams, ScaledMat2, check_singular, determinant_P,
                         fibered_rotation_number, free_lyapunov, herman_bound_check,
                         log_det_P, lyapunov_exponent, rotation_number_of, rotation_sweep,
                         thouless_residual, transfer_matrix, transfer_product)
from amo.errors import SingularNode, ValidationError
from amo.rational_spectrum import band_edges, dos_atoms

G = (math.sqrt(5.0) - 1.0) / 2.0
FREE_L3 = math.log((3 + math.sqrt(5)) / 2)  # closed form: log of the larger eigenvalue of [[3,-1],[1,0]]


def naive_product(lam, alpha, E, x0, n):
    m = np.eye(2)
    for j in range(n):
        m = np.array([[E - 2 * lam * math.cos(2 * math.pi * (x0 + j * alpha)), -1.0], [1.0, 0.0]]) @ m
    return m


def dense_det(lam, alpha, theta, E, k):
    if k == 0:
        return 1.0
    h = np.diag(2 * lam * np.cos(2 * np.pi * (theta + np.arange(k) * alpha)))
    h += np.diag(np.ones(k - 1), 1) + np.diag(np.ones(k - 1), -1)
    return float(np.linalg.det(E * np.eye(k) - h))


# ── transfer matrices ───────────────────────────────────────────────

@pytest.mark.parametrize("lam,E,x,expected", [
    (0.0, 0.0, 0.37, [[0, -1], [1, 0]]),
    (1.0, 2.0, 0.0, [[0, -1], [1, 0]]),
    (0.5, 1.0, 0.25, [[1, -1], [1, 0]]),
])
def test_transfer_matrix_examples(lam, E, x, expected):
    m = transfer_matrix(OperatorParams(lam, G, 0.0, E), x)
    assert np.allclose(m.matrix(), expected, atol=1e-15)
    assert abs(m.det() - 1) < 1e-12


def test_unit_part_normalized():
    m = transfer_product(OperatorParams(2.0, G, 0.0, 0.3), 0.1, 500)
    assert np.max(np.abs(m.unit_part)) == pytest.approx(1.0)
    assert np.allclose(math.exp(m.log_scale) * m.unit_part / math.exp(m.log_scale), m.unit_part)


def test_product_of_one_is_the_matrix():
    p = OperatorParams(1.3, G, 0.0, 0.7)
    assert np.allclose(transfer_product(p, 0.2, 1).matrix(), transfer_matrix(p, 0.2).matrix())


def test_free_growth_rate_increment():
    p = OperatorParams(0.0, G, 0.0, 3.0)
    a, b = transfer_product(p, 0.0, 100), transfer_product(p, 0.0, 200)
    assert (b.log_scale - a.log_scale) / 100 == pytest.approx(FREE_L3, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(-4.0, 4.0), st.floats(0.0, 1.0), st.integers(1, 50), st.integers(1, 50))
def test_cocycle_additivity(lam, E, x, m, n):
    p = OperatorParams(lam, G, 0.0, E)
    whole = transfer_product(p, x, m + n)
    split = transfer_product(p, x + n * G, m) @ transfer_product(p, x, n)
    scale = math.exp(whole.log_scale)
    assert np.allclose(whole.matrix() / scale, split.matrix() / scale, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(-4.0, 4.0), st.floats(0.0, 1.0), st.integers(1, 40))
def test_product_matches_naive_multiplication(lam, E, x, n):
    ref = naive_product(lam, G, E, x, n)
    got = transfer_product(OperatorParams(lam, G, 0.0, E), x, n).matrix()
    assert np.allclose(got, ref, rtol=1e-9, atol=1e-9 * np.max(np.abs(ref)))


def test_long_products_stay_in_sl2():
    for n in (10, 10 ** 4, 10 ** 6):
        m = transfer_product(OperatorParams(3.0, G, 0.0, 0.5), 0.3, n)
        assert abs(m.det() - 1) <= 1e-9 * n
        assert math.isfinite(m.log_scale)


def test_scaled_from_matrix_rejects_non_sl2():
    with pytest.raises(ValidationError):
        ScaledMat2.from_matrix([[2.0, 0.0], [0.0, 2.0]])


# ── Lyapunov exponent ───────────────────────────────────────────────

def test_free_lyapunov_closed_form():
    est = lyapunov_exponent(OperatorParams(0.0, G, 0.0, 3.0), n_steps=100_000)
    assert est.value == pytest.approx(FREE_L3, abs=1e-4)
    assert free_lyapunov(3.0) == pytest.approx(FREE_L3, abs=1e-15)


@pytest.fixture(scope="module")
def mids_2():
    return [0.5 * (a + b) for a, b in band_edges(2.0, 55, 89).bands]


def test_lyapunov_supercritical_on_spectrum(mids_2):
    est = lyapunov_exponent(OperatorParams(2.0, G, 0.0, mids_2[30]), n_steps=100_000)
    assert abs(est.value - math.log(2)) <= 0.05
    assert est.value >= -est.spread


def test_lyapunov_subcritical_on_spectrum():
    mids = [0.5 * (a + b) for a, b in band_edges(0.5, 55, 89).bands]
    est = lyapunov_exponent(OperatorParams(0.5, G, 0.0, mids[30]), n_steps=100_000)
    assert abs(est.value) <= 0.05


def test_lyapunov_duality_of_exponents(mids_2):
    for E in mids_2[::22]:
        a = lyapunov_exponent(OperatorParams(2.0, G, 0.0, E), n_steps=20_000).value
        b = lyapunov_exponent(OperatorParams(0.5, G, 0.0, E / 2), n_steps=20_000).value
        assert abs(a - b - math.log(2)) <= 0.1


def test_lyapunov_needs_enough_steps():
    with pytest.raises(ValidationError):
        lyapunov_exponent(OperatorParams(1.0, G, 0.0, 0.0), n_steps=10)


# ── rotation number and IDS ─────────────────────────────────────────

def test_constant_rotation_hook():
    c, s = math.cos(2 * math.pi * 0.3), math.sin(2 * math.pi * 0.3)
    assert rotation_number_of(lambda x: (c, -s, s, c), G, n_steps=2000) == pytest.approx(0.3, abs=1e-12)


def test_ids_outside_spectrum():
    below = fibered_rotation_number(OperatorParams(0.5, G, 0.0, -3 - 2 * 0.5 - 1))
    above = fibered_rotation_number(OperatorParams(0.5, G, 0.0, 5.0))
    assert below.ids == 0 and above.ids == 1
    assert below.ids == 1 - 2 * below.rho


def test_ids_at_band_edges_rational():
    bands = band_edges(1.0, 55, 89).bands
    for j in (1, 17, 44, 71, 88):
        r = fibered_rotation_number(OperatorParams(1.0, 55 / 89, 0.0, bands[j - 1][1]), n_steps=20_000)
        assert r.ids == pytest.approx(j / 89, abs=1e-6)


def test_ids_free_closed_form():
    # lambda = 0: N(E) = 1 - arccos(E/2)/pi on [-2, 2]
    energies = np.linspace(-1.9, 1.9, 7)
    for E, r in zip(energies, rotation_sweep(0.0, G, energies, n_steps=20_000)):
        assert r.ids == pytest.approx(1 - math.acos(E / 2) / math.pi, abs=1e-3)


def test_ids_monotone():
    energies = np.linspace(-3.2, 3.2, 41)
    ids = [r.ids for r in rotation_sweep(1.0, G, energies, n_steps=5000, n_phases=4)]
    assert all(b >= a - 1e-3 for a, b in zip(ids, ids[1:]))
    assert all(0 <= v <= 1 for v in ids)


def test_rotation_rejects_complex_energy():
    with pytest.raises(ValidationError):
        fibered_rotation_number(OperatorParams(1.0, G, 0.0, 1 + 1j))


# ── determinants P_k ────────────────────────────────────────────────

def test_P_small_cases():
    p = OperatorParams(1.5, G, 0.2, 0.4)
    assert determinant_P(p, 0) == 1.0
    assert determinant_P(p, 1) == pytest.approx(0.4 - 3.0 * math.cos(2 * math.pi * 0.2))
    assert determinant_P(OperatorParams(0.0, G, 0.0, 1.0), 2) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 1), st.floats(0, 1), st.floats(-5, 5), st.integers(0, 12))
def test_P_equals_dense_determinant(lam, alpha, theta, E, k):
    ref = dense_det(lam, alpha, theta, E, k)
    got = determinant_P(OperatorParams(lam, alpha, theta, E), k)
    assert got == pytest.approx(ref, rel=1e-8, abs=1e-9)


def test_P_matches_transfer_entry():
    p = OperatorParams(2.0, G, 0.3, 0.1)
    for k in (5, 30, 200):
        sign, logabs = determinant_P(p, k, log_scaled=True)
        m = transfer_product(p, p.theta, k)
        entry = m.matrix()[0, 0]
        assert sign == np.sign(entry)
        assert logabs == pytest.approx(math.log(abs(entry)), rel=1e-8)


def test_log_det_vectorized_record():
    th = np.array([0.1, 0.2])
    (s, l), recs = log_det_P(1.0, G, th, 0.5, 6, record=[3, 6])
    assert np.allclose(recs[1][1], l)
    for t, (sign, val) in zip(th, zip(*recs[0])):
        assert sign * math.exp(val) == pytest.approx(dense_det(1.0, G, t, 0.5, 3))


# ── Herman's bound ──────────────────────────────────────────────────

def test_herman_supercritical():
    rep = herman_bound_check(OperatorParams(2.0, G, 0.0, 0.0), 20)
    assert rep.passed
    assert rep.bound == pytest.approx(20 * math.log(2))


def test_herman_free_is_vacuous():
    rep = herman_bound_check(OperatorParams(0.0, G, 0.0, 1.0), 3)
    assert rep.bound == -math.inf and rep.passed


def test_herman_single_step_closed_form():
    rep = herman_bound_check(OperatorParams(3.0, G, 0.0, 10.0), 1)
    assert rep.integral_estimate == pytest.approx(math.log(9), abs=1e-12)


def test_herman_zero_at_node_is_jittered():
    # k = 1, E = 0: P_1 vanishes at theta = 1/4, which is a grid node
    rep = herman_bound_check(OperatorParams(2.0, G, 0.0, 0.0), 1, n_quad=256)
    assert rep.jittered
    assert math.isfinite(rep.integral_estimate)
    assert rep.integral_estimate == pytest.approx(math.log(2), abs=0.02)


# ── Thouless formula ────────────────────────────────────────────────

def test_thouless_outside_spectrum():
    atoms = dos_atoms(band_edges(2.0, 55, 89))
    rep = thouless_residual(OperatorParams(2.0, G, 0.0, 5.0), atoms.positions, atoms.weights)
    assert rep.residual <= 0.05


def test_thouless_in_band_subcritical():
    bl = band_edges(0.5, 55, 89)
    atoms = dos_atoms(bl)
    a, b = bl.bands[44]
    rep = thouless_residual(OperatorParams(0.5, G, 0.0, a + 0.25 * (b - a)), atoms.positions, atoms.weights)
    assert abs(rep.lyapunov) <= 0.05
    assert rep.residual <= 0.05


def test_thouless_single_atom():
    rep = thouless_residual(OperatorParams(0.0, G, 0.0, 3.0), [0.5], [1.0])
    assert rep.residual == pytest.approx(abs(FREE_L3 - math.log(2.5)), abs=1e-14)


def test_thouless_atom_on_energy_is_flagged():
    rep = thouless_residual(OperatorParams(0.0, G, 0.0, 3.0), [3.0, 0.0], [0.5, 0.5])
    assert rep.excluded_atoms == (0,)
    with pytest.raises(SingularNode):
        check_singular(rep)
