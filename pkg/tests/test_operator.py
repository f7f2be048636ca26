import math

import numpy as np
import pytest

import oracle as O
from conftest import j2c
from torus_ma import algebra as alg
from torus_ma.cone import gauduchon_normalize
from torus_ma.fields import MetricField, MetricSpec, TorusGrid, random_scalar, sample_metric
from torus_ma.operator import (classical_ma_ratio, lambda_invariant, lambda_of_phi,
                               lambda_tilde_eigen, linearize_apply, linearize_apply_forms,
                               ma_state, ma_value, principal_part_apply, rho_lambda_tilde,
                               scalar_derivatives)
from torus_ma.selftest import fd_order, linearize_checks

H2 = np.array([[1.0, 0.2j], [-0.2j, 1.5]])


@pytest.fixture(scope="module")
def states():
    """Non-trivial states: n=2 perturbed, n=3 perturbed Gauduchon."""
    out = {}
    g2 = TorusGrid(2, 8)
    w2 = sample_metric(g2, MetricSpec("perturbed", H=tuple(map(tuple, H2)), seed=1, amplitude=0.1))
    out[2] = (w2, random_scalar(g2, 2, 2, 0.05))
    g3 = TorusGrid(3, 4)
    w3 = gauduchon_normalize(sample_metric(g3, MetricSpec("perturbed", seed=1, amplitude=0.1))).metric
    out[3] = (w3, random_scalar(g3, 2, 1, 0.05))
    return out


def test_lambda_of_zero_and_gauge(states):
    for n, (w, phi) in states.items():
        L0 = lambda_of_phi(w, np.zeros(w.grid.shape))
        assert (L0 - w.power(n - 1)).norm_inf() == 0
        L1 = lambda_of_phi(w, phi)
        L2 = lambda_of_phi(w, phi + 3.7)
        assert (L1 - L2).norm_inf() < 1e-13 * L1.norm_inf()
        assert L1.realness_defect() < 1e-12


def test_lambda_constant_n2():
    g = TorusGrid(2, 8)
    w = MetricField(g, H2)
    phi = random_scalar(g, 4, 2, 0.1)
    _, _, ddb = scalar_derivatives(g, phi)
    expect = 1j * (H2 + ddb).reshape(g.shape + (4,))
    np.testing.assert_allclose(lambda_of_phi(w, phi).data, expect, atol=1e-13)


def test_ma_value_examples(states):
    for n, (w, phi) in states.items():
        st0 = ma_state(w, np.zeros(w.grid.shape))
        np.testing.assert_allclose(ma_value(st0), 1.0, atol=1e-13)
        w2 = MetricField(w.grid, 2.5 * w.H)
        np.testing.assert_allclose(ma_value(ma_state(w2, np.zeros(w.grid.shape))), 1.0, atol=1e-13)
        C = ma_value(ma_state(w, phi))
        assert np.all(C > 0)
        # root really is a root
        st = ma_state(w, phi)
        idx = (1,) * (2 * n)
        gm = alg.MetricPoint(n, st.gamma[idx])
        np.testing.assert_allclose(alg.power(gm.form, n - 1).coeffs, st.Lam.data[idx], atol=1e-10)


def test_gauge_invariance(states):
    for n, (w, phi) in states.items():
        a = ma_value(ma_state(w, phi))
        b = ma_value(ma_state(w, phi + 12.5))
        assert np.max(np.abs(a - b)) < 1e-13


def test_positivity_failure_reports_point():
    g = TorusGrid(2, 8)
    w = MetricField.constant(g)
    phi = 8.0 * np.cos(g.coords()[0]) * np.ones(g.shape)
    with pytest.raises(alg.PositivityError) as e:
        ma_state(w, phi)
    assert e.value.min_eigenvalue < 0 and len(e.value.where) == 4


def test_classical_n2_against_reference(frozen):
    fz = frozen["operator"]["classical_n2"]
    g = TorusGrid(2, fz["N"])
    w = MetricField(g, j2c(fz["H"]))
    phi = random_scalar(g, fz["phi_seed"], fz["phi_bandlimit"], fz["phi_amplitude"])
    C = ma_value(ma_state(w, phi))
    for idx, v in zip(fz["points"], fz["values"]):
        assert abs(C[tuple(idx)] - v) < 1e-12
    assert abs(C.mean() - fz["mean"]) < 1e-12
    # live reference and the library's own direct formula
    assert np.max(np.abs(C - O.classical_cy_n2(j2c(fz["H"]), phi))) < 1e-12
    assert np.max(np.abs(C - classical_ma_ratio(w, phi))) < 1e-12


def test_lambda_tilde_reference(frozen):
    n = 3
    g = TorusGrid(n, 4)
    w = MetricField.constant(g)
    for case in frozen["operator"]["lambda_tilde"]:
        R = np.broadcast_to(np.diag(case["rho"]).astype(complex), g.shape + (n, n)).copy()
        ltA = lambda_tilde_eigen(w, R)
        _, ltB = lambda_invariant(w, R)
        for lt in (ltA, ltB):
            np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(lt[(0,) * 6])), np.sort(case["lt"]),
                                       rtol=1e-12)
    R = np.broadcast_to(np.eye(n, dtype=complex), g.shape + (n, n)).copy()
    np.testing.assert_allclose(lambda_tilde_eigen(w, R)[(0,) * 6], 0.5 * np.eye(n), atol=1e-14)


def test_trivial_point_kaehler():
    for n in (2, 3, 4):
        N = 4
        g = TorusGrid(n, N)
        H = np.diag(np.arange(1.0, n + 1))
        w = MetricField(g, H)
        st = ma_state(w, np.zeros(g.shape))
        R, lam, ltA, ltB = rho_lambda_tilde(st)
        idx = (0,) * (2 * n)
        np.testing.assert_allclose(R[idx], math.factorial(n - 1) * H, rtol=1e-12)
        np.testing.assert_allclose(ltA[idx], math.factorial(n - 2) * H, rtol=1e-12)
        np.testing.assert_allclose(ltB[idx], math.factorial(n - 2) * H, rtol=1e-12)


def test_two_paths_random_states(states):
    for n, (w, phi) in states.items():
        R, lam, ltA, ltB = rho_lambda_tilde(ma_state(w, phi))
        assert np.max(np.abs(ltA - ltB)) < 1e-9 * np.max(np.abs(ltA))
        assert np.min(np.linalg.eigvalsh(ltA)) > 0


def test_linearization_kaehler_closed_form():
    for n, N in ((2, 8), (3, 4)):
        g = TorusGrid(n, N)
        H = np.eye(n) + 0.3 * (np.eye(n, k=1) - np.eye(n, k=-1)) * 1j
        w = MetricField(g, H)
        st = ma_state(w, np.zeros(g.shape))
        h = random_scalar(g, 5, 2, 1.0)
        _, _, ddb = scalar_derivatives(g, h)
        lap = np.real(np.einsum("ba,...ab->...", np.linalg.inv(H), ddb))
        expect = lap / (n - 1)
        assert np.max(np.abs(linearize_apply(st, h) - expect)) < 1e-10 * np.max(np.abs(expect))
        assert np.max(np.abs(principal_part_apply(st, h) - expect)) < 1e-10 * np.max(np.abs(expect))


def test_linearization_basic(states):
    for n, (w, phi) in states.items():
        st = ma_state(w, phi)
        g = w.grid
        assert np.max(np.abs(linearize_apply(st, np.full(g.shape, 2.0)))) < 1e-13
        assert np.max(np.abs(principal_part_apply(st, np.full(g.shape, 2.0)))) < 1e-13
        h1, h2 = random_scalar(g, 7, 2, 1.0), random_scalar(g, 8, 2, 1.0)
        lin = linearize_apply(st, 2 * h1 - h2)
        assert np.max(np.abs(lin - 2 * linearize_apply(st, h1) + linearize_apply(st, h2))) < 1e-12
        a, b = linearize_apply(st, h1), linearize_apply_forms(st, h1)
        assert np.max(np.abs(a - b)) < 1e-10 * np.max(np.abs(a))
        p1, p2 = principal_part_apply(st, h1, both=True)
        assert np.max(np.abs(p1 - p2)) < 1e-9 * np.max(np.abs(p1))


def test_finite_difference_order(states):
    for n, (w, phi) in states.items():
        st = ma_state(w, phi)
        h = random_scalar(w.grid, 9, 2, 1.0)
        slope, errs = fd_order(lambda x: ma_state(st.bg, x), phi, h, eps=(1e-2, 1e-3, 1e-4))
        assert slope >= 1.9, (n, slope, errs)


def test_pointwise_trace_identity(states):
    rng = np.random.default_rng(0)
    for n, (w, phi) in states.items():
        st = ma_state(w, phi)
        _, _, ddb = scalar_derivatives(w.grid, random_scalar(w.grid, 3, 2, 1.0))
        for _ in range(20):
            idx = tuple(int(i) for i in rng.integers(0, w.grid.N, size=2 * n))
            gam = alg.MetricPoint(n, st.gamma[idx])
            a = alg.PointForm(n, 1, 1, 1j * ddb[idx].reshape(-1))
            lhs = alg.inner_product(w.point(idx), gam.form, a) / st.Cval[idx]
            rhs = math.factorial(n - 1) * alg.lefschetz_contract(alg.MetricPoint(n, st.rho[idx]), a)
            assert abs(lhs - rhs) < 1e-10 * max(1, abs(rhs))


def test_high_frequency_probe():
    g = TorusGrid(3, 8)
    wbig = gauduchon_normalize(sample_metric(g, MetricSpec("perturbed", seed=1, amplitude=0.1))).metric
    st = ma_state(wbig, random_scalar(g, 2, 1, 0.05))
    x = g.coords()
    ratios, princ = [], []
    for k in (1, 2, 3):
        h = np.cos(k * (x[0] + x[3])) * np.ones(g.shape)
        lin = linearize_apply(st, h)
        pp = st.Cval * principal_part_apply(st, h)
        ratios.append(np.max(np.abs(lin - pp)) / (np.max(np.abs(h)) * k))
        princ.append(np.max(np.abs(pp)))
    # first-order remainder grows at most linearly while the principal part grows quadratically
    assert max(ratios) < 3 * min(ratios)
    assert princ[2] / princ[0] > 6


def test_linearize_suite_passes():
    for c in linearize_checks(cases=((2, 8),)):
        assert c.passed, c
