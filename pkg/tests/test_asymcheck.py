import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from weylrec.asymcheck import (d_diagonal, d_exact, qhat, qhat_o, qtilde, qtilde_membership, large_rho_residual,
                               write_residual_csv)
from weylrec.model import reference_system

CUBE = np.exp(2j * np.pi * np.arange(3) / 3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3, 3), elements=st.floats(-5, 5)))
def test_commutator_preimage(parts):
    q = parts[0] + 1j * parts[1]
    np.fill_diagonal(q, 0)
    X = qhat_o(q, CUBE)
    B = np.diag(CUBE)
    assert np.allclose(B @ X - X @ B, -q, atol=1e-12)
    assert np.allclose(np.diag(X), 0)


def test_commutator_preimage_n2():
    q = np.array([[0, 2.0], [3.0, 0]])
    assert np.allclose(qhat_o(q, [1, -1]), [[0, -1.0], [1.5, 0]])


def test_d_by_hand(ref2):
    # qo_12 = -0.025 x e^-x, qo_21 = 0.025 x^2 e^-x; [qo, A]_11 = qo_12 - 0.09 qo_21
    # d_1(0) = -0.025 * Gamma(1) - 0.00225 * Gamma(2)
    d0 = d_exact(ref2, 0.0)
    assert np.allclose(d0, [-0.02725, 0.02725], atol=1e-15)
    x = 1.3
    by_hand = -0.025 * np.exp(-x) - 0.00225 * (x + 1) * np.exp(-x)
    assert np.isclose(d_exact(ref2, x)[0], by_hand, rtol=1e-12)


@pytest.mark.parametrize("name", ["reference_n2", "reference_n3"])
def test_quadrature_matches_closed_form(name):
    spec = reference_system(name)
    for x in (0.05, 0.5, 1.0, 4.0):
        val, err = d_diagonal(spec, x)
        assert np.allclose(val, d_exact(spec, x), atol=1e-11)
        assert err < 1e-10
        coarse, _ = d_diagonal(spec, x, tol=2e-12)
        assert np.abs(coarse - val).max() < 1e-8
    assert np.allclose(d_exact(spec, [0.0]).sum(axis=-1), 0, atol=1e-15)


def test_d_tail_monotone(ref2):
    xs = np.linspace(0.5, 30, 40)
    mag = np.abs(d_exact(ref2, xs)[:, 0])
    assert np.all(np.diff(mag) < 0)


def test_zero_potential(free2):
    val, err = d_diagonal(free2, 1.0)
    assert np.array_equal(val, np.zeros(2)) and err == 0.0
    assert np.allclose(qhat(free2, 1.0), 0)
    assert qtilde_membership(free2).ok


def test_qtilde_matches_finite_difference(ref3):
    A = ref3.A
    for x in (0.3, 1.0, 2.5):
        h = 1e-5
        dq = (qhat(ref3, x + h) - qhat(ref3, x - h)) / (2 * h)
        qh = qhat(ref3, x)
        assert np.allclose(qtilde(ref3, x), dq + (qh @ A - A @ qh) / x, atol=1e-8)


def test_membership_reference(ref2):
    m = qtilde_membership(ref2)
    assert not m.in_l1
    sing = {(e.i, e.j): e.singular for e in m.entries}
    assert np.isclose(sing[(0, 1)], -0.004905)
    assert np.isclose(sing[(1, 0)], 0.0545)
    assert len(m.failures()) == 2


def test_membership_singularity_visible_numerically(ref2):
    # x q~(x) tends to the reported coefficient
    x = 1e-6
    assert np.isclose(x * qtilde(ref2, x)[0, 1], -0.004905, rtol=1e-3)


def test_membership_cancelling_system():
    spec = reference_system("cancelling_n2")
    m = qtilde_membership(spec)
    assert np.allclose(m.d0, 0, atol=1e-15)
    assert m.ok
    assert all(np.isfinite(e.regular_l1) for e in m.entries)


@pytest.fixture(scope="module")
def residuals(ref2):
    return large_rho_residual(ref2, [0.5, 1.0, 2.0], np.exp(1j * np.pi / 4))


def test_offdiagonal_residual_decays(residuals):
    for r in residuals:
        assert r.decreasing
        assert r.passes(0.05)
        # o(1) with a roughly 1/|rho| rate
        assert 1.5 < r.offdiag[-2] / r.offdiag[-1] < 3.0


def test_diagonal_part_bounded(residuals):
    for r in residuals:
        assert np.all(np.isfinite(r.diag))
        assert r.diag.max() < 10 * r.qhat_norm + 1.0


def test_spectral_map_offdiagonal_limit(residuals):
    # rho (P - I) has the same off-diagonal limit
    for r in residuals:
        assert np.all(np.diff(r.p_offdiag) < 0)
        assert r.p_offdiag[-1] < 0.1 * r.qhat_norm


def test_residual_csv(tmp_path, residuals):
    path = tmp_path / "r.csv"
    write_residual_csv(path, residuals)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x", "ray_angle", "abs_rho", "offdiag_norm", "diag_norm", "p_offdiag_norm", "qhat_norm"]
    assert len(rows) == 1 + 3 * 4
    assert float(rows[1][1]) == pytest.approx(np.pi / 4)
