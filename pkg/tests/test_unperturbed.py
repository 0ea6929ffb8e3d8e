import numpy as np
import pytest

from weylrec import exterior as ext
from weylrec.model import reference_system, sector_geometry
from weylrec.numerics import PathODEProblem, integrate_linear
from weylrec.unperturbed import (AsymptoticSeries, CompoundOperator, build_asymptotic, build_frobenius,
                                 build_unperturbed_weyl, check_nondegeneracy, nondegeneracy_all, integrate_compound)
from weylrec.weyl import WeylEvaluator


@pytest.fixture(scope="module", params=["reference_n2", "reference_n3"])
def spec(request):
    return reference_system(request.param)


def free_rhs(spec):
    A, b = spec.A, spec.b
    return lambda z: A / z + np.diag(b)


def test_frobenius_recursion(spec):
    frob = build_frobenius(spec)
    assert frob.recursion_residual(spec.A, spec.b) < 1e-12
    assert np.all(frob.tail < 1e-14)


def test_det_c_is_one(spec):
    frob = build_frobenius(spec)
    g = sector_geometry(spec.b)
    for s in g.sectors:
        r = np.linspace(1e-3, frob.radius, 25)
        z = r * np.exp(1j * np.linspace(s.start, s.end, 25))
        assert np.allclose(np.linalg.det(frob.evaluate(z, s)), 1.0, atol=1e-8)


def test_frobenius_solves_the_ode(spec):
    # propagate c(0.2) to c(0.9) along the positive axis
    frob = build_frobenius(spec)
    C0 = frob.evaluate(np.array(0.2))
    sol = integrate_linear(PathODEProblem(0.2, 0.9, C0.T, coef=free_rhs(spec)), [0.5, 0.9], _tight())
    assert np.allclose(np.swapaxes(sol.values, 1, 2), frob.evaluate(np.array([0.5, 0.9])), rtol=1e-9, atol=1e-11)


def test_compound_matches_wedge_of_columns(spec):
    frob = build_frobenius(spec)
    n = spec.n
    for m in range(1, n + 1):
        op = CompoundOperator(spec.without_potential(), m)
        cols = list(range(m))
        y0 = ext.wedge_columns_dense(frob.evaluate(np.array(0.3)), cols)
        vals = integrate_compound(op, [1.0], [0.0], y0[None, :], 0.3, 0.9, [0.9], _tight())
        expect = ext.wedge_columns_dense(frob.evaluate(np.array(0.9)), cols)
        assert np.allclose(vals[0, 0], expect, rtol=1e-9, atol=1e-11)


def _tight():
    from weylrec.numerics import IntegratorConfig
    return IntegratorConfig(rtol=1e-12, atol=1e-14)


def test_series_leading_term(spec):
    g = sector_geometry(spec.b)
    for s in g.sectors:
        ser = AsymptoticSeries.build(spec, s)
        U, err = ser.evaluate(np.array([200 * s.bisector]))
        assert np.allclose(U[0], s.f, atol=5e-3)
        assert err[0].max() < 1e-12


def test_series_satisfies_the_ode(spec):
    # e_k(z) = e^{z R_k} u_k(z) solves e' = (A/z + B) e
    s = sector_geometry(spec.b).sectors[0]
    ser = AsymptoticSeries.build(spec, s)
    z = 60 * s.bisector
    h = 1e-4
    E = lambda w: ser.evaluate(np.array([w]))[0][0] * np.exp(w * s.R)[None, :]
    dE = (E(z + h) - E(z - h)) / (2 * h)
    rhs = (spec.A / z + np.diag(spec.b)) @ E(z)
    assert np.allclose(dE, rhs, rtol=1e-6, atol=1e-8 * np.abs(E(z)).max())


def test_boundary_ray_deviation_decays_like_inverse_s():
    spec = reference_system("reference_n2")
    s = sector_geometry(spec.b).sectors[0]
    basis = build_asymptotic(spec, s, omega=np.exp(1j * s.start))
    assert basis.floor == 0.0
    for k in (1, 2):
        d20, d40 = basis.deviation([20.0, 40.0], k)
        assert 1.7 < d20 / d40 < 2.3


def test_wronskian_constant(spec):
    g = sector_geometry(spec.b)
    s = g.sectors[0]
    basis = build_asymptotic(spec, s, omega=np.exp(1j * s.start))
    # for n = 3 only one pair of exponents is balanced on a boundary ray
    w = basis.wronskian(np.linspace(max(basis.floor, 2.0), 39.0, 4))
    assert np.allclose(w, w[0], rtol=1e-6)
    assert np.isclose(w[0], s.det_f, rtol=1e-6)


def test_interior_floor_guards_contamination():
    spec = reference_system("reference_n2")
    s = sector_geometry(spec.b).sectors[0]
    basis = build_asymptotic(spec, s)
    assert basis.floor > 0
    with pytest.raises(ValueError):
        basis.scaled([basis.floor / 2])


def test_nondegeneracy_independent_of_matching_point(spec):
    g = sector_geometry(spec.b)
    frob = build_frobenius(spec, radius=2.0)
    for s in g.sectors:
        a = check_nondegeneracy(spec, s, 1.0, frob)
        b = check_nondegeneracy(spec, s, 2.0, frob)
        assert a.ok and b.ok
        assert np.allclose(a.values, b.values, rtol=1e-8)
    assert all(c.ok for c in nondegeneracy_all(spec))


def test_unperturbed_weyl_agrees_with_flag_solver(spec):
    g = sector_geometry(spec.b)
    for s in g.sectors[:2]:
        uw = build_unperturbed_weyl(spec, s)
        assert uw.residual < 1e-10
        # the connection is lower triangular by construction
        assert np.allclose(np.triu(uw.connection, 1), 0)
        rho = 1.6 * s.bisector * np.exp(0.2j)
        x = 0.5
        ev = WeylEvaluator(spec, s).unperturbed([x], [rho])
        assert np.allclose(uw.Psi0(x, rho), ev.Psi[0, 0], rtol=1e-8, atol=1e-10)
        assert np.isclose(np.linalg.det(uw.Psi0(x, rho)), s.det_f, rtol=1e-8)


def test_delta0_nonzero(spec):
    for s in sector_geometry(spec.b).sectors:
        uw = build_unperturbed_weyl(spec, s)
        assert np.all(np.abs(uw.delta0) > 1e-8)
