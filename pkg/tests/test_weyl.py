import numpy as np
import pytest

from weylrec.model import reference_system, sector_geometry
from weylrec.numerics import IntegratorConfig, PathODEProblem, integrate_linear
from weylrec.weyl import SingularCharacteristicError, WeylConfig, WeylEvaluator, weyl_matrix

XS = np.array([0.25, 0.5, 1.0, 2.0])


@pytest.fixture(scope="module", params=["reference_n2", "reference_n3"])
def spec(request):
    return reference_system(request.param)


def rhos_for(sector, radii=(0.5, 3.0, 12.0)):
    return np.array([r * sector.bisector * np.exp(0.15j) for r in radii])


def full_rhs(spec, rho):
    A, b = spec.A, spec.b
    return lambda x: A / x.real + spec.potential(float(x.real)) + rho * np.diag(b)


def test_columns_solve_the_system(spec):
    s = sector_geometry(spec.b).sectors[0]
    rho = 2.0 * s.bisector
    ev = WeylEvaluator(spec, s)
    res = ev.evaluate([0.5, 1.5], [rho])
    P0, P1 = res.Psi[0, 0], res.Psi[1, 0]
    sol = integrate_linear(PathODEProblem(0.5, 1.5, P0.T, coef=full_rhs(spec, rho)), [1.5],
                           IntegratorConfig(rtol=1e-12, atol=1e-14))
    scale = np.abs(P1).max(axis=0)
    assert np.all(np.abs(sol.values[0].T - P1).max(axis=0) / scale < 1e-7)


def test_determinant_equals_det_f(spec):
    for s in sector_geometry(spec.b).sectors:
        res = WeylEvaluator(spec, s).evaluate(XS, rhos_for(s))
        assert np.allclose(np.linalg.det(res.scaled), s.det_f, rtol=1e-7)
        assert np.all(res.residual < 1e-8)


def test_characteristic_functions_x_independent(spec):
    for s in sector_geometry(spec.b).sectors:
        d = WeylEvaluator(spec, s).evaluate(XS, rhos_for(s)).delta
        assert np.allclose(d, d[:1], rtol=1e-6)
        assert np.allclose(d[..., 0], 1.0)


def test_free_system_matches_unperturbed_path(spec):
    s = sector_geometry(spec.b).sectors[1]
    free = spec.without_potential()
    a = WeylEvaluator(free, s).evaluate(XS, rhos_for(s))
    b = WeylEvaluator(spec, s).unperturbed(XS, rhos_for(s))
    assert np.array_equal(a.scaled, b.scaled)


def test_perturbation_coordinates(spec):
    s = sector_geometry(spec.b).sectors[0]
    full, free = WeylEvaluator(spec, s).perturbation(XS, rhos_for(s))
    direct = WeylEvaluator(spec, s).evaluate(XS, rhos_for(s))
    assert np.allclose(full.scaled, direct.scaled, atol=1e-9)
    assert np.allclose(full.gamma, s.f.T @ (full.scaled - free.scaled), atol=1e-12)


def test_first_order_in_amplitude():
    spec = reference_system("reference_n2")
    s = sector_geometry(spec.b).sectors[0]
    rhos = rhos_for(s)
    base = WeylEvaluator(spec, s).decaying_flags(XS, rhos, with_potential=False)[1]
    diffs = []
    for eps in (1e-2, 1e-3):
        sp = spec.with_potential(spec.potential.scaled(eps))
        F1 = WeylEvaluator(sp, s).decaying_flags(XS, rhos)[1]
        diffs.append(np.abs(F1 - base).max())
    assert 9.0 < diffs[0] / diffs[1] < 11.0


def test_scaled_flags_bounded(spec):
    s = sector_geometry(spec.b).sectors[0]
    rhos = rhos_for(s, (1.0, 10.0, 80.0))
    ev = WeylEvaluator(spec, s)
    for F in ev.decaying_flags(XS, rhos)[1:]:
        assert np.abs(F).max() < 10
    for T in ev.regular_flags(XS, rhos)[1:]:
        assert np.all(np.isfinite(T))
        assert np.abs(T).max() < 1e3


def test_point_helper_matches_batch():
    spec = reference_system("reference_n2")
    s = sector_geometry(spec.b).sectors[0]
    rho = 4.0 * s.bisector
    batch = WeylEvaluator(spec, s).evaluate([1.0], [rho]).Psi[0, 0]
    assert np.allclose(weyl_matrix(spec, s, 1.0, rho), batch)


def test_rejections():
    spec = reference_system("reference_n2")
    s = sector_geometry(spec.b).sectors[0]
    ev = WeylEvaluator(spec, s)
    with pytest.raises(ValueError):
        ev.evaluate([1.0], [-2 * s.bisector])
    with pytest.raises(ValueError):
        ev.evaluate([1.0], [0.0])
    with pytest.raises(ValueError):
        ev.evaluate([50.0], [s.bisector])
    with pytest.raises(SingularCharacteristicError):
        WeylEvaluator(spec, s, WeylConfig(delta_floor=1e3)).evaluate([1.0], [s.bisector])
    with pytest.raises(ValueError):
        WeylConfig(x0=2.0, x_inf=1.0)
