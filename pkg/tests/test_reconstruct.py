import math

import numpy as np
import pytest
from scipy.integrate import quad

from weylrec.model import reference_system, sector_geometry
from weylrec.numerics import gauss_legendre_panels
from weylrec.reconstruct import (ReconstructionConfig, ReconstructionError, inner_piece, kernel_breakpoints,
                                 oscillation_periods, plan_quadrature, ray_integral, reconstruct_q, sample_ray,
                                 smoothing_weights, uniform_sum_cdf, window_widths)


def test_uniform_sum_cdf_against_convolution():
    a, b = 1.0, 2.5
    for s in (0.3, 1.0, 1.7, 2.9, 3.4):
        ref, _ = quad(lambda u: np.clip(s - u, 0, b), 0, a)
        assert np.isclose(uniform_sum_cdf(s, [a, b]), ref / (a * b), atol=1e-12)


@pytest.mark.parametrize("widths", [[1.0], [0.7, 0.7], [0.5, 1.1, 0.3]])
def test_uniform_sum_cdf_shape(widths):
    S = sum(widths)
    s = np.linspace(-0.5, S + 0.5, 301)
    F = uniform_sum_cdf(s, widths)
    assert np.all(np.diff(F) >= -1e-14)
    assert F[0] == 0 and F[-1] == 1
    # symmetric distribution about S / 2
    assert np.allclose(uniform_sum_cdf(s, widths) + uniform_sum_cdf(S - s, widths), 1, atol=1e-12)


def test_smoothing_is_a_window_average():
    # int K S' = E[S(r - W)] with W = sum w_i U_i; for S = t^2 this is (r - E W)^2 + Var W
    r, widths = 7.0, [math.pi, math.pi]
    edges = np.union1d(np.linspace(0, r, 8), kernel_breakpoints(r, widths))
    t, w, _ = gauss_legendre_panels(edges, 10)
    val = np.sum(w * smoothing_weights(t, r, widths) * 2 * t)
    mean = sum(widths) / 2
    var = sum(x * x for x in widths) / 12
    assert np.isclose(val, (r - mean) ** 2 + var, rtol=1e-12)


def test_periods_and_widths():
    g = sector_geometry([1, -1])
    assert np.allclose(oscillation_periods(g, 1.0), [math.pi])
    assert np.allclose(oscillation_periods(g, 2.0), [math.pi / 2])
    assert window_widths(g, 1.0, 80.0, 2, 1e-2) == [math.pi, math.pi]
    assert window_widths(g, 1.0, 5.0, 2, 1e-2) == [math.pi]
    with pytest.raises(ReconstructionError):
        window_widths(g, 0.1, 5.0, 2, 1e-2)
    cube = sector_geometry(np.exp(2j * np.pi * np.arange(3) / 3))
    assert np.allclose(oscillation_periods(cube, 1.0), [2 * math.pi / math.sqrt(3)])


def test_plan_edges(geom2):
    cfg = ReconstructionConfig()
    q = plan_quadrature(geom2, [0.5, 1.0], cfg)
    assert q.edges[0] == cfg.delta and q.edges[-1] == cfg.r_schedule[-1]
    for r in cfg.r_schedule:
        assert np.min(np.abs(q.edges - r)) < 1e-12
        for bp in kernel_breakpoints(r, q.widths[(1.0, r)]):
            assert np.min(np.abs(q.edges - bp)) < 1e-9
    assert np.all(np.diff(q.edges) <= cfg.max_width + 1e-12)
    d = q.doubled()
    assert len(d.edges) == 2 * len(q.edges) - 1


@pytest.mark.parametrize("beta", [0.0, 0.6, 2.0, -0.5])
def test_inner_piece_exact_on_power_law(beta):
    delta = 1e-2
    c = np.array([[0.3 - 0.2j, 1.0], [2.0, -1.0j]])
    head = np.stack([c * delta ** beta, c * (2 * delta) ** beta])
    est, bound = inner_piece(head, delta)
    assert np.allclose(est, c * delta ** (beta + 1) / (beta + 1), rtol=1e-12)
    assert np.allclose(bound, delta * np.abs(c) * delta ** beta)


def test_inner_piece_falls_back_on_sign_change():
    head = np.array([[[1.0]], [[-1.0]]])
    est, _ = inner_piece(head, 0.1)
    assert np.isclose(est[0, 0], 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        ReconstructionConfig(r_schedule=(20.0, 10.0))
    with pytest.raises(ValueError):
        ReconstructionConfig(extrapolation="spline")


@pytest.fixture(scope="module")
def half():
    """Half-amplitude reference potential at x = 1, sampled once."""
    base = reference_system("reference_n2")
    spec = base.with_potential(base.potential.scaled(0.5))
    g = sector_geometry(spec.b)
    cfg = ReconstructionConfig()
    quad_ = plan_quadrature(g, [1.0], cfg)
    rays = [sample_ray(spec, g, nu, [1.0], quad_, cfg) for nu in (1, 2)]
    return spec, g, cfg, quad_, rays


def test_linearity_probe(half, round_trip):
    spec, g, cfg, quad_, rays = half
    res = reconstruct_q(spec, [1.0], cfg, g, quad_, rays)
    full = round_trip.q[list(round_trip.xs).index(1.0)]
    off = ~np.eye(2, dtype=bool)
    assert np.allclose(res.q[0][off], 0.5 * full[off], rtol=0.1)
    assert res.max_relative_error < 0.05


def test_symmetric_truncation_is_sum_of_rays(half):
    spec, g, cfg, quad_, rays = half
    res = reconstruct_q(spec, [1.0], cfg, g, quad_, rays)
    for h in res.history:
        per_ray = sum(ray_integral(r, quad_, h.r, cfg.delta) for r in rays) / (2j * math.pi)
        assert np.allclose(h.partial[0], per_ray, atol=1e-14)


def test_integrand_decays(half):
    _, _, _, quad_, rays = half
    for r in rays:
        norms = r.node_norms()[0]
        far = norms[(quad_.nodes > 70)].max()
        near = norms[(quad_.nodes > 5) & (quad_.nodes < 15)].max()
        assert far < near / 4


def test_free_system_reconstructs_zero(free2):
    res = reconstruct_q(free2, [1.0], ReconstructionConfig(r_schedule=(10.0, 20.0, 40.0)))
    assert np.abs(res.q).max() < 1e-7
    assert np.array_equal(res.true_q, np.zeros((1, 2, 2)))


def test_node_doubling_is_stable(ref2):
    cfg = ReconstructionConfig(r_schedule=(5.0, 10.0))
    g = sector_geometry(ref2.b)
    q1 = plan_quadrature(g, [1.0], cfg)
    a = reconstruct_q(ref2, [1.0], cfg, g, q1)
    b = reconstruct_q(ref2, [1.0], cfg, g, q1.doubled())
    assert np.abs(a.history[-1].partial - b.history[-1].partial).max() < 1e-6


def test_round_trip_history(round_trip):
    assert np.all(round_trip.converged)
    res = np.array([h.residual for h in round_trip.history[1:]])
    assert np.all(np.diff(res, axis=0) < 0)
    assert np.abs(np.diagonal(round_trip.q, axis1=1, axis2=2)).max() < 1e-8
    assert round_trip.max_relative_error < 0.05


@pytest.mark.slow
def test_round_trip_n3(ref3):
    res = reconstruct_q(ref3, [1.0])
    err = res.error()[0]
    true = res.true_q[0]
    big = np.abs(true) >= 1e-4
    assert np.max(err[big]) < 0.02
    assert np.max(err[~big]) < 1e-5
    assert res.converged.all()
