"""Shared kernels: linear ODEs along straight paths in C, quadrature, extrapolation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad_vec, solve_ivp


class IntegrationError(RuntimeError):
    """Step-size underflow or another integrator failure; ``location`` is a point on the path."""

    def __init__(self, message: str, location: complex | None = None):
        super().__init__(message if location is None else f"{message} (near {location})")
        self.location = location


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10
    atol: float = 1e-13
    max_step: float = np.inf
    min_step: float = 1e-14
    method: str = "DOP853"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if not self.min_step < self.max_step:
            raise ValueError("min_step must be below max_step")

    def tightened(self, factor: float = 16.0) -> "IntegratorConfig":
        return IntegratorConfig(self.rtol / factor, self.atol / factor, self.max_step, self.min_step, self.method)


@dataclass
class PathODEProblem:
    """``y'(z) = M(z) y(z)`` along the segment ``start -> end``.

    ``coef(z)`` returns ``(d, d)`` or, for a batch of independent systems,
    ``(nb, d, d)``; ``y0`` is ``(d,)`` or ``(nb, d)``. ``matvec(z, Y)`` may be
    supplied instead of ``coef`` to apply ``M(z)`` to the state directly.
    """

    start: complex
    end: complex
    y0: np.ndarray
    coef: Callable[[complex], np.ndarray] | None = None
    matvec: Callable[[complex, np.ndarray], np.ndarray] | None = None

    def apply(self, z, Y: np.ndarray) -> np.ndarray:
        if self.matvec is not None:
            return self.matvec(z, Y)
        M = self.coef(z)
        if M.ndim == 2:
            return Y @ M.T
        return np.einsum("bij,bj->bi", M, Y)


@dataclass
class LinearSolution:
    nodes: np.ndarray
    values: np.ndarray
    nfev: int
    error_estimate: float | None = None


def _real_path(problem: PathODEProblem) -> bool:
    return np.isreal(problem.start) and np.isreal(problem.end)


def integrate_linear(problem: PathODEProblem, nodes: Sequence[complex],
                     config: IntegratorConfig = IntegratorConfig(),
                     estimate_error: bool = False) -> LinearSolution:
    """Adaptive embedded Runge-Kutta on the path, with dense output at ``nodes``.

    The path is parametrised by ``s in [0, 1]``; nodes must lie on the segment.
    With ``estimate_error`` the solve is repeated at tightened tolerances and the
    largest difference at the nodes is returned as the global error estimate.
    """
    z0, z1 = complex(problem.start), complex(problem.end)
    span = z1 - z0
    y0 = np.asarray(problem.y0, dtype=complex)
    shape = y0.shape
    nodes = np.asarray(nodes, dtype=complex).ravel()
    if span == 0:
        return LinearSolution(nodes, np.broadcast_to(y0, (len(nodes),) + shape).copy(), 0, 0.0)
    s = ((nodes - z0) / span)
    if np.any(np.abs(s.imag) > 1e-9) or np.any(s.real < -1e-12) or np.any(s.real > 1 + 1e-12):
        raise ValueError("requested nodes are not on the integration segment")
    s = np.clip(s.real, 0.0, 1.0)
    # solve_ivp rejects repeated evaluation points
    s_eval, inv = np.unique(s, return_inverse=True)
    real = _real_path(problem)

    def rhs(t, y):
        z = z0.real + t * span.real if real else z0 + t * span
        return (span * problem.apply(z, y.reshape(shape))).ravel()

    sol = solve_ivp(rhs, (0.0, 1.0), y0.ravel(), method=config.method, t_eval=s_eval,
                    rtol=config.rtol, atol=config.atol,
                    max_step=config.max_step / abs(span) if np.isfinite(config.max_step) else np.inf)
    if sol.status != 0:
        where = z0 + (sol.t[-1] if len(sol.t) else 0.0) * span
        raise IntegrationError(f"integration failed: {sol.message}", where)
    values = sol.y.T.reshape((len(s_eval),) + shape)[inv.ravel()]
    out = LinearSolution(nodes, values, int(sol.nfev))
    if estimate_error:
        fine = integrate_linear(problem, nodes, config.tightened())
        out.error_estimate = float(np.max(np.abs(fine.values - values))) if len(nodes) else 0.0
    return out


@dataclass
class QuadResult:
    value: complex | np.ndarray
    error: float


def quad_adaptive(f: Callable, a: float, b: float, tol: float = 1e-10, *,
                  cutoff: float | None = None, tail_bound: Callable[[float], float] | None = None,
                  limit: int = 2000) -> QuadResult:
    """Adaptive Gauss-Kronrod quadrature of a scalar or array valued ``f`` on ``[a, b]``.

    For ``b = inf`` with a ``cutoff``, the integral stops at ``cutoff`` and
    ``tail_bound(cutoff)`` is added to the error. The returned error is the
    quadrature estimate plus any tail bound.
    """
    upper = b
    extra = 0.0
    if np.isinf(b) and cutoff is not None:
        upper = cutoff
        extra = float(tail_bound(cutoff)) if tail_bound is not None else 0.0
    value, err, info = quad_vec(f, a, upper, epsabs=tol, epsrel=tol, limit=limit, full_output=True)
    if info.status == 1:
        raise QuadratureError(f"maximum number of subintervals ({limit}) exceeded")
    return QuadResult(value, float(err) + extra)


def gauss_legendre_panels(edges: Sequence[float], order: int = 10) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule over consecutive ``edges``.

    Returns ``(nodes, weights, panel)`` where ``panel[i]`` is the panel index of node ``i``.
    """
    edges = np.asarray(edges, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("panel edges must be increasing")
    t, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    panel = np.repeat(np.arange(len(half)), order)
    return nodes, weights, panel


@dataclass
class Extrapolation:
    value: complex | np.ndarray
    mode: str
    differences: np.ndarray
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    oscillation_decreasing: bool = True


def _norm(v) -> float:
    return float(np.max(np.abs(v)))


def _spread(seg: np.ndarray) -> float:
    return _norm(np.ptp(seg.real, axis=0)) + _norm(np.ptp(seg.imag, axis=0))


def window_average(values: np.ndarray, radii: np.ndarray, r: float, width: float) -> np.ndarray:
    """Mean of ``values(r')`` over ``r' in [r - width, r]`` (trapezoid in r)."""
    values = np.asarray(values)
    radii = np.asarray(radii, dtype=float)
    lo = r - width
    if lo < radii[0] - 1e-12:
        raise ValueError("averaging window reaches below the first radius")
    grid = np.union1d(radii[(radii > lo) & (radii < r)], [lo, r])
    flat = values.reshape(len(radii), -1)
    interp = np.stack([np.interp(grid, radii, flat[:, c].real) + 1j * np.interp(grid, radii, flat[:, c].imag)
                       for c in range(flat.shape[1])], axis=1)
    avg = np.trapezoid(interp, grid, axis=0) / width
    return avg.reshape(values.shape[1:])


def extrapolate(values: Sequence, radii: Sequence[float] | None = None, mode: str = "averaging",
                window: float | None = None, power: float = 1.0) -> Extrapolation:
    """Limit estimate of a sequence of partial values.

    ``averaging``: mean over the trailing ``window`` of radius (``radii`` required;
    default window is the last half of the range). The oscillation amplitude
    (max - min) of the last two windows is compared, and a non-decreasing
    amplitude is flagged.

    ``richardson``: assumes ``a_k = L + c r_k**-power`` and eliminates the
    leading term from the last two entries. Without ``radii`` the entries are
    taken at doubling radii.
    """
    vals = np.asarray(values)
    if len(vals) < 3:
        raise ValueError("extrapolation needs at least 3 entries")
    diffs = np.array([_norm(vals[k] - vals[k - 1]) for k in range(1, len(vals))])
    if mode == "averaging":
        if radii is None:
            radii = np.arange(len(vals), dtype=float)
        r = np.asarray(radii, dtype=float)
        w = window if window is not None else 0.5 * (r[-1] - r[0])
        value = window_average(vals, r, r[-1], w)
        amps = []
        for hi in (r[-1] - w, r[-1]):
            sel = (r >= hi - w - 1e-12) & (r <= hi + 1e-12)
            amps.append(_spread(vals[sel]) if np.any(sel) else 0.0)
        amps = np.array(amps)
        return Extrapolation(value, mode, diffs, amps, bool(amps[-1] < amps[0] or amps[0] == 0))
    if mode == "richardson":
        r = np.asarray(radii, dtype=float) if radii is not None else 2.0 ** np.arange(len(vals))
        h1, h2 = r[-2] ** -power, r[-1] ** -power
        value = (h1 * vals[-1] - h2 * vals[-2]) / (h1 - h2)
        return Extrapolation(value, mode, diffs, oscillation_decreasing=bool(diffs[-1] <= diffs[-2]))
    raise ValueError(f"unknown extrapolation mode {mode!r}")
