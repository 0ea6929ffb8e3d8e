"""Potential from the jump of ``P``: ``q(x) = (2 pi i)^-1 sum_nu omega_nu int_0^inf [B, P^(x, t omega_nu)] dt``.

The ray integrals are truncated at a common radius ``r`` on every ray and the
limit ``r -> inf`` is taken from a schedule of radii. Partial integrals
oscillate in ``r`` with the periods ``2 pi / (x |b_j - b_k|)`` of the pairs that
define the rays, so each scheduled partial is smoothed by successive trailing
boxcars, one per distinct period. The smoothed value is an integral of the
samples against an explicit piecewise polynomial kernel; its breakpoints are
panel edges, which keeps the Gauss-Legendre rule exact on each panel.

Near ``rho = 0`` the integrand behaves like ``t^beta``; the piece ``[0, delta]``
comes from a power law fitted at ``delta`` and ``2 delta``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import SectorGeometry, SystemSpec, sector_geometry
from .numerics import extrapolate, gauss_legendre_panels
from .spectral import boundary_values
from .weyl import WeylConfig


class ReconstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReconstructionConfig:
    r_schedule: tuple[float, ...] = (10.0, 20.0, 40.0, 80.0)
    delta: float = 1e-4
    order: int = 10
    max_width: float = 1.0
    smoothing_passes: int = 2
    extrapolation: str = "averaging"
    weyl: WeylConfig = field(default_factory=WeylConfig)

    def __post_init__(self):
        r = self.r_schedule
        if len(r) < 1 or any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("r_schedule must be increasing")
        if not 0 < self.delta < r[0]:
            raise ValueError("need 0 < delta < r_schedule[0]")
        if self.extrapolation not in ("averaging", "richardson"):
            raise ValueError(f"unknown extrapolation mode {self.extrapolation!r}")


# smoothing kernel ------------------------------------------------------------

def oscillation_periods(geometry: SectorGeometry, x: float, rel_tol: float = 1e-9) -> list[float]:
    """Distinct ``2 pi / (x |b_j - b_k|)`` over the pairs defining the rays."""
    out: list[float] = []
    for pairs in geometry.ray_pairs:
        for j, k in pairs:
            p = 2 * math.pi / (x * abs(geometry.b[j - 1] - geometry.b[k - 1]))
            if not any(abs(p - q) <= rel_tol * q for q in out):
                out.append(p)
    return sorted(out)


def uniform_sum_cdf(s, widths) -> np.ndarray:
    """``P(sum w_i U_i <= s)`` for independent ``U_i ~ U[0, 1]``."""
    s = np.asarray(s, dtype=float)
    m = len(widths)
    if m == 0:
        return (s >= 0).astype(float)
    total = np.zeros_like(s)
    for subset in itertools.product((0, 1), repeat=m):
        shift = sum(w for w, on in zip(widths, subset) if on)
        total += (-1) ** sum(subset) * np.clip(s - shift, 0, None) ** m
    out = total / (math.factorial(m) * math.prod(widths))
    return np.clip(np.where(s >= sum(widths), 1.0, out), 0.0, 1.0)


def smoothing_weights(t, r: float, widths) -> np.ndarray:
    """Kernel ``K(t)`` with ``smoothed S(r) = int K(t) S'(t) dt``; ``K = 1`` below ``r - sum(widths)``."""
    return uniform_sum_cdf(r - np.asarray(t, dtype=float), widths)


def kernel_breakpoints(r: float, widths) -> list[float]:
    return sorted({r - sum(w for w, on in zip(widths, sub) if on)
                   for sub in itertools.product((0, 1), repeat=len(widths))})


# quadrature plan -------------------------------------------------------------

@dataclass
class RayQuadrature:
    edges: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    panel: np.ndarray
    widths: dict                 # (x, r) -> smoothing widths

    def doubled(self) -> "RayQuadrature":
        """Every panel split in two."""
        mid = 0.5 * (self.edges[1:] + self.edges[:-1])
        edges = np.sort(np.concatenate([self.edges, mid]))
        order = len(self.nodes) // (len(self.edges) - 1)
        t, w, p = gauss_legendre_panels(edges, order)
        return RayQuadrature(edges, t, w, p, self.widths)


def window_widths(geometry: SectorGeometry, x: float, r: float, passes: int, delta: float) -> list[float]:
    """Boxcar widths at radius ``r``: the periods repeated ``passes`` times, fewer if the window would reach ``delta``."""
    periods = oscillation_periods(geometry, x)
    for k in range(passes, 0, -1):
        if sum(periods) * k < r - delta:
            return periods * k
    raise ReconstructionError(f"smoothing window at x = {x} is wider than the radius {r}")


def plan_quadrature(geometry: SectorGeometry, xs, config: ReconstructionConfig) -> RayQuadrature:
    """Shared panels for all rays: geometric from ``delta`` to ``max_width``, then uniform.

    Edges include every scheduled radius and every smoothing breakpoint.
    """
    xs = [float(x) for x in np.atleast_1d(xs)]
    widths = {(x, r): window_widths(geometry, x, r, config.smoothing_passes, config.delta)
              for x in xs for r in config.r_schedule}
    h = min([config.max_width] + [0.5 * w for ws in widths.values() for w in ws])
    rmax = config.r_schedule[-1]
    g = [config.delta]
    while g[-1] * 2 < h:
        g.append(g[-1] * 2)
    uniform = np.arange(g[-1] + h, rmax + 0.5 * h, h)
    special = set(config.r_schedule)
    for (x, r), ws in widths.items():
        special.update(kernel_breakpoints(r, ws))
    edges = np.union1d(np.array(g + list(uniform[uniform < rmax])), sorted(special))
    edges = edges[(edges >= config.delta) & (edges <= rmax)]
    keep = np.concatenate([[True], np.diff(edges) > 1e-9 * rmax])
    edges = edges[keep]
    t, w, p = gauss_legendre_panels(edges, config.order)
    return RayQuadrature(edges, t, w, p, widths)


# ray data --------------------------------------------------------------------

@dataclass
class RayData:
    """``omega [B, P^(x, t omega)]`` at the quadrature nodes and at ``delta, 2 delta``."""

    ray: int
    omega: complex
    xs: np.ndarray
    integrand: np.ndarray        # (nx, nt, n, n)
    head: np.ndarray             # (nx, 2, n, n) at delta and 2 delta
    delta_min: float

    def node_norms(self) -> np.ndarray:
        return np.max(np.abs(self.integrand), axis=(-2, -1))


def commutator(B: np.ndarray, M: np.ndarray) -> np.ndarray:
    return B @ M - M @ B


def sample_ray(spec: SystemSpec, geometry: SectorGeometry, nu: int, xs, quad: RayQuadrature,
               config: ReconstructionConfig) -> RayData:
    d = config.delta
    ts = np.concatenate([quad.nodes, [d, 2 * d]])
    rs = boundary_values(spec, nu, xs, ts, geometry, config.weyl)
    G = rs.omega * commutator(spec.B, rs.P_hat)
    nt = len(quad.nodes)
    return RayData(nu, rs.omega, rs.xs, G[:, :nt], G[:, nt:], rs.delta_min)


def inner_piece(head: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """``int_0^delta`` from a power law ``c t^beta`` through the values at ``delta`` and ``2 delta``.

    Entries whose fitted exponent is not in ``(-1, 4]`` fall back to ``beta = 0``.
    Returns the estimate and the size ``delta |G(delta)|`` as its bound.
    """
    g1, g2 = head[..., 0, :, :], head[..., 1, :, :]
    with np.errstate(all="ignore"):
        beta = np.log(np.abs(g2) / np.abs(g1)) / math.log(2.0)
        aligned = np.real(g2 * np.conj(g1)) > 0
    ok = aligned & np.isfinite(beta) & (beta > -1) & (beta <= 4)
    beta = np.where(ok, beta, 0.0)
    return delta * g1 / (1 + beta), delta * np.abs(g1)


# reconstruction ---------------------------------------------------------------

def ray_integral(ray: RayData, quad: RayQuadrature, r: float, delta: float, ix: int = 0,
                 inner: bool = True) -> np.ndarray:
    """``int_0^r omega [B, P^] dt`` on one ray (``r`` must be a panel edge)."""
    sel = quad.nodes <= r
    val = np.einsum("t,tab->ab", quad.weights[sel], ray.integrand[ix, sel])
    if inner:
        val = val + inner_piece(ray.head[ix], delta)[0]
    return val


@dataclass
class HistoryEntry:
    r: float
    partial: np.ndarray          # raw truncated value, (nx, n, n)
    smoothed: np.ndarray
    residual: np.ndarray         # per x: |smoothed(r) - smoothed(r_prev)|
    amplitude: np.ndarray        # per x: spread of the raw partial over the smoothing window


@dataclass
class ReconstructionResult:
    xs: np.ndarray
    q: np.ndarray                # final estimate, (nx, n, n)
    history: list[HistoryEntry]
    inner_bound: np.ndarray      # per x
    mode: str
    converged: np.ndarray        # per x
    true_q: np.ndarray | None = None
    delta_min: float = math.inf

    @property
    def radii(self) -> np.ndarray:
        return np.array([h.r for h in self.history])

    def error(self, abs_floor: float = 1e-4) -> np.ndarray | None:
        """Entrywise relative error; entries with ``|true| < abs_floor`` are absolute."""
        if self.true_q is None:
            return None
        diff = np.abs(self.q - self.true_q)
        scale = np.abs(self.true_q)
        return np.where(scale >= abs_floor, diff / np.where(scale > 0, scale, 1), diff)

    @property
    def max_relative_error(self) -> float | None:
        err = self.error()
        if err is None:
            return None
        off = ~np.eye(self.q.shape[-1], dtype=bool)
        return float(np.max(err[..., off]))


def reconstruct_q(spec: SystemSpec, xs, config: ReconstructionConfig = ReconstructionConfig(),
                  geometry: SectorGeometry | None = None, quad: RayQuadrature | None = None,
                  rays: list[RayData] | None = None) -> ReconstructionResult:
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    geometry = geometry or sector_geometry(spec.b)
    quad = quad or plan_quadrature(geometry, xs, config)
    if rays is None:
        rays = [sample_ray(spec, geometry, nu, xs, quad, config) for nu in range(1, geometry.N + 1)]
    n = spec.n
    scale = 1.0 / (2j * math.pi)
    # all rays share nodes, so summing node values first is the symmetric truncation
    total = sum(r.integrand for r in rays) * scale
    inner_est = np.zeros((len(xs), n, n), dtype=complex)
    inner_bound = np.zeros(len(xs))
    for r in rays:
        est, bound = inner_piece(r.head, config.delta)
        inner_est += est * scale
        inner_bound += np.max(bound, axis=(-2, -1)) / (2 * math.pi)

    history: list[HistoryEntry] = []
    prev = None
    for R in config.r_schedule:
        sel = quad.nodes <= R + 1e-12
        raw = np.einsum("t,xtab->xab", quad.weights[sel], total[:, sel]) + inner_est
        smooth = np.empty_like(raw)
        amp = np.zeros(len(xs))
        for ix, x in enumerate(xs):
            widths = quad.widths[(float(x), R)]
            K = smoothing_weights(quad.nodes, R, widths)
            smooth[ix] = np.einsum("t,tab->ab", quad.weights * K, total[ix]) + inner_est[ix]
            lo = R - sum(widths)
            inside = quad.edges[(quad.edges >= lo - 1e-12) & (quad.edges <= R + 1e-12)]
            if len(inside) > 1:
                cum = np.array([np.einsum("t,tab->ab", quad.weights[quad.nodes <= e], total[ix, quad.nodes <= e])
                                for e in inside]) + inner_est[ix]
                amp[ix] = float(np.max(np.abs(cum - smooth[ix])))
        res = (np.full(len(xs), np.nan) if prev is None
               else np.max(np.abs(smooth - prev), axis=(-2, -1)))
        history.append(HistoryEntry(R, raw, smooth, res, amp))
        prev = smooth

    smoothed = np.array([h.smoothed for h in history])
    radii = np.array([h.r for h in history])
    converged = np.ones(len(xs), dtype=bool)
    if len(history) >= 3:
        res = np.array([h.residual for h in history[1:]])
        amps = np.array([h.amplitude for h in history])
        # values at round-off level count as converged
        noise = 1e-12
        converged = (res[-1] <= np.maximum(res[0], noise)) & (amps[-1] <= np.maximum(amps[0], noise))
    if config.extrapolation == "richardson" and len(history) >= 3:
        q = np.array([extrapolate(smoothed[:, ix], radii, "richardson").value for ix in range(len(xs))])
    else:
        q = smoothed[-1].copy()
    true = np.asarray(spec.potential(xs), dtype=complex)
    dmin = min(r.delta_min for r in rays)
    return ReconstructionResult(xs, q, history, inner_bound, config.extrapolation, converged, true, dmin)
