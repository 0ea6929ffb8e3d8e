"""Weyl solutions ``Psi(x, rho)`` of ``y' - x^-1 A y - q y = rho B y`` on one sector.

For ``rho`` in a closed sector the columns are fixed by

    F_{k-1} ^ Psi_k = F_k,      Psi_k ^ T_k = 0,

where ``F_k = e_1 ^ ... ^ e_k`` is the decaying flag at infinity and
``T_k = c_k ^ ... ^ c_n`` is spanned by the regular solutions at the origin.
Both are carried with their exponential scaling removed:

    F~_k = e^{-rho x (R_1 + ... + R_k)} F_k,   T~_k = e^{-rho x (R_k + ... + R_n)} T_k.

``F~_k`` is anchored at ``x_inf`` and integrated towards the origin, ``T~_k`` is
anchored at ``x0`` and integrated outwards; in the scaled variables both
directions are non-expanding. The scaled columns
``Psi~_k = e^{-rho x R_k} Psi_k`` then solve an ``n x n`` linear system built
from wedge pairings against the permutation basis ``f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import exterior as ext
from .model import Sector, SystemSpec
from .numerics import IntegratorConfig
from .unperturbed import (AsymptoticSeries, CompoundOperator, build_frobenius, head_shift,
                          integrate_compound, tail_shift)


class SingularCharacteristicError(ArithmeticError):
    """``Delta_k`` vanishes (to the configured floor) at a requested point."""


@dataclass(frozen=True)
class WeylConfig:
    x0: float = 1e-4
    x_inf: float = 40.0
    z_min: float = 30.0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    cond_threshold: float = 1e10
    delta_floor: float = 1e-12
    frobenius_radius: float = 1.0

    def __post_init__(self):
        if not 0 < self.x0 < self.x_inf:
            raise ValueError("need 0 < x0 < x_inf")


@dataclass
class WeylResult:
    """Values on the grid ``xs x rhos``; leading axes are ``(nx, nrho)``."""

    xs: np.ndarray
    rhos: np.ndarray
    sector: Sector
    scaled: np.ndarray          # Psi~, columns Psi~_k
    delta: np.ndarray           # Delta_k, k = 1..n
    cond: np.ndarray            # condition number of the k-th system
    residual: np.ndarray        # |F~_{k-1} ^ Psi~_k - F~_k| + |Psi~_k ^ T~_k|
    gamma: np.ndarray | None = None   # f-coordinates of Psi~ - base, when a base was given

    @property
    def exponent(self) -> np.ndarray:
        return np.exp(self.xs[:, None, None] * self.rhos[None, :, None] * self.sector.R[None, None, :])

    @property
    def Psi(self) -> np.ndarray:
        return self.scaled * self.exponent[..., None, :]

    @property
    def ill_conditioned(self) -> np.ndarray:
        return ~np.isfinite(self.cond) | (self.cond > WeylConfig.cond_threshold)

    def at(self, i: int, j: int) -> np.ndarray:
        return self.scaled[i, j]


def _f_wedges(f: np.ndarray, idx) -> np.ndarray:
    return ext.wedge_columns_dense(f.astype(complex), [i - 1 for i in idx])


def solve_columns(sector: Sector, Ft: list, Tt: list, base: np.ndarray | None = None):
    """Scaled Weyl columns from the flags.

    ``Ft[k]`` (``k = 0..n``) and ``Tt[k]`` (``k = 1..n+1``, ``Tt[0]`` unused)
    are dense arrays with common leading axes. Row ``i >= k`` pairs against
    ``f_alpha`` with ``alpha = {k..n} minus i``; row ``i < k`` pairs against
    ``T~_k`` with ``alpha = {1..k-1} minus i``. With ``base`` the unknown is
    ``Psi~_k - base_k`` and its ``f``-coordinates are returned as ``gamma``.
    """
    n = len(sector.R)
    f = sector.f
    lead = Ft[0].shape[:-1]
    E = np.eye(n, dtype=complex)
    scaled = np.zeros(lead + (n, n), dtype=complex)
    gamma = np.zeros(lead + (n, n), dtype=complex) if base is not None else None
    cond = np.zeros(lead + (n,))
    resid = np.zeros(lead + (n,))
    delta = np.zeros(lead + (n,), dtype=complex)
    for k in range(1, n + 1):
        F_prev, F_k, T_k = Ft[k - 1], Ft[k], Tt[k]
        delta[..., k - 1] = ext.pair_dense(F_prev, T_k, n, k - 1)
        # F~_{k-1} ^ e_j for all j, and (f_alpha ^ e_j) for the lower rows
        FE = ext.wedge_dense(F_prev[..., None, :], E, n, k - 1, 1)          # (..., n_j, C(n,k))
        M = np.zeros(lead + (n, n), dtype=complex)
        u = np.zeros(lead + (n,), dtype=complex)
        b_k = base[..., :, k - 1] if base is not None else None
        for i in range(1, n + 1):
            if i >= k:
                G = _f_wedges(f, [a for a in range(k, n + 1) if a != i])     # grade n-k
                M[..., i - 1, :] = ext.pair_dense(FE, G, n, k)
                u[..., i - 1] = ext.pair_dense(F_k, G, n, k)
                if b_k is not None:
                    u[..., i - 1] -= ext.pair_dense(ext.wedge_dense(F_prev, b_k, n, k - 1, 1), G, n, k)
            else:
                H = _f_wedges(f, [a for a in range(1, k) if a != i])         # grade k-2
                HE = ext.wedge_dense(H[None, :], E, n, k - 2, 1)            # (n_j, C(n,k-1))
                M[..., i - 1, :] = ext.pair_dense(HE, T_k[..., None, :], n, k - 1)
                if b_k is not None:
                    u[..., i - 1] = -ext.pair_dense(ext.wedge_dense(H, b_k, n, k - 2, 1), T_k, n, k - 1)
        with np.errstate(all="ignore"):
            cond[..., k - 1] = np.linalg.cond(M)
        sol = np.linalg.solve(M, u[..., None])[..., 0]
        col = sol + b_k if b_k is not None else sol
        scaled[..., :, k - 1] = col
        if gamma is not None:
            gamma[..., :, k - 1] = sol @ f          # f is a permutation: f^-1 = f^T
        r1 = ext.wedge_dense(F_prev, col, n, k - 1, 1) - F_k
        r2 = ext.wedge_dense(col, T_k, n, 1, n - k + 1) if k > 1 else np.zeros(lead + (1,))
        resid[..., k - 1] = np.sum(np.abs(r1), axis=-1) + np.sum(np.abs(r2), axis=-1)
    return scaled, delta, cond, resid, gamma


class WeylEvaluator:
    """Scaled Weyl matrix on one (closed) sector, batched over ``x`` and ``rho``."""

    def __init__(self, spec: SystemSpec, sector: Sector, config: WeylConfig = WeylConfig()):
        self.spec = spec
        self.sector = sector
        self.config = config
        self.n = spec.n

    @cached_property
    def series(self) -> AsymptoticSeries:
        return AsymptoticSeries.build(self.spec.without_potential(), self.sector)

    def frobenius(self, radius: float):
        return build_frobenius(self.spec, radius=max(self.config.frobenius_radius, radius))

    # flags -----------------------------------------------------------------

    def _check(self, xs, rhos):
        xs = np.asarray(xs, dtype=float).ravel()
        rhos = np.asarray(rhos, dtype=complex).ravel()
        if np.any(rhos == 0):
            raise ValueError("rho = 0 is excluded")
        if not np.all(self.sector.contains(rhos, closed=True)):
            raise ValueError(f"some rho lie outside the closed sector {self.sector.index}")
        if np.any(xs < self.config.x0) or np.any(xs > self.config.x_inf):
            raise ValueError("x outside [x0, x_inf]")
        return xs, rhos

    def _series_anchor(self, z: np.ndarray, k: int) -> np.ndarray:
        """Scaled unperturbed flag at ``z``; small ``|z|`` goes through a ray integration."""
        n = self.n
        out = np.zeros((len(z), math.comb(n, k)), dtype=complex)
        big = np.abs(z) >= self.config.z_min
        if np.any(big):
            out[big] = self.series.flag(z[big], k)
        small = np.flatnonzero(~big)
        if len(small):
            groups: dict[float, list[int]] = {}
            for i in small:
                groups.setdefault(round(float(np.angle(z[i])), 12), []).append(i)
            op = CompoundOperator(self.spec.without_potential(), k)
            lam = head_shift(self.sector, k)
            for idx in groups.values():
                omega = z[idx[0]] / abs(z[idx[0]])
                s = np.abs(z[idx])
                y0 = self.series.flag(np.array([self.config.z_min * omega]), k)
                vals = integrate_compound(op, [omega], [lam], y0, self.config.z_min, float(s.min()), s,
                                          self.config.integrator, False)
                out[idx] = vals[:, 0, :]
        return out

    def decaying_flags(self, xs, rhos, with_potential: bool = True) -> list[np.ndarray]:
        """``[F~_0, ..., F~_n]`` with shape ``(nx, nrho, C(n, k))``."""
        xs, rhos = self._check(xs, rhos)
        n = self.n
        lead = (len(xs), len(rhos))
        flags = [np.ones(lead + (1,), dtype=complex)]
        X = self.config.x_inf
        for k in range(1, n):
            y0 = self._series_anchor(rhos * X, k)
            op = CompoundOperator(self.spec, k)
            lam = np.full(len(rhos), head_shift(self.sector, k))
            vals = integrate_compound(op, rhos, lam, y0, X, float(xs.min()), xs,
                                      self.config.integrator, with_potential)
            flags.append(vals)
        flags.append(np.full(lead + (1,), self.sector.det_f, dtype=complex))
        return flags

    def regular_flags(self, xs, rhos, with_potential: bool = True) -> list[np.ndarray]:
        """``[None, T~_1, ..., T~_n, T~_{n+1}]`` with shape ``(nx, nrho, C(n, n-k+1))``."""
        xs, rhos = self._check(xs, rhos)
        n = self.n
        lead = (len(xs), len(rhos))
        x0 = self.config.x0
        z0 = rhos * x0
        frob = self.frobenius(float(np.max(np.abs(z0))))
        C = frob.evaluate(z0, self.sector)
        flags: list = [None, np.ones(lead + (1,), dtype=complex)]
        for k in range(2, n + 1):
            y0 = ext.wedge_columns_dense(C, range(k - 1, n)) * np.exp(-z0 * tail_shift(self.sector, k))[:, None]
            op = CompoundOperator(self.spec, n - k + 1)
            lam = np.full(len(rhos), tail_shift(self.sector, k))
            vals = integrate_compound(op, rhos, lam, y0, x0, float(xs.max()), xs,
                                      self.config.integrator, with_potential)
            flags.append(vals)
        flags.append(np.ones(lead + (1,), dtype=complex))
        return flags

    # Weyl matrix -----------------------------------------------------------

    def evaluate(self, xs, rhos, base: np.ndarray | None = None, with_potential: bool = True) -> WeylResult:
        xs, rhos = self._check(xs, rhos)
        Ft = self.decaying_flags(xs, rhos, with_potential)
        Tt = self.regular_flags(xs, rhos, with_potential)
        scaled, delta, cond, resid, gamma = solve_columns(self.sector, Ft, Tt, base)
        floor = self.config.delta_floor
        if np.any(np.abs(delta) < floor):
            bad = np.argwhere(np.abs(delta) < floor)[0]
            raise SingularCharacteristicError(
                f"|Delta_{bad[2] + 1}| < {floor} at x = {xs[bad[0]]}, rho = {rhos[bad[1]]}")
        return WeylResult(xs, rhos, self.sector, scaled, delta, cond, resid, gamma)

    def unperturbed(self, xs, rhos) -> WeylResult:
        """Same construction with ``q = 0``."""
        return self.evaluate(xs, rhos, with_potential=False)

    def perturbation(self, xs, rhos) -> tuple[WeylResult, WeylResult]:
        """``(perturbed, unperturbed)``; the perturbed solve is taken relative to the unperturbed one."""
        free = self.unperturbed(xs, rhos)
        full = self.evaluate(xs, rhos, base=free.scaled)
        return full, free


def weyl_matrix(spec: SystemSpec, sector: Sector, x: float, rho: complex,
                config: WeylConfig = WeylConfig()) -> np.ndarray:
    """``Psi(x, rho)`` at a single point."""
    res = WeylEvaluator(spec, sector, config).evaluate([x], [rho])
    return res.Psi[0, 0]
