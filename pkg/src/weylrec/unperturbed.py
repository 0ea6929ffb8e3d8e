"""Fundamental systems of ``y' = (x^-1 A + B) y`` for complex ``x``.

* :class:`FrobeniusBasis` - ``c_k(z) = z^{mu_k} c^_k(z)`` with entire ``c^_k``
  given by a power series, ``det c = 1``.
* :class:`AsymptoticSeries` - the formal expansion
  ``e_k(z) ~ e^{z R_k} (f_k + sum_m a_m z^-m)`` used to anchor ``e_k`` far out.
* :class:`CompoundOperator` - the scaled grade-m system used by every integration.
* :class:`AsymptoticBasis`, :func:`ray_flags` - ``e`` continued along rays.
* :class:`UnperturbedWeyl` - ``psi_0`` through connection coefficients.

Individual columns ``e_k`` are only determined modulo solutions that are
recessive relative to ``e^{z R_k}``; integrating them backwards amplifies that
freedom. Everything downstream therefore works with the flags
``e_1 ^ ... ^ e_k``, which are integrated stably.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import exterior as ext
from .model import PotentialModel, Sector, SystemSpec, sector_geometry, validate
from .numerics import IntegratorConfig, PathODEProblem, integrate_linear

SERIES_EPS = 1e-16


class FrobeniusConditioningError(ArithmeticError):
    pass


# Frobenius basis at the origin ---------------------------------------------

@dataclass
class FrobeniusBasis:
    mu: np.ndarray
    H: np.ndarray
    coeffs: np.ndarray          # (n_k, M + 1, n): coeffs[k, m] is c_{k,m}
    radius: float
    tail: np.ndarray            # last retained term size per k at the radius

    @property
    def n(self) -> int:
        return len(self.mu)

    @property
    def order(self) -> int:
        return self.coeffs.shape[1] - 1

    def hat(self, z) -> np.ndarray:
        """Columns ``c^_k(z)``; shape ``z.shape + (n, n)``."""
        z = np.asarray(z, dtype=complex)
        if np.any(np.abs(z) > self.radius * (1 + 1e-12)):
            raise ValueError(f"|z| exceeds the series radius {self.radius}")
        out = np.zeros(z.shape + (self.n, self.n), dtype=complex)
        for m in range(self.order, -1, -1):
            out = out * z[..., None, None] + self.coeffs[:, m, :].T
        return out

    def evaluate(self, z, sector: Sector | None = None) -> np.ndarray:
        """``c(z)``; ``z^mu`` uses the argument continuous on ``sector`` (principal branch if None)."""
        z = np.asarray(z, dtype=complex)
        arg = sector.arg(z) if sector is not None else np.angle(z)
        logz = np.log(np.abs(z)) + 1j * arg
        powers = np.exp(logz[..., None] * self.mu)
        return self.hat(z) * powers[..., None, :]

    def regular_wedge(self, z, k: int, sector: Sector | None = None) -> np.ndarray:
        """Dense ``c_k ^ ... ^ c_n`` (1-based ``k``) at ``z``."""
        return ext.wedge_columns_dense(self.evaluate(z, sector), range(k - 1, self.n))

    def recursion_residual(self, A: np.ndarray, b: np.ndarray) -> float:
        """Largest ``|(A - (mu_k + m) I) c_{k,m} + B c_{k,m-1}|`` relative to ``|c_{k,m}|``."""
        worst = 0.0
        for k in range(self.n):
            for m in range(1, self.order + 1):
                c = self.coeffs[k, m]
                if not np.any(c):
                    break
                r = (A - (self.mu[k] + m) * np.eye(self.n)) @ c + b * self.coeffs[k, m - 1]
                scale = np.linalg.norm(A) * np.linalg.norm(c) + np.linalg.norm(b * self.coeffs[k, m - 1])
                if scale > 0:
                    worst = max(worst, float(np.linalg.norm(r) / scale))
        return worst


def build_frobenius(spec: SystemSpec, M: int | None = None, radius: float = 1.0,
                    max_order: int = 400) -> FrobeniusBasis:
    """Series coefficients from ``(A - (mu_k + m) I) c_{k,m} = -B c_{k,m-1}``.

    With ``M=None`` the order grows until ``|c_{k,m}| radius^m`` falls below
    ``1e-16 |h_k|`` on two consecutive terms past the peak.
    """
    mu, H = spec.spectrum()
    n = spec.n
    A, b = spec.A, spec.b
    series = [[H[:, k].copy()] for k in range(n)]
    tails = np.zeros(n)
    for k in range(n):
        small = 0
        peak = 0.0
        m = 0
        while True:
            m += 1
            Mk = A - (mu[k] + m) * np.eye(n)
            if np.linalg.cond(Mk) > 1e12:
                raise FrobeniusConditioningError(f"A - (mu_{k + 1} + {m}) I is near singular")
            c = np.linalg.solve(Mk, -b * series[k][-1])
            series[k].append(c)
            size = np.linalg.norm(c) * radius ** m
            peak = max(peak, size)
            if M is not None:
                if m >= M:
                    break
                continue
            small = small + 1 if size < SERIES_EPS * np.linalg.norm(H[:, k]) and size <= peak else 0
            if small >= 2 or m >= max_order:
                break
        tails[k] = np.linalg.norm(series[k][-1]) * radius ** m
    order = max(len(s) for s in series)
    coeffs = np.zeros((n, order, n), dtype=complex)
    for k in range(n):
        coeffs[k, :len(series[k])] = series[k]
    return FrobeniusBasis(mu, H, coeffs, radius, tails)


# formal asymptotic series at infinity ------------------------------------

@dataclass
class AsymptoticSeries:
    """Coefficients of ``e^{-z R_k} e_k(z) ~ f_k + sum_{m>=1} a_{k,m} z^-m`` for one sector."""

    sector: Sector
    coeffs: np.ndarray          # (n, M + 1, n)

    @classmethod
    def build(cls, spec: SystemSpec, sector: Sector, order: int = 120) -> "AsymptoticSeries":
        A, b, n = spec.A, spec.b, spec.n
        coeffs = np.zeros((n, order + 1, n), dtype=complex)
        for k, j0 in enumerate(sector.order):
            a = np.zeros(n, dtype=complex)
            a[j0] = 1.0
            coeffs[k, 0] = a
            gaps = b - b[j0]
            others = [l for l in range(n) if l != j0]
            for m in range(order):
                rhs = -(A @ a + m * a)
                nxt = np.zeros(n, dtype=complex)
                nxt[others] = rhs[others] / gaps[others]
                # solvability at order m + 1 fixes the j0 component
                nxt[j0] = -(A[j0] @ nxt) / (m + 1)
                coeffs[k, m + 1] = nxt
                a = nxt
        return cls(sector, coeffs)

    def evaluate(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Scaled columns ``u_k(z)`` (shape ``z.shape + (n, n)``) and the truncation error per point.

        Each column is summed up to its smallest term (optimal truncation).
        """
        z = np.asarray(z, dtype=complex)
        flat = z.ravel()
        n, M1, _ = self.coeffs.shape
        out = np.zeros((len(flat), n, n), dtype=complex)
        err = np.zeros(len(flat))
        inv = 1.0 / flat
        for k in range(n):
            total = np.zeros((len(flat), n), dtype=complex)
            power = np.ones(len(flat), dtype=complex)
            best = np.full(len(flat), np.inf)
            active = np.ones(len(flat), dtype=bool)
            for m in range(M1):
                term = power[:, None] * self.coeffs[k, m][None, :]
                size = np.linalg.norm(term, axis=1)
                grow = active & (m > 1) & (size > best)
                active &= ~grow
                err = np.where(grow, np.maximum(err, best), err)
                use = active
                total[use] += term[use]
                best = np.where(use & (size > 0), np.minimum(best, size), best)
                tiny = use & (size < 1e-18 * np.linalg.norm(total, axis=1))
                active &= ~tiny
                if not active.any():
                    break
                power = power * inv
            err = np.where(active, np.maximum(err, best), err)
            out[:, :, k] = total
        return out.reshape(z.shape + (n, n)), err.reshape(z.shape)

    def flag(self, z, k: int) -> np.ndarray:
        """Dense scaled flag ``u_1 ^ ... ^ u_k`` at ``z``."""
        U, _ = self.evaluate(z)
        return ext.wedge_columns_dense(U, range(k))


# scaled compound system ----------------------------------------------------

@dataclass
class CompoundOperator:
    """``(x^-1 A + q(x) + rho (B - lam))^(m)`` on ``wedge^m C^n``, batched over ``(rho, lam)``."""

    spec: SystemSpec
    m: int

    @cached_property
    def A_m(self) -> np.ndarray:
        return ext.derivation_extension(self.spec.A, self.m)

    @cached_property
    def b_m(self) -> np.ndarray:
        return np.array([sum(self.spec.b[a - 1] for a in alpha)
                         for alpha in ext.multi_indices(self.spec.n, self.m)], dtype=complex)

    @cached_property
    def q_parts(self) -> list[tuple[tuple, np.ndarray]]:
        parts = []
        n = self.spec.n
        for (i, j), terms in self.spec.potential.entries.items():
            E = np.zeros((n, n))
            E[i, j] = 1.0
            parts.append((terms, ext.derivation_extension(E, self.m)))
        return parts

    def shared(self, x: float, with_potential: bool = True) -> np.ndarray:
        K = self.A_m / x
        if with_potential:
            for terms, E in self.q_parts:
                K = K + sum(t.value(x) for t in terms) * E
        return K

    def matvec(self, rho, lam, with_potential: bool = True):
        """Right-hand side ``(x, Y) -> M(x) Y`` for a batch ``Y`` of shape ``(nb, d)``."""
        rho = np.asarray(rho, dtype=complex).reshape(-1)
        lam = np.asarray(lam, dtype=complex).reshape(-1)
        diag = rho[:, None] * (self.b_m[None, :] - lam[:, None])
        use_q = with_potential and not self.spec.potential.is_zero

        def apply(x, Y):
            return Y @ self.shared(float(np.real(x)), use_q).T + diag * Y
        return apply


def integrate_compound(op: CompoundOperator, rho, lam, y0: np.ndarray, start: float, end: float,
                       nodes, config: IntegratorConfig, with_potential: bool = True) -> np.ndarray:
    """Integrate the batch along the real segment ``start -> end``; values at ``nodes``."""
    problem = PathODEProblem(start, end, np.asarray(y0, dtype=complex),
                             matvec=op.matvec(rho, lam, with_potential))
    return integrate_linear(problem, nodes, config).values


def head_shift(sector: Sector, k: int) -> complex:
    """``R_1 + ... + R_k``."""
    return complex(np.sum(sector.R[:k]))


def tail_shift(sector: Sector, k: int) -> complex:
    """``R_k + ... + R_n``."""
    return complex(np.sum(sector.R[k - 1:]))


def ray_flags(spec: SystemSpec, series: AsymptoticSeries, omega: complex, s_nodes, k: int,
              z_min: float = 30.0, config: IntegratorConfig = IntegratorConfig()) -> np.ndarray:
    """Scaled unperturbed flag ``e^{-z(R_1+..+R_k)} e_1^...^e_k`` at ``z = s omega``.

    Anchored by the formal series at ``s_a = max(z_min, max(s_nodes))`` and
    integrated backwards along the ray (the stable direction for a flag).
    """
    s_nodes = np.asarray(s_nodes, dtype=float)
    s_a = max(z_min, float(np.max(s_nodes)))
    anchor = series.flag(np.array([s_a * omega]), k)
    op = CompoundOperator(spec.without_potential(), k)
    lam = head_shift(series.sector, k)
    vals = integrate_compound(op, [omega], [lam], anchor, s_a, float(np.min(s_nodes)), s_nodes, config, False)
    return vals[:, 0, :]


# asymptotic basis along a ray ------------------------------------------------

@dataclass
class AsymptoticBasis:
    """Columns ``e_k(s omega)`` continued backwards from the anchor ``s = x_inf``.

    ``floor`` is the smallest ``s`` at which recessive contamination, grown from
    the anchor error, stays below ``1e-8`` relative; requests below it raise.
    """

    spec: SystemSpec
    sector: Sector
    omega: complex
    x_inf: float
    series: AsymptoticSeries
    config: IntegratorConfig = field(default_factory=IntegratorConfig)

    @cached_property
    def anchor(self) -> tuple[np.ndarray, float]:
        U, err = self.series.evaluate(np.array([self.x_inf * self.omega]))
        return U[0], float(np.max(err))

    @property
    def anchor_error(self) -> float:
        return self.anchor[1]

    @cached_property
    def floor(self) -> float:
        R = self.sector.R
        rate = max((float(np.real(self.omega * (R[k] - R[j])))
                    for k in range(len(R)) for j in range(k)), default=0.0)
        if rate <= 1e-12:
            return 0.0
        budget = math.log(1e-8 / max(self.anchor_error, 1e-16))
        return max(0.0, self.x_inf - budget / rate)

    def scaled(self, s_nodes) -> np.ndarray:
        """``u_k(s) = e^{-s omega R_k} e_k(s omega)`` as columns; shape ``(len(s), n, n)``."""
        s_nodes = np.asarray(s_nodes, dtype=float)
        if np.min(s_nodes) < self.floor:
            raise ValueError(f"columns are not reliable below s = {self.floor:.3g} on this ray")
        op = CompoundOperator(self.spec.without_potential(), 1)
        n = self.spec.n
        U0 = self.anchor[0]
        vals = integrate_compound(op, np.full(n, self.omega), self.sector.R, U0.T,
                                  self.x_inf, float(np.min(s_nodes)), s_nodes, self.config, False)
        return np.transpose(vals, (0, 2, 1))

    def columns(self, s_nodes) -> np.ndarray:
        s_nodes = np.asarray(s_nodes, dtype=float)
        U = self.scaled(s_nodes)
        return U * np.exp(s_nodes[:, None, None] * self.omega * self.sector.R[None, None, :])

    def wronskian(self, s_nodes) -> np.ndarray:
        """``det e(s omega)``; the scaling factors cancel because ``sum R = 0``."""
        return np.linalg.det(self.scaled(s_nodes))

    def deviation(self, s_nodes, k: int) -> np.ndarray:
        """``|| (u_k - f_k) ^ u_1 ^ ... ^ u_{k-1} ||`` (insensitive to recessive admixture)."""
        U = self.scaled(s_nodes)
        fk = self.sector.f[:, k - 1]
        D = U.copy()
        D[:, :, k - 1] = U[:, :, k - 1] - fk
        w = ext.wedge_columns_dense(D, list(range(k - 1)) + [k - 1])
        return np.sum(np.abs(w), axis=-1)


def build_asymptotic(spec: SystemSpec, sector: Sector, x_inf: float = 40.0, omega: complex | None = None,
                     config: IntegratorConfig = IntegratorConfig(), order: int = 120) -> AsymptoticBasis:
    omega = sector.bisector if omega is None else complex(omega) / abs(omega)
    if not sector.contains(omega, closed=True):
        raise ValueError("direction lies outside the closed sector")
    return AsymptoticBasis(spec, sector, omega, x_inf, AsymptoticSeries.build(spec, sector, order), config)


# nondegeneracy of the unperturbed problem ------------------------------

@dataclass
class Nondegeneracy:
    sector: Sector
    x_star: float
    values: np.ndarray          # Delta_0k for k = 2..n at x_star * bisector
    floor: float

    @property
    def ok(self) -> bool:
        return bool(np.all(np.abs(self.values) > self.floor))

    @property
    def margin(self) -> float:
        return float(np.min(np.abs(self.values))) if len(self.values) else math.inf


def check_nondegeneracy(spec: SystemSpec, sector: Sector, x_star: float = 1.0, frob: FrobeniusBasis | None = None,
                     floor: float = 1e-8, z_min: float = 30.0,
                     config: IntegratorConfig = IntegratorConfig()) -> Nondegeneracy:
    """``Delta_0k = det(e_1, ..., e_{k-1}, c_k, ..., c_n)`` at ``z = x_star * bisector``."""
    n = spec.n
    if frob is None or frob.radius < x_star:
        frob = build_frobenius(spec, radius=max(1.0, x_star))
    series = AsymptoticSeries.build(spec, sector)
    omega = sector.bisector
    z = x_star * omega
    vals = []
    for k in range(2, n + 1):
        Ft = ray_flags(spec, series, omega, [x_star], k - 1, z_min, config)[0]
        Tk = frob.regular_wedge(np.array([z]), k, sector)[0]
        vals.append(np.exp(z * head_shift(sector, k - 1)) * ext.pair_dense(Ft, Tk, n, k - 1))
    return Nondegeneracy(sector, x_star, np.array(vals, dtype=complex), floor)


# unperturbed Weyl matrix ------------------------------------------------------

@dataclass
class UnperturbedWeyl:
    """``psi_0 = c . a`` with ``a`` lower triangular (``a[j, k] = 0`` for ``j < k``).

    The connection matrix is computed at ``z_match`` on the bisector by requiring
    ``e_1^...^e_{k-1} ^ psi_0k = e_1^...^e_k``; it is constant on the closed sector.
    """

    spec: SystemSpec
    sector: Sector
    frob: FrobeniusBasis
    connection: np.ndarray
    z_match: complex
    delta0: np.ndarray
    residual: float

    def psi0(self, z) -> np.ndarray:
        """``psi_0(z)`` for ``|z|`` within the Frobenius radius."""
        return self.frob.evaluate(z, self.sector) @ self.connection

    def Psi0(self, x, rho) -> np.ndarray:
        """``Psi_0(x, rho) = psi_0(rho x)``; large ``|rho x|`` goes through the flag solver."""
        z = complex(rho) * float(x)
        if abs(z) <= self.frob.radius:
            return self.psi0(np.array(z))
        from .weyl import WeylEvaluator
        ev = WeylEvaluator(self.spec.without_potential(), self.sector)
        res = ev.unperturbed([float(x)], [complex(rho)])
        return res.Psi[0, 0]

    def scaled(self, x, rho) -> np.ndarray:
        """``Psi_0 e^{-rho x R}``."""
        return self.Psi0(x, rho) * np.exp(-complex(rho) * float(x) * self.sector.R)[None, :]


def build_unperturbed_weyl(spec: SystemSpec, sector: Sector, frob: FrobeniusBasis | None = None,
                           s_match: float = 0.5, z_min: float = 30.0,
                           config: IntegratorConfig = IntegratorConfig()) -> UnperturbedWeyl:
    n = spec.n
    frob = frob or build_frobenius(spec)
    if s_match > frob.radius:
        raise ValueError("matching point outside the Frobenius radius")
    series = AsymptoticSeries.build(spec, sector)
    omega = sector.bisector
    z = s_match * omega
    C = frob.evaluate(np.array(z), sector)
    flags = [np.ones(1, dtype=complex)] + [ray_flags(spec, series, omega, [s_match], k, z_min, config)[0]
                                            for k in range(1, n + 1)]
    a = np.zeros((n, n), dtype=complex)
    worst = 0.0
    delta0 = []
    for k in range(1, n + 1):
        # F~_{k-1} ^ (e^{-z R_k} c_j) for j >= k, matched against F~_k
        scale = np.exp(-z * sector.R[k - 1])
        cols = [ext.wedge_dense(flags[k - 1], scale * C[:, j], n, k - 1, 1) for j in range(k - 1, n)]
        Mmat = np.stack(cols, axis=1)
        sol, *_ = np.linalg.lstsq(Mmat, flags[k], rcond=None)
        worst = max(worst, float(np.linalg.norm(Mmat @ sol - flags[k])))
        a[k - 1:, k - 1] = sol
        if k >= 2:
            Tk = ext.wedge_columns_dense(C, range(k - 1, n))
            delta0.append(np.exp(z * head_shift(sector, k - 1)) * ext.pair_dense(flags[k - 1], Tk, n, k - 1))
    return UnperturbedWeyl(spec, sector, frob, a, z, np.array(delta0), worst)


def nondegeneracy_all(spec: SystemSpec, x_star: float = 1.0, floor: float = 1e-8) -> list[Nondegeneracy]:
    """Nondegeneracy on every sector of the geometry of ``B``."""
    geom = sector_geometry(spec.b)
    frob = build_frobenius(spec, radius=max(1.0, x_star))
    return [check_nondegeneracy(spec, s, x_star, frob, floor) for s in geom.sectors]
