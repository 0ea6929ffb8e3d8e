"""Large-``rho`` behaviour of the Weyl matrix.

With ``qo`` the off-diagonal solution of ``[B, qo] = -q`` and

    d_k(x) = int_x^inf t^-1 [qo(t), A]_kk dt,    qh = qo + d,

the scaled difference ``rho (Psi - Psi_0) e^{-rho x R}`` approaches
``f Gamma(x) + qh(x) f`` on interior rays, with ``Gamma`` an unknown diagonal.
Every check below is invariant to ``Gamma``: it only uses the off-diagonal part
of ``f^-1 (rho (Psi - Psi_0) e^{-rho x R} - qh f)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import SectorGeometry, SystemSpec, Term, sector_geometry
from .numerics import quad_adaptive
from .weyl import WeylConfig, WeylEvaluator


def qhat_o(q: np.ndarray, b) -> np.ndarray:
    """Off-diagonal ``X`` with ``[B, X] = -q``: ``X_ij = -q_ij / (b_i - b_j)``."""
    b = np.asarray(b, dtype=complex)
    gaps = b[:, None] - b[None, :]
    np.fill_diagonal(gaps, 1.0)
    out = -np.asarray(q, dtype=complex) / gaps
    idx = np.arange(len(b))
    out[..., idx, idx] = 0.0
    return out


def qhat_o_terms(spec: SystemSpec) -> dict[tuple[int, int], tuple[Term, ...]]:
    b = spec.b
    return {(i, j): tuple(Term(-t.c / (b[i] - b[j]), t.a, t.sigma) for t in terms)
            for (i, j), terms in spec.potential.entries.items()}


def diagonal_commutator_terms(spec: SystemSpec) -> list[list[Term]]:
    """``[qo, A]_kk = sum_l (qo_kl A_lk - A_kl qo_lk)`` as term lists."""
    A = spec.A
    qo = qhat_o_terms(spec)
    out: list[list[Term]] = [[] for _ in range(spec.n)]
    for (i, j), terms in qo.items():
        for t in terms:
            if A[j, i] != 0:
                out[i].append(Term(t.c * A[j, i], t.a, t.sigma))
                out[j].append(Term(-t.c * A[j, i], t.a, t.sigma))
    return out


def _eval_terms(terms, x, power_shift: float = 0.0):
    x = np.asarray(x, dtype=float)
    return sum((t.c * x ** (t.a + power_shift) * np.exp(-t.sigma * x) for t in terms),
               np.zeros_like(x, dtype=complex))


def _tail_bound(terms, X: float, power_shift: float) -> float:
    return sum(abs(t.c) * float(Term(1.0, t.a, t.sigma).integral_from(X, power_shift).real) for t in terms)


def d_exact(spec: SystemSpec, x) -> np.ndarray:
    """Closed form of ``d_k(x)`` through incomplete Gamma functions; shape ``x.shape + (n,)``."""
    x = np.asarray(x, dtype=float)
    rows = diagonal_commutator_terms(spec)
    return np.stack([sum((t.integral_from(x, -1.0) for t in terms), np.zeros_like(x, dtype=complex))
                     for terms in rows], axis=-1)


def d_diagonal(spec: SystemSpec, x: float, tol: float = 1e-12, cutoff: float | None = None) -> tuple[np.ndarray, float]:
    """``d_k(x)`` by adaptive quadrature on ``[x, X]``; ``X`` doubles until the tail bound is below ``tol``."""
    rows = diagonal_commutator_terms(spec)
    if all(not r for r in rows):
        return np.zeros(spec.n, dtype=complex), 0.0
    sigma = min(t.sigma for r in rows for t in r)
    X = cutoff if cutoff is not None else max(2 * x, x + 40.0 / sigma)
    all_terms = [t for r in rows for t in r]
    while _tail_bound(all_terms, X, -1.0) > tol:
        X *= 2
    integrand = lambda t: np.array([_eval_terms(r, t, -1.0) for r in rows])
    res = quad_adaptive(integrand, float(x), math.inf, tol=tol, cutoff=X,
                        tail_bound=lambda c: _tail_bound(all_terms, c, -1.0))
    return np.asarray(res.value, dtype=complex), res.error


def d_matrix(spec: SystemSpec, x: float, tol: float = 1e-12) -> np.ndarray:
    return np.diag(d_diagonal(spec, x, tol)[0])


def qhat(spec: SystemSpec, x: float, tol: float = 1e-12) -> np.ndarray:
    return qhat_o(spec.potential(float(x)), spec.b) + d_matrix(spec, x, tol)


def qtilde(spec: SystemSpec, x: float, tol: float = 1e-12) -> np.ndarray:
    """``qh' + x^-1 [qh, A]`` using ``d_k' = -x^-1 [qo, A]_kk``."""
    A = spec.A
    qo = qhat_o(spec.potential(float(x)), spec.b)
    dqo = qhat_o(spec.potential.derivative(float(x)), spec.b)
    qh = qo + d_matrix(spec, x, tol)
    comm = qo @ A - A @ qo
    d_prime = -np.diag(np.diag(comm)) / x
    return dqo + d_prime + (qh @ A - A @ qh) / x


# membership of the companion potential --------------------------------------------

@dataclass
class EntryVerdict:
    """``q~_ij`` = regular family part + ``c_sing / x`` near the origin."""

    i: int
    j: int
    singular: complex             # coefficient of x^-1 at the origin
    regular_l1: float             # closed-form L1 bound of the qo' and x^-1 offdiag[qo, A] part
    in_l1: bool
    in_lp: bool


@dataclass
class QTildeMembership:
    d0: np.ndarray
    entries: list[EntryVerdict]
    p: float

    @property
    def in_l1(self) -> bool:
        return all(e.in_l1 for e in self.entries)

    @property
    def in_lp(self) -> bool:
        return all(e.in_lp for e in self.entries)

    @property
    def ok(self) -> bool:
        return self.in_l1 and self.in_lp

    def failures(self) -> list[str]:
        return [f"q~[{e.i + 1},{e.j + 1}] ~ {e.singular:.4g}/x at 0" for e in self.entries if not e.in_l1]


def qtilde_membership(spec: SystemSpec, atol: float = 1e-14) -> QTildeMembership:
    """Symbolic integrability of ``q~`` on ``(0, inf)``.

    ``qo'`` and ``x^-1 offdiag[qo, A]`` are sums of ``c x^a e^{-sigma x}`` with
    ``a >= 0``; ``x^-1 [d, A]`` decays exponentially and behaves like
    ``x^-1 [d(0), A]`` at the origin, which is integrable only if it vanishes.
    """
    n = spec.n
    A = spec.A
    d0 = d_exact(spec, 0.0)
    sing = (d0[:, None] - d0[None, :]) * A
    qo = qhat_o_terms(spec)
    regular: dict[tuple[int, int], list[Term]] = {}
    for (i, j), terms in qo.items():
        for t in terms:
            regular.setdefault((i, j), []).extend(t.derivative())
            for l in range(n):
                # x^-1 (qo_ij A_jl) lands in (i, l); x^-1 (-A_li qo_ij) lands in (l, j)
                if l != i and A[j, l] != 0:
                    regular.setdefault((i, l), []).append(Term(t.c * A[j, l], t.a - 1, t.sigma))
                if l != j and A[l, i] != 0:
                    regular.setdefault((l, j), []).append(Term(-t.c * A[l, i], t.a - 1, t.sigma))
    entries = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            terms = regular.get((i, j), [])
            l1 = sum(abs(t.c) * math.gamma(t.a + 1) / t.sigma ** (t.a + 1) for t in terms)
            c = complex(sing[i, j])
            ok = abs(c) <= atol
            entries.append(EntryVerdict(i, j, c, l1, ok, ok))
    return QTildeMembership(d0, entries, spec.p)


# residual of the large-rho expansion ---------------------------------------------------

@dataclass
class LargeRhoResidual:
    x: float
    omega: complex
    radii: np.ndarray
    offdiag: np.ndarray          # || offdiag f^-1 D(rho) ||_F per |rho|
    diag: np.ndarray             # || diag f^-1 D(rho) ||_F (houses Gamma; only boundedness matters)
    p_offdiag: np.ndarray        # || offdiag(rho (P - I)) - offdiag(qh) ||_F
    qhat_norm: float

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.offdiag) < 0))

    def passes(self, fraction: float = 0.05) -> bool:
        return self.decreasing and bool(self.offdiag[-1] <= fraction * self.qhat_norm)


def _offdiag(M: np.ndarray) -> np.ndarray:
    n = M.shape[-1]
    return M * (1 - np.eye(n))


def large_rho_residual(spec: SystemSpec, xs, omega: complex, radii=(10, 20, 40, 80),
                      geometry: SectorGeometry | None = None,
                      config: WeylConfig = WeylConfig()) -> list[LargeRhoResidual]:
    """Residuals along the interior ray ``rho = r omega`` at every ``x``."""
    geometry = geometry or sector_geometry(spec.b)
    omega = complex(omega) / abs(omega)
    sector = geometry.locate(omega)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    radii = np.asarray(radii, dtype=float)
    rhos = radii * omega
    ev = WeylEvaluator(spec, sector, config)
    full, free = ev.perturbation(xs, rhos)
    f = sector.f
    P = full.scaled @ np.linalg.inv(free.scaled)
    out = []
    for ix, x in enumerate(xs):
        qh = qhat(spec, x)
        target = f.T @ qh @ f
        fD = rhos[:, None, None] * full.gamma[ix] - target
        off = np.linalg.norm(_offdiag(fD), axis=(-2, -1))
        dia = np.linalg.norm(fD - _offdiag(fD), axis=(-2, -1))
        pr = np.linalg.norm(_offdiag(rhos[:, None, None] * (P[ix] - np.eye(spec.n))) - _offdiag(qh), axis=(-2, -1))
        out.append(LargeRhoResidual(float(x), omega, radii, off, dia, pr, float(np.linalg.norm(qh))))
    return out


def write_residual_csv(path: str | Path, results: list[LargeRhoResidual]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "ray_angle", "abs_rho", "offdiag_norm", "diag_norm", "p_offdiag_norm", "qhat_norm"])
        for r in results:
            for k, rad in enumerate(r.radii):
                w.writerow([f"{r.x:.12g}", f"{np.angle(r.omega):.12g}", f"{rad:.12g}", f"{r.offdiag[k]:.12e}",
                            f"{r.diag[k]:.12e}", f"{r.p_offdiag[k]:.12e}", f"{r.qhat_norm:.12e}"])
