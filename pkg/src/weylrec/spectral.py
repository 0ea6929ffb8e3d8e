"""Spectral mappings matrix ``P = Psi Psi_0^-1`` and its jump across the separation rays.

On ray ``nu`` the ``-`` value comes from sector ``nu`` and the ``+`` value from
sector ``nu + 1``; both are evaluated directly at the ray point, since the
scaled flags extend continuously to the closed sectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .model import Sector, SectorGeometry, SystemSpec, sector_geometry
from .weyl import WeylConfig, WeylEvaluator, WeylResult


def inverse(M: np.ndarray) -> np.ndarray:
    """Batched inverse; explicit adjugate for ``n <= 3``."""
    n = M.shape[-1]
    if n == 1:
        return 1.0 / M
    if n == 2:
        a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
        det = a * d - b * c
        adj = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2)
        return adj / det[..., None, None]
    if n == 3:
        adj = np.empty_like(M)
        for i in range(3):
            for j in range(3):
                r = [k for k in range(3) if k != j]
                c = [k for k in range(3) if k != i]
                minor = M[..., r[0], c[0]] * M[..., r[1], c[1]] - M[..., r[0], c[1]] * M[..., r[1], c[0]]
                adj[..., i, j] = (-1) ** (i + j) * minor
        det = np.einsum("...j,...j->...", M[..., 0, :], adj[..., :, 0])
        return adj / det[..., None, None]
    return np.linalg.inv(M)


@dataclass
class SpectralSample:
    """``P`` on a grid ``xs x rhos`` for one sector."""

    xs: np.ndarray
    rhos: np.ndarray
    sector: int
    P: np.ndarray
    weyl: WeylResult
    free: WeylResult

    @property
    def det_free(self) -> np.ndarray:
        """``det Psi~_0``; equals ``det f = +-1``."""
        return np.linalg.det(self.free.scaled)


def spectral_grid(spec: SystemSpec, sector: Sector, xs, rhos, config: WeylConfig = WeylConfig()) -> SpectralSample:
    ev = WeylEvaluator(spec, sector, config)
    full, free = ev.perturbation(xs, rhos)
    # the exponentials cancel: Psi Psi_0^-1 = Psi~ Psi~_0^-1
    P = full.scaled @ inverse(free.scaled)
    return SpectralSample(full.xs, full.rhos, sector.index, P, full, free)


def spectral_map(spec: SystemSpec, x: float, rho: complex, sector: Sector,
                 config: WeylConfig = WeylConfig()) -> np.ndarray:
    return spectral_grid(spec, sector, [x], [rho], config).P[0, 0]


@dataclass
class RaySample:
    """One-sided values and the jump on ray ``nu`` at ``rho = t * omega``."""

    ray: int
    omega: complex
    xs: np.ndarray
    ts: np.ndarray
    P_minus: np.ndarray
    P_plus: np.ndarray
    delta_min: float

    @property
    def rhos(self) -> np.ndarray:
        return self.ts * self.omega

    @property
    def P_hat(self) -> np.ndarray:
        return self.P_plus - self.P_minus


def boundary_values(spec: SystemSpec, nu: int, xs, ts, geometry: SectorGeometry | None = None,
                    config: WeylConfig = WeylConfig()) -> RaySample:
    geometry = geometry or sector_geometry(spec.b)
    omega = geometry.ray(nu)
    minus, plus = geometry.banks(nu)
    rhos = np.asarray(ts, dtype=float) * omega
    lo = spectral_grid(spec, minus, xs, rhos, config)
    hi = spectral_grid(spec, plus, xs, rhos, config)
    dmin = float(min(np.abs(lo.weyl.delta).min(), np.abs(hi.weyl.delta).min()))
    return RaySample(nu, omega, lo.xs, np.asarray(ts, dtype=float), lo.P, hi.P, dmin)


def characteristic_minimum(spec: SystemSpec, sector: Sector, rhos, x: float = 1.0,
                           config: WeylConfig = WeylConfig()) -> np.ndarray:
    """``min_k |Delta_k(rho)|`` over the given ``rho``."""
    res = WeylEvaluator(spec, sector, config).evaluate([x], rhos)
    return np.abs(res.delta[0]).min(axis=-1)


def sector_samples(sector: Sector, count: int, radius: float, inner: float = 0.1) -> np.ndarray:
    """Deterministic ``rho`` points spread over the closed sector (boundary rays included)."""
    k = int(np.ceil(np.sqrt(count)))
    angles = np.linspace(sector.start, sector.end, k)
    radii = np.geomspace(inner, radius, int(np.ceil(count / k)))
    pts = (radii[None, :] * np.exp(1j * angles)[:, None]).ravel()
    return pts[:count]


# sample store -------------------------------------------------------------------

def _matrix(M: np.ndarray) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in M]


def _unmatrix(data) -> np.ndarray:
    return np.array([[complex(*v) for v in row] for row in data])


def write_samples(path: str | Path, samples: Iterable[RaySample]) -> int:
    """Append every ``(x, rho)`` jump as one JSON line; returns the line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            for i, x in enumerate(s.xs):
                for j, rho in enumerate(s.rhos):
                    rec = {"x": float(x), "rho": [float(rho.real), float(rho.imag)],
                           "ray_index": int(s.ray), "P_hat": _matrix(s.P_hat[i, j])}
                    fh.write(json.dumps(rec) + "\n")
                    count += 1
    return count


def read_samples(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                yield {"x": rec["x"], "rho": complex(*rec["rho"]), "ray_index": rec["ray_index"],
                       "P_hat": _unmatrix(rec["P_hat"])}
