"""System definition ``y' - x^-1 A y - q(x) y = rho B y`` and spectral-plane geometry."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gamma, gammaincc

GAP_TOL = 1e-9
COLLINEAR_TOL = 1e-12
SMALL_REAL_PART = 1e-3


class SpecFormatError(ValueError):
    """The system specification file is malformed."""


class EigenSolverError(RuntimeError):
    """Eigen-decomposition of A failed; not an assumption failure."""


@dataclass(frozen=True)
class Term:
    """One summand ``c * x**a * exp(-sigma * x)``."""

    c: complex
    a: float
    sigma: float

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.c * x ** self.a * np.exp(-self.sigma * x)

    def derivative(self):
        """Derivative as a list of terms of the same family (exponents may drop below 1)."""
        out = []
        if self.a != 0:
            out.append(Term(self.c * self.a, self.a - 1, self.sigma))
        out.append(Term(-self.c * self.sigma, self.a, self.sigma))
        return out

    def integral_from(self, x, power_shift: float = 0.0):
        """``int_x^inf c t**(a + power_shift) e^{-sigma t} dt`` in closed form."""
        s = self.a + power_shift + 1.0
        if s <= 0:
            raise ValueError("integrand not integrable at the origin for this exponent")
        x = np.asarray(x, dtype=float)
        return self.c * gamma(s) * gammaincc(s, self.sigma * x) / self.sigma ** s


@dataclass(frozen=True)
class PotentialModel:
    """Off-diagonal ``q_ij(x) = sum c x^a e^{-sigma x}``; keys are 0-based ``(i, j)``."""

    n: int
    entries: Mapping[tuple[int, int], tuple[Term, ...]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (i, j), terms in self.entries.items():
            terms = tuple(t for t in terms if t.c != 0)
            if terms:
                clean[(int(i), int(j))] = terms
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    @property
    def is_zero(self) -> bool:
        return not self.entries

    def scaled(self, factor: complex) -> "PotentialModel":
        return PotentialModel(self.n, {
            key: tuple(Term(factor * t.c, t.a, t.sigma) for t in terms)
            for key, terms in self.entries.items()})

    def entry(self, i: int, j: int, x):
        return sum((t.value(x) for t in self.entries.get((i, j), ())), np.zeros_like(np.asarray(x, float), dtype=complex))

    def __call__(self, x) -> np.ndarray:
        """Matrix ``q(x)``; ``x`` may be an array, giving shape ``x.shape + (n, n)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.n, self.n), dtype=complex)
        for (i, j), terms in self.entries.items():
            out[..., i, j] = sum(t.value(x) for t in terms)
        return out

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.n, self.n), dtype=complex)
        for (i, j), terms in self.entries.items():
            out[..., i, j] = sum(d.value(x) for t in terms for d in t.derivative())
        return out

    def tail_l1(self, x: float) -> float:
        """Upper bound of ``int_x^inf ||q(t)|| dt`` (entrywise absolute sum)."""
        total = 0.0
        for terms in self.entries.values():
            for t in terms:
                total += abs(t.c) * float(np.real(Term(1.0, t.a, t.sigma).integral_from(x)))
        return total

    def min_decay(self) -> float:
        return min((t.sigma for terms in self.entries.values() for t in terms), default=math.inf)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    kind: str = "assumption"


@dataclass
class ValidationReport:
    checks: list[Check]
    mu: np.ndarray | None = None
    eigenvectors: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def numerical_failure(self) -> bool:
        return any(not c.passed and c.kind == "numerical" for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class SystemSpec:
    A: np.ndarray
    b: np.ndarray
    potential: PotentialModel
    p: float = 3.0

    def __post_init__(self):
        A = np.array(self.A, dtype=complex)
        b = np.array(self.b, dtype=complex).ravel()
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return len(self.b)

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.b)

    def without_potential(self) -> "SystemSpec":
        return SystemSpec(self.A, self.b, PotentialModel(self.n), self.p)

    def with_potential(self, potential: PotentialModel) -> "SystemSpec":
        return SystemSpec(self.A, self.b, potential, self.p)

    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues ordered by real part and eigenvectors with ``det H = 1``."""
        try:
            mu, H = np.linalg.eig(self.A)
        except np.linalg.LinAlgError as exc:
            raise EigenSolverError(str(exc)) from exc
        order = np.lexsort((mu.imag, mu.real))
        mu, H = mu[order], H[:, order]
        H = H / np.linalg.norm(H, axis=0)
        det = np.linalg.det(H)
        if abs(det) < 1e-14:
            raise EigenSolverError("eigenvectors of A are numerically dependent")
        H[:, 0] /= det
        return mu, H


def validate(spec: SystemSpec) -> ValidationReport:
    """Check every standing assumption on ``(A, B, q, p)``; failures carry witnesses."""
    checks: list[Check] = []
    warnings: list[str] = []
    A, b, n = spec.A, spec.b, spec.n

    square = A.ndim == 2 and A.shape == (n, n)
    checks.append(Check("square", square, f"A shape {A.shape}, {n} entries in B"))
    if not square:
        return ValidationReport(checks)
    checks.append(Check("dimension", 2 <= n <= 8, f"n = {n}"))

    diag = np.abs(np.diag(A))
    checks.append(Check("A-offdiagonal", bool(np.all(diag == 0)),
                        "" if np.all(diag == 0) else f"diagonal entries {np.diag(A)}"))

    mu = H = None
    try:
        mu, H = spec.spectrum()
    except EigenSolverError as exc:
        checks.append(Check("eigensolver", False, str(exc), kind="numerical"))
    if mu is not None:
        checks.append(Check("eigensolver", True, kind="numerical"))
        pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
        close = [(j, k) for j, k in pairs if abs(mu[j] - mu[k]) <= GAP_TOL]
        checks.append(Check("mu-distinct", not close, f"coinciding pairs {close}" if close else ""))
        bad = []
        for j, k in pairs:
            d = mu[j] - mu[k]
            if abs(d.imag) <= GAP_TOL and abs(d.real - round(d.real)) <= GAP_TOL:
                bad.append((j + 1, k + 1, complex(d)))
        checks.append(Check("mu-gap-nonintegral", not bad,
                            f"integer gaps {bad}" if bad else f"mu = {mu}"))
        gaps = np.diff(mu.real)
        checks.append(Check("mu-real-part-ordered", bool(np.all(gaps > GAP_TOL)),
                            f"Re mu = {mu.real}"))
        zero = [k + 1 for k in range(n) if abs(mu[k].real) <= 1e-12]
        checks.append(Check("mu-real-part-nonzero", not zero, f"Re mu_k = 0 for k in {zero}" if zero else ""))
        small = [k + 1 for k in range(n) if 1e-12 < abs(mu[k].real) < SMALL_REAL_PART]
        if small:
            warnings.append(f"|Re mu_k| < {SMALL_REAL_PART} for k in {small}: matching at 0 is ill-conditioned")

    scale = float(np.max(np.abs(b))) if n else 0.0
    checks.append(Check("B-nonzero", bool(np.all(np.abs(b) > 0)), f"b = {b}"))
    dup = [(j + 1, k + 1) for j in range(n) for k in range(j + 1, n) if b[j] == b[k]]
    checks.append(Check("B-distinct", not dup, f"equal pairs {dup}" if dup else ""))
    s = complex(np.sum(b))
    checks.append(Check("B-sum-zero", abs(s) <= 1e-12 * max(scale, 1.0), f"sum b = {s}"))
    col = []
    for i, j, k in _triples(n):
        area = ((b[j] - b[i]) * np.conj(b[k] - b[i])).imag
        if abs(area) <= COLLINEAR_TOL * scale ** 3:
            col.append((i + 1, j + 1, k + 1))
    checks.append(Check("B-noncollinear", not col, f"collinear triples {col}" if col else ""))

    checks.append(Check("p-gt-2", spec.p > 2, f"p = {spec.p}"))
    pot = spec.potential
    checks.append(Check("potential-dimension", pot.n == n, f"potential n = {pot.n}"))
    on_diag = [i + 1 for (i, j) in pot.entries if i == j]
    checks.append(Check("potential-offdiagonal", not on_diag,
                        f"diagonal entries at {on_diag}" if on_diag else ""))
    low = [(i + 1, j + 1, t.a) for (i, j), ts in pot.entries.items() for t in ts if t.a < 1]
    checks.append(Check("potential-exponent-ge-1", not low, f"exponents below 1: {low}" if low else ""))
    slow = [(i + 1, j + 1, t.sigma) for (i, j), ts in pot.entries.items() for t in ts if not t.sigma > 0]
    checks.append(Check("potential-decay-positive", not slow, f"non-decaying terms: {slow}" if slow else ""))

    ok = all(c.passed for c in checks)
    return ValidationReport(checks, mu if ok else None, H if ok else None, warnings)


def _triples(n: int) -> Iterable[tuple[int, int, int]]:
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                yield i, j, k


# sector geometry -------------------------------------------------------------

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Sector:
    """Open sector ``start < arg z < end`` with its growth ordering.

    ``order[k]`` is the 0-based index of ``b`` that plays the role of
    ``R_{k+1}``, so the permutation matrix has ``f[:, k] = e_{order[k]}``.
    """

    index: int
    start: float
    end: float
    order: tuple[int, ...]
    R: np.ndarray
    f: np.ndarray

    @property
    def bisector(self) -> complex:
        return complex(np.exp(0.5j * (self.start + self.end)))

    @property
    def det_f(self) -> float:
        return float(np.linalg.det(self.f.real))

    def arg(self, z) -> np.ndarray:
        """Argument of ``z`` taken in ``[start, start + 2 pi)``, continuous on the closed sector."""
        th = np.angle(np.asarray(z, dtype=complex))
        return self.start + np.mod(th - self.start + 1e-13, TWO_PI) - 1e-13

    def contains(self, z, closed: bool = False) -> np.ndarray:
        a = self.arg(z)
        tol = 1e-12
        if closed:
            return (a >= self.start - tol) & (a <= self.end + tol)
        return (a > self.start + tol) & (a < self.end - tol)

    def margin(self, z) -> float:
        """Smallest gap ``Re(R_{k+1} z) - Re(R_k z)`` over ``|z|``; positive inside the sector."""
        z = complex(z)
        vals = (self.R * z).real / abs(z)
        return float(np.min(np.diff(vals)))


@dataclass(frozen=True)
class SectorGeometry:
    """Separation rays (angles in ``[0, 2 pi)``, counterclockwise) and the sectors between them.

    Sector ``nu`` (1-based) spans ``(theta_{nu-1}, theta_nu)`` so that ray ``nu``
    separates sector ``nu`` (clockwise side, ``-`` bank) from sector ``nu + 1``
    (counterclockwise side, ``+`` bank).
    """

    b: np.ndarray
    angles: np.ndarray
    sectors: tuple[Sector, ...]
    ray_pairs: tuple[tuple[tuple[int, int], ...], ...]
    degenerate: tuple[str, ...] = ()

    @property
    def N(self) -> int:
        return len(self.angles)

    def ray(self, nu: int) -> complex:
        return complex(np.exp(1j * self.angles[nu - 1]))

    def sector(self, nu: int) -> Sector:
        return self.sectors[(nu - 1) % self.N]

    def banks(self, nu: int) -> tuple[Sector, Sector]:
        """``(minus, plus)`` sectors adjacent to ray ``nu``."""
        return self.sector(nu), self.sector(nu + 1)

    def locate(self, z) -> Sector:
        for s in self.sectors:
            if s.contains(z):
                return s
        raise ValueError(f"{z} lies on the separation set")


def _ordering(b: np.ndarray, z: complex) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argsort((b * z).real, kind="stable"))


def sector_geometry(b: Sequence[complex], tol: float = 1e-10) -> SectorGeometry:
    """Rays where ``Re(z b_j) = Re(z b_k)``, sorted by angle, with per-sector orderings."""
    b = np.asarray(b, dtype=complex)
    n = len(b)
    raw: list[tuple[float, tuple[int, int]]] = []
    for j in range(n):
        for k in range(j + 1, n):
            d = b[j] - b[k]
            if d == 0:
                raise ValueError("entries of B must be distinct")
            w = 1j * np.conj(d) / abs(d)
            for direction in (w, -w):
                raw.append((float(np.mod(np.angle(direction), TWO_PI)), (j + 1, k + 1)))
    raw.sort()
    angles: list[float] = []
    pairs: list[list[tuple[int, int]]] = []
    for th, pair in raw:
        if angles and (th - angles[-1] < tol):
            pairs[-1].append(pair)
        elif angles and (angles[0] + TWO_PI - th < tol):
            pairs[0].append(pair)
        else:
            angles.append(th)
            pairs.append([pair])
    degenerate = tuple(f"ray at angle {angles[i]:.12g} shared by pairs {p}"
                       for i, p in enumerate(pairs) if len(p) > 1)
    N = len(angles)
    sectors = []
    for nu in range(1, N + 1):
        start = angles[nu - 2] if nu > 1 else angles[-1] - TWO_PI
        end = angles[nu - 1]
        mid = complex(np.exp(0.5j * (start + end)))
        order = _ordering(b, mid)
        f = np.zeros((n, n))
        for k, i in enumerate(order):
            f[i, k] = 1.0
        sectors.append(Sector(nu, start, end, order, b[list(order)], f))
    geom = SectorGeometry(b, np.array(angles), tuple(sectors), tuple(tuple(p) for p in pairs), degenerate)
    for s in geom.sectors:
        if not s.margin(s.bisector) > 0:
            raise ValueError(f"ordering check failed at bisector of sector {s.index}")
    return geom


# file format -----------------------------------------------------------------

def _complex(v, where: str) -> complex:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
        return complex(v[0], v[1])
    raise SpecFormatError(f"{where}: expected [re, im], got {v!r}")


def _pair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def spec_from_dict(data: Mapping) -> SystemSpec:
    try:
        A_raw = data["A"]
        b_raw = data["B"]
    except (KeyError, TypeError) as exc:
        raise SpecFormatError(f"missing field {exc}") from exc
    if not isinstance(A_raw, list) or not all(isinstance(r, list) for r in A_raw):
        raise SpecFormatError("A must be a list of rows")
    A = np.array([[_complex(v, f"A[{i}][{j}]") for j, v in enumerate(row)] for i, row in enumerate(A_raw)])
    if not isinstance(b_raw, list):
        raise SpecFormatError("B must be a list of diagonal entries")
    b = np.array([_complex(v, f"B[{i}]") for i, v in enumerate(b_raw)])
    n = len(b)
    if "n" in data and data["n"] != n:
        raise SpecFormatError(f"n = {data['n']} but B has {n} entries")
    entries: dict[tuple[int, int], tuple[Term, ...]] = {}
    for e, item in enumerate(data.get("potential", [])):
        try:
            i, j = int(item["i"]) - 1, int(item["j"]) - 1
            terms = tuple(Term(_complex(t["c"], f"potential[{e}].c"), float(t["a"]), float(t["sigma"]))
                          for t in item["terms"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecFormatError(f"potential[{e}]: {exc}") from exc
        if not (0 <= i < n and 0 <= j < n):
            raise SpecFormatError(f"potential[{e}]: index ({i + 1}, {j + 1}) outside 1..{n}")
        entries[(i, j)] = entries.get((i, j), ()) + terms
    return SystemSpec(A, b, PotentialModel(n, entries), float(data.get("p", 3.0)))


def spec_to_dict(spec: SystemSpec) -> dict:
    return {
        "n": spec.n,
        "A": [[_pair(v) for v in row] for row in spec.A],
        "B": [_pair(v) for v in spec.b],
        "p": spec.p,
        "potential": [
            {"i": i + 1, "j": j + 1,
             "terms": [{"c": _pair(t.c), "a": t.a, "sigma": t.sigma} for t in terms]}
            for (i, j), terms in spec.potential.entries.items()],
    }


def load_spec(path: str | Path) -> SystemSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SpecFormatError(f"{path}: {exc}") from exc
    return spec_from_dict(data)


def save_spec(spec: SystemSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")


_SYSTEMS = Path(__file__).with_name("systems")


def reference_system(name: str = "reference_n2") -> SystemSpec:
    """Bundled systems: ``reference_n2``, ``reference_n3``, ``free_n2``, ``cancelling_n2``, ``resonant_n3``.

    ``resonant_n3`` has the potential of ``reference_n3`` at 10/3 times the
    amplitude; its ``Delta_3`` vanishes at two points inside sector 4.
    """
    return load_spec(_SYSTEMS / f"{name}.json")
