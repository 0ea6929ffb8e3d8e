"""Exterior algebra over C^n on ordered multi-indices.

Multi-indices are 1-based, strictly increasing tuples. Every basis of
``wedge^m C^n`` is enumerated in lexicographic order, and that order is the
layout of all dense coefficient arrays in the package.

Two representations live side by side:

* :class:`GradedTensor`, a sparse immutable map ``multi-index -> coefficient``,
  used where exactness and readability matter;
* dense coefficient arrays (last axis of length ``C(n, m)``), used by the
  integrators, with cached index tables for wedge products and pairings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Iterable, Mapping

import numpy as np

MAX_DIM = 8


def _check_dim(n: int) -> None:
    if not 1 <= n <= MAX_DIM:
        raise ValueError(f"ambient dimension must lie in 1..{MAX_DIM}, got {n}")


def permutation_sign(seq: Iterable[int]) -> int:
    """Sign of the permutation that sorts ``seq`` (inversion count).

    Returns 0 when ``seq`` has a repeated entry.
    """
    s = list(seq)
    if len(set(s)) != len(s):
        return 0
    inversions = sum(1 for a in range(len(s)) for b in range(a + 1, len(s)) if s[a] > s[b])
    return -1 if inversions % 2 else 1


@lru_cache(maxsize=None)
def multi_indices(n: int, m: int) -> tuple[tuple[int, ...], ...]:
    """All ordered multi-indices of length ``m`` over ``1..n``, lexicographic."""
    _check_dim(n)
    if not 0 <= m <= n:
        raise ValueError(f"grade {m} outside 0..{n}")
    return tuple(combinations(range(1, n + 1), m))


@lru_cache(maxsize=None)
def _position(n: int, m: int) -> dict[tuple[int, ...], int]:
    return {alpha: i for i, alpha in enumerate(multi_indices(n, m))}


def position(alpha: tuple[int, ...], n: int) -> int:
    """Row of ``alpha`` in the dense layout of ``wedge^len(alpha) C^n``."""
    return _position(n, len(alpha))[tuple(alpha)]


@dataclass(frozen=True)
class MultiIndex:
    entries: tuple[int, ...]
    n: int

    def __post_init__(self):
        _check_dim(self.n)
        e = tuple(int(v) for v in self.entries)
        object.__setattr__(self, "entries", e)
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError(f"multi-index {e} is not strictly increasing")
        if e and (e[0] < 1 or e[-1] > self.n):
            raise ValueError(f"multi-index {e} leaves 1..{self.n}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def complement(self) -> "MultiIndex":
        return complement(self)[0]

    def sign(self) -> int:
        return complement(self)[1]


def complement(alpha: MultiIndex) -> tuple[MultiIndex, int]:
    """Complement ``alpha'`` of ``alpha`` in ``(1..n)`` and the sign ``|e_alpha ^ e_alpha'|``."""
    rest = tuple(j for j in range(1, alpha.n + 1) if j not in alpha.entries)
    return MultiIndex(rest, alpha.n), permutation_sign(alpha.entries + rest)


# arrow sums and products over a sequence a_1..a_n (1-based k)
def sum_head(a, k: int):
    return sum(a[:k])


def sum_tail(a, k: int):
    return sum(a[k - 1:])


def prod_head(a, k: int):
    return np.prod(a[:k])


def prod_tail(a, k: int):
    return np.prod(a[k - 1:])


def head(k: int) -> tuple[int, ...]:
    """``(1, ..., k)``."""
    return tuple(range(1, k + 1))


def tail(k: int, n: int) -> tuple[int, ...]:
    """``(k, ..., n)``."""
    return tuple(range(k, n + 1))


@dataclass(frozen=True)
class GradedTensor:
    """Element of ``wedge^grade C^n`` stored sparsely; absent keys are zero."""

    n: int
    grade: int
    coeffs: Mapping[tuple[int, ...], complex] = field(default_factory=dict)

    def __post_init__(self):
        _check_dim(self.n)
        if not 0 <= self.grade <= self.n:
            raise ValueError(f"grade {self.grade} outside 0..{self.n}")
        clean = {}
        for key, val in self.coeffs.items():
            key = tuple(key)
            MultiIndex(key, self.n)
            if len(key) != self.grade:
                raise ValueError(f"key {key} does not have grade {self.grade}")
            if val != 0:
                clean[key] = complex(val)
        object.__setattr__(self, "coeffs", clean)

    @classmethod
    def basis(cls, alpha: Iterable[int], n: int) -> "GradedTensor":
        """Return ``e_alpha``; ``alpha`` may be unsorted (sign applied)."""
        a = tuple(alpha)
        s = permutation_sign(a)
        return cls(n, len(a), {tuple(sorted(a)): s} if s else {})

    @classmethod
    def scalar(cls, value: complex, n: int) -> "GradedTensor":
        return cls(n, 0, {(): value})

    @classmethod
    def vector(cls, v) -> "GradedTensor":
        v = np.asarray(v, dtype=complex)
        return cls(len(v), 1, {(j + 1,): v[j] for j in range(len(v))})

    @classmethod
    def from_array(cls, arr, n: int, grade: int) -> "GradedTensor":
        arr = np.asarray(arr, dtype=complex)
        keys = multi_indices(n, grade)
        if arr.shape != (len(keys),):
            raise ValueError(f"expected {len(keys)} coefficients, got shape {arr.shape}")
        return cls(n, grade, dict(zip(keys, arr)))

    def to_array(self) -> np.ndarray:
        out = np.zeros(comb(self.n, self.grade), dtype=complex)
        for key, val in self.coeffs.items():
            out[position(key, self.n)] = val
        return out

    def __getitem__(self, alpha) -> complex:
        return self.coeffs.get(tuple(alpha), 0j)

    def _same_space(self, other: "GradedTensor") -> None:
        if (self.n, self.grade) != (other.n, other.grade):
            raise ValueError("tensors live in different spaces")

    def __add__(self, other: "GradedTensor") -> "GradedTensor":
        self._same_space(other)
        out = dict(self.coeffs)
        for key, val in other.coeffs.items():
            out[key] = out.get(key, 0) + val
        return GradedTensor(self.n, self.grade, out)

    def __neg__(self) -> "GradedTensor":
        return GradedTensor(self.n, self.grade, {k: -v for k, v in self.coeffs.items()})

    def __sub__(self, other: "GradedTensor") -> "GradedTensor":
        return self + (-other)

    def __mul__(self, scalar) -> "GradedTensor":
        return GradedTensor(self.n, self.grade, {k: scalar * v for k, v in self.coeffs.items()})

    __rmul__ = __mul__

    def __xor__(self, other: "GradedTensor") -> "GradedTensor":
        return wedge(self, other)

    def top(self) -> complex:
        """``|h|`` for a top-grade tensor, ``h = |h| e_1 ^ ... ^ e_n``."""
        if self.grade != self.n:
            raise ValueError("|h| is only defined on the top grade")
        return self[head(self.n)]

    def norm(self) -> float:
        """Sum of absolute coefficients."""
        return float(sum(abs(v) for v in self.coeffs.values()))


def wedge(u: GradedTensor, v: GradedTensor) -> GradedTensor:
    """Exterior product; raises ``ValueError`` when the grades overflow ``n``."""
    if u.n != v.n:
        raise ValueError("ambient dimensions differ")
    if u.grade + v.grade > u.n:
        raise ValueError(f"grade overflow: {u.grade} + {v.grade} > {u.n}")
    out: dict[tuple[int, ...], complex] = {}
    for ka, va in u.coeffs.items():
        for kb, vb in v.coeffs.items():
            s = permutation_sign(ka + kb)
            if s:
                key = tuple(sorted(ka + kb))
                out[key] = out.get(key, 0) + s * va * vb
    return GradedTensor(u.n, u.grade + v.grade, out)


def wedge_all(vectors: Iterable, n: int | None = None) -> GradedTensor:
    """``u_1 ^ u_2 ^ ... ^ u_m`` for a sequence of vectors."""
    vs = [np.asarray(v, dtype=complex) for v in vectors]
    if not vs:
        if n is None:
            raise ValueError("empty wedge needs an ambient dimension")
        return GradedTensor.scalar(1.0, n)
    out = GradedTensor.vector(vs[0])
    for v in vs[1:]:
        out = wedge(out, GradedTensor.vector(v))
    return out


def derivation_extension(V, m: int) -> np.ndarray:
    """Matrix of ``V^(m)`` on ``wedge^m C^n`` in the lexicographic basis.

    Column ``alpha`` holds the coefficients of
    ``sum_j e_alpha1 ^ ... ^ V e_alphaj ^ ... ^ e_alpham``.
    """
    V = np.asarray(V, dtype=complex)
    n = V.shape[0]
    if V.shape != (n, n):
        raise ValueError("V must be square")
    if not 1 <= m <= n:
        raise ValueError(f"grade {m} outside 1..{n}")
    keys = multi_indices(n, m)
    pos = _position(n, m)
    out = np.zeros((len(keys), len(keys)), dtype=complex)
    for col, alpha in enumerate(keys):
        for slot, j in enumerate(alpha):
            for i in range(1, n + 1):
                if V[i - 1, j - 1] == 0:
                    continue
                replaced = alpha[:slot] + (i,) + alpha[slot + 1:]
                s = permutation_sign(replaced)
                if s:
                    out[pos[tuple(sorted(replaced))], col] += s * V[i - 1, j - 1]
    return out


def multiplicative_extension(V, m: int) -> np.ndarray:
    """Matrix of the factorwise action ``h_1^...^h_m -> Vh_1^...^Vh_m`` (m-th compound)."""
    V = np.asarray(V, dtype=complex)
    n = V.shape[0]
    if V.shape != (n, n):
        raise ValueError("V must be square")
    if not 1 <= m <= n:
        raise ValueError(f"grade {m} outside 1..{n}")
    keys = multi_indices(n, m)
    out = np.empty((len(keys), len(keys)), dtype=complex)
    for r, beta in enumerate(keys):
        rows = [b - 1 for b in beta]
        for c, alpha in enumerate(keys):
            out[r, c] = np.linalg.det(V[np.ix_(rows, [a - 1 for a in alpha])])
    return out


def apply(op: np.ndarray, h: GradedTensor) -> GradedTensor:
    """Apply a dense operator on ``wedge^grade C^n`` to a sparse tensor."""
    return GradedTensor.from_array(op @ h.to_array(), h.n, h.grade)


def entry_extract(V, i: int, k: int) -> complex:
    """Read ``V[i, k]`` (1-based) through top-grade wedge pairings.

    For ``i > k`` uses ``alpha = (1..k-1, i)`` and grade ``k``; for ``i < k``
    uses ``beta = (i, k+1..n)`` and grade ``n-k+1``. On the diagonal the grade-k
    pairing returns the trace of the leading ``k x k`` block, so ``V[k, k]``
    is recovered as the difference of two consecutive such pairings.
    """
    V = np.asarray(V, dtype=complex)
    n = V.shape[0]
    if not (1 <= i <= n and 1 <= k <= n):
        raise ValueError("entry index out of range")
    if i == k:
        lead = _head_pairing(V, k, k)
        return lead - (_head_pairing(V, k - 1, k - 1) if k > 1 else 0j)
    if i > k:
        return _head_pairing(V, i, k)
    alpha = MultiIndex(tuple(j for j in head(k - 1) if j != i), n)
    beta = MultiIndex(tuple(j for j in alpha.complement() if j != k), n)
    beta_c, chi = complement(beta)
    image = apply(derivation_extension(V, n - k + 1), GradedTensor.basis(tail(k, n), n))
    return chi * wedge(image, GradedTensor.basis(beta_c.entries, n)).top()


def _head_pairing(V: np.ndarray, i: int, k: int) -> complex:
    n = V.shape[0]
    alpha = MultiIndex(head(k - 1) + (i,), n)
    alpha_c, chi = complement(alpha)
    image = apply(derivation_extension(V, k), GradedTensor.basis(head(k), n))
    return chi * wedge(image, GradedTensor.basis(alpha_c.entries, n)).top()


# dense kernels -------------------------------------------------------------

@lru_cache(maxsize=None)
def wedge_table(n: int, p: int, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Index table ``(iu, iv, iout, sign)`` for the dense product grade p x grade q."""
    if p + q > n:
        raise ValueError(f"grade overflow: {p} + {q} > {n}")
    pos = _position(n, p + q)
    iu, iv, io, sg = [], [], [], []
    for a, ka in enumerate(multi_indices(n, p)):
        for b, kb in enumerate(multi_indices(n, q)):
            s = permutation_sign(ka + kb)
            if s:
                iu.append(a)
                iv.append(b)
                io.append(pos[tuple(sorted(ka + kb))])
                sg.append(s)
    return (np.array(iu, dtype=int), np.array(iv, dtype=int),
            np.array(io, dtype=int), np.array(sg, dtype=float))


def wedge_dense(u: np.ndarray, v: np.ndarray, n: int, p: int, q: int) -> np.ndarray:
    """Batched wedge of dense coefficient arrays (last axis is the basis)."""
    iu, iv, io, sg = wedge_table(n, p, q)
    u = np.asarray(u)
    v = np.asarray(v)
    terms = sg * u[..., iu] * v[..., iv]
    shape = np.broadcast_shapes(u.shape[:-1], v.shape[:-1]) + (comb(n, p + q),)
    out = np.zeros(shape, dtype=complex)
    np.add.at(out, (..., io), np.broadcast_to(terms, shape[:-1] + terms.shape[-1:]))
    return out


@lru_cache(maxsize=None)
def pairing_signs(n: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """For each alpha of grade p: index of alpha' in grade n-p and the sign chi_alpha."""
    pos = _position(n, n - p)
    idx, sg = [], []
    for alpha in multi_indices(n, p):
        c, chi = complement(MultiIndex(alpha, n))
        idx.append(pos[c.entries])
        sg.append(chi)
    return np.array(idx, dtype=int), np.array(sg, dtype=float)


def pair_dense(x: np.ndarray, y: np.ndarray, n: int, p: int) -> np.ndarray:
    """``|x ^ y|`` for x of grade p and y of grade n-p, batched over leading axes."""
    idx, sg = pairing_signs(n, p)
    return np.sum(sg * x * y[..., idx], axis=-1)


def wedge_columns_dense(U: np.ndarray, cols: Iterable[int]) -> np.ndarray:
    """Dense ``U[:, c1] ^ ... ^ U[:, cm]`` (0-based columns), batched over leading axes.

    Coefficient on ``e_alpha`` is the minor of rows ``alpha`` and the chosen columns.
    """
    U = np.asarray(U)
    n = U.shape[-2]
    cols = list(cols)
    m = len(cols)
    if m == 0:
        return np.ones(U.shape[:-2] + (1,), dtype=complex)
    out = []
    for alpha in multi_indices(n, m):
        rows = [a - 1 for a in alpha]
        out.append(np.linalg.det(U[..., rows, :][..., cols]))
    return np.stack(out, axis=-1).astype(complex)
