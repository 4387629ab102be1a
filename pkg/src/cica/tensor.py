"""Fourth-order super-symmetric tensors and cumulant estimation.

A :class:`SymmetricTensor4` over ``n`` channels stores only its
``p = C(n+3, 4)`` unique entries, one per sorted index tuple
``i <= j <= k <= l`` in lexicographic order.  Every permutation of an index
tuple reads the same stored value, so super-symmetry holds by construction.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np

from .errors import DimensionError

__all__ = [
    "SymmetricTensor4",
    "DiagonalTensor4",
    "n_unique",
    "multiplicities",
    "multilinear_transform",
    "estimate_cumulant",
    "CumulantAccumulator",
    "pair_product",
    "quartic_monomials",
    "vectorize",
    "devectorize",
    "matricize",
    "dematricize",
    "sym_pack",
    "sym_unpack",
]

EPS_S = 1e-6


def n_unique(n: int) -> int:
    """Number of unique entries of a super-symmetric 4-tensor on n channels."""
    return comb(n + 3, 4)


class _Codec:
    """Index bookkeeping for one channel count."""

    def __init__(self, n: int):
        self.n = n
        combos = np.array(
            list(itertools.combinations_with_replacement(range(n), 4)), dtype=np.intp
        ).reshape(-1, 4)
        self.combos = combos
        self.p = len(combos)
        mult = np.empty(self.p)
        for u, c in enumerate(combos):
            _, counts = np.unique(c, return_counts=True)
            mult[u] = factorial(4) / np.prod([factorial(k) for k in counts])
        self.mult = mult
        self.sqrt_mult = np.sqrt(mult)

        # full position -> unique offset, via the sorted index tuple
        lookup = np.full(n**4, -1, dtype=np.intp)
        lookup[np.ravel_multi_index(combos.T, (n,) * 4)] = np.arange(self.p)
        full = np.indices((n,) * 4).reshape(4, -1)
        self.full_to_unique = lookup[np.ravel_multi_index(np.sort(full, axis=0), (n,) * 4)]
        self.representative = np.ravel_multi_index(combos.T, (n,) * 4)
        self.diagonal = lookup[np.ravel_multi_index((np.arange(n),) * 4, (n,) * 4)]
        self.offset = {tuple(c): u for u, c in enumerate(combos.tolist())}


@lru_cache(maxsize=None)
def _codec(n: int) -> _Codec:
    if n < 1:
        raise DimensionError(f"channel count must be positive, got {n}")
    return _Codec(n)


def multiplicities(n: int) -> np.ndarray:
    """Number of index permutations sharing each unique entry."""
    return _codec(n).mult.copy()


@dataclass(frozen=True, eq=False)
class SymmetricTensor4:
    """Super-symmetric 4th-order tensor stored by its unique entries."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (n_unique(self.n),):
            raise DimensionError(
                f"expected {n_unique(self.n)} unique entries for n={self.n}, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, n: int) -> SymmetricTensor4:
        return cls(n, np.zeros(n_unique(n)))

    @classmethod
    def from_full(cls, arr: np.ndarray, symmetrize: bool = True) -> SymmetricTensor4:
        """Build from a dense ``(n, n, n, n)`` array.

        With ``symmetrize`` each unique entry is the mean over its permutation
        orbit, which is the orthogonal projection onto super-symmetric
        tensors. Otherwise the sorted-index entry is taken as is.
        """
        arr = np.asarray(arr, dtype=float)
        n = arr.shape[0]
        if arr.shape != (n,) * 4:
            raise DimensionError(f"expected an (n, n, n, n) array, got {arr.shape}")
        c = _codec(n)
        if symmetrize:
            sums = np.bincount(c.full_to_unique, weights=arr.ravel(), minlength=c.p)
            return cls(n, sums / c.mult)
        return cls(n, arr.ravel()[c.representative])

    def to_full(self) -> np.ndarray:
        c = _codec(self.n)
        return self.values[c.full_to_unique].reshape((self.n,) * 4)

    def __getitem__(self, idx) -> float:
        return float(self.values[_codec(self.n).offset[tuple(sorted(idx))]])

    @property
    def p(self) -> int:
        return len(self.values)

    def diagonal(self) -> np.ndarray:
        return self.values[_codec(self.n).diagonal].copy()

    def frobenius_norm(self) -> float:
        return float(np.sqrt(np.dot(_codec(self.n).mult, self.values**2)))

    def inner(self, other: SymmetricTensor4) -> float:
        _check_same_n(self, other)
        return float(np.dot(_codec(self.n).mult, self.values * other.values))

    def __add__(self, other: SymmetricTensor4) -> SymmetricTensor4:
        _check_same_n(self, other)
        return SymmetricTensor4(self.n, self.values + other.values)

    def __sub__(self, other: SymmetricTensor4) -> SymmetricTensor4:
        _check_same_n(self, other)
        return SymmetricTensor4(self.n, self.values - other.values)

    def __neg__(self) -> SymmetricTensor4:
        return SymmetricTensor4(self.n, -self.values)

    def __mul__(self, scalar: float) -> SymmetricTensor4:
        return SymmetricTensor4(self.n, self.values * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return f"SymmetricTensor4(n={self.n}, norm={self.frobenius_norm():.6g})"


@dataclass(frozen=True, eq=False)
class DiagonalTensor4:
    """Diagonal 4-tensor holding the source auto-cumulants ``S_iiii``."""

    kappa: np.ndarray
    eps_floor: float = EPS_S

    def __post_init__(self):
        kappa = np.array(self.kappa, dtype=float).ravel()
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)

    @property
    def n(self) -> int:
        return len(self.kappa)

    @classmethod
    def clamped(cls, kappa, eps_floor: float = EPS_S) -> DiagonalTensor4:
        """Model-set member: magnitudes floored at ``eps_floor``, signs kept."""
        kappa = np.asarray(kappa, dtype=float)
        sign = np.where(kappa < 0, -1.0, 1.0)
        return cls(sign * np.maximum(np.abs(kappa), eps_floor), eps_floor)

    def is_model_member(self) -> bool:
        return bool(np.all(np.abs(self.kappa) >= self.eps_floor))

    def to_symmetric(self) -> SymmetricTensor4:
        c = _codec(self.n)
        values = np.zeros(c.p)
        values[c.diagonal] = self.kappa
        return SymmetricTensor4(self.n, values)


def _check_same_n(a: SymmetricTensor4, b: SymmetricTensor4):
    if a.n != b.n:
        raise DimensionError(f"channel counts differ: {a.n} vs {b.n}")


def multilinear_transform(S, Q: np.ndarray) -> SymmetricTensor4:
    """Return ``S x1 Q x2 Q x3 Q x4 Q``.

    ``Q`` has shape ``(d, n)`` where ``n`` is the channel count of ``S``; the
    result lives on ``d`` channels. Square orthogonal ``Q`` preserves the
    Frobenius norm.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != S.n:
        raise DimensionError(f"matrix of shape {Q.shape} cannot act on n={S.n}")
    d = Q.shape[0]
    if isinstance(S, DiagonalTensor4):
        c = _codec(d)
        rows = Q[c.combos[:, 0]] * Q[c.combos[:, 1]] * Q[c.combos[:, 2]] * Q[c.combos[:, 3]]
        return SymmetricTensor4(d, rows @ S.kappa)
    T = S.to_full()
    for _ in range(4):
        # contracting the leading axis and appending the new one cycles through all modes
        T = np.tensordot(T, Q, axes=([0], [1]))
    return SymmetricTensor4.from_full(T)


def vectorize(Z: SymmetricTensor4) -> np.ndarray:
    """Unique entries scaled by sqrt(multiplicity), so the 2-norm is the Frobenius norm."""
    return Z.values * _codec(Z.n).sqrt_mult


def devectorize(v: np.ndarray, n: int) -> SymmetricTensor4:
    v = np.asarray(v, dtype=float)
    c = _codec(n)
    if v.shape != (c.p,):
        raise DimensionError(f"vector of length {v.shape} does not match C(n+3,4)={c.p}")
    return SymmetricTensor4(n, v / c.sqrt_mult)


def matricize(Z) -> np.ndarray:
    """``(n^2, n^2)`` matrix with entry ``[i*n + j, k*n + l] = Z_ijkl``."""
    T = Z.to_full() if isinstance(Z, SymmetricTensor4) else np.asarray(Z, dtype=float)
    n = T.shape[0]
    return T.reshape(n * n, n * n)


def dematricize(M: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`matricize`, returning the dense ``(n, n, n, n)`` array.

    The result is super-symmetric only if ``M`` came from a super-symmetric
    tensor; wrap with :meth:`SymmetricTensor4.from_full` to project.
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (n * n, n * n):
        raise DimensionError(f"expected ({n * n}, {n * n}) matrix, got {M.shape}")
    return M.reshape((n,) * 4).copy()


def quartic_monomials(X: np.ndarray) -> np.ndarray:
    """Rows of unique products ``x_i x_j x_k x_l`` (unscaled), shape ``(N, p)``."""
    X = np.atleast_2d(X)
    c = _codec(X.shape[1])
    pairs = X[:, c.combos[:, 0]] * X[:, c.combos[:, 1]]
    pairs *= X[:, c.combos[:, 2]]
    pairs *= X[:, c.combos[:, 3]]
    return pairs


def sym_pack(S: np.ndarray) -> np.ndarray:
    """Upper-triangle entries of a symmetric matrix, row major."""
    S = np.asarray(S, dtype=float)
    return S[np.triu_indices(S.shape[0])]


def sym_unpack(v: np.ndarray, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (d * (d + 1) // 2,):
        raise DimensionError(f"expected {d * (d + 1) // 2} packed entries, got {v.shape}")
    S = np.zeros((d, d))
    S[np.triu_indices(d)] = v
    return S + np.triu(S, 1).T


def pair_product(cov: np.ndarray) -> SymmetricTensor4:
    """Tensor ``C_ij C_kl + C_ik C_jl + C_il C_jk`` for a symmetric matrix ``C``."""
    cov = np.asarray(cov, dtype=float)
    c = _codec(cov.shape[0])
    i, j, k, l = c.combos.T
    values = cov[i, j] * cov[k, l] + cov[i, k] * cov[j, l] + cov[i, l] * cov[j, k]
    return SymmetricTensor4(cov.shape[0], values)


class CumulantAccumulator:
    """Single-pass raw-moment accumulator for the 4th-order cumulant.

    Holds the running sums of ``x x^T`` and of the unique quartic monomials,
    so memory is ``O(n^2 + p)`` however many samples are fed.
    """

    chunk_size = 8192

    def __init__(self, n: int):
        self.n = n
        self.count = 0
        self.sum2 = np.zeros((n, n))
        self.sum4 = np.zeros(n_unique(n))

    def update(self, X: np.ndarray) -> CumulantAccumulator:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n:
            raise DimensionError(f"expected {self.n} channels, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("data contains non-finite values")
        for start in range(0, len(X), self.chunk_size):
            block = X[start:start + self.chunk_size]
            self.sum2 += block.T @ block
            self.sum4 += quartic_monomials(block).sum(axis=0)
        self.count += len(X)
        return self

    def second_moment(self) -> np.ndarray:
        return self.sum2 / self.count

    def finalize(self) -> SymmetricTensor4:
        if self.count < 2:
            raise ValueError(f"need at least 2 samples, got {self.count}")
        m4 = SymmetricTensor4(self.n, self.sum4 / self.count)
        return m4 - pair_product(self.second_moment())


def estimate_cumulant(data: np.ndarray, already_centered: bool = False) -> SymmetricTensor4:
    """Plug-in 4th-order cumulant of the rows of ``data`` (shape ``(N, n)``).

    ``Z_ijkl = m4(ijkl) - m2(ij) m2(kl) - m2(ik) m2(jl) - m2(il) m2(jk)``
    with empirical raw moments of the (centered) data.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"data must be 2-D (N, n), got shape {X.shape}")
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    if not already_centered:
        X = X - X.mean(axis=0)
    return CumulantAccumulator(X.shape[1]).update(X).finalize()
