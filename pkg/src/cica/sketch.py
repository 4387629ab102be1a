"""Random sketching operators for cumulant tensors and streaming sketches.

Two operator kinds map the vectorized tensor space (dimension
``p = C(n+3, 4)``) to ``R^m``:

* ``gaussian``: dense i.i.d. normal matrix with variance ``1/m`` per entry.
* ``srht``: ``(1/sqrt(m p_pad)) * R H D`` acting on the zero-padded vector,
  with ``D`` random signs, ``H`` the (unnormalized, +/-1) Walsh-Hadamard
  matrix of order ``p_pad`` applied by a fast transform, and ``R`` a subset of
  ``m`` distinct rows.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from . import _rng
from .errors import DimensionError, FingerprintError, SketchFormatError
from .tensor import (
    SymmetricTensor4,
    devectorize,
    n_unique,
    pair_product,
    quartic_monomials,
    sym_pack,
    sym_unpack,
    vectorize,
    _codec,
)

log = logging.getLogger(__name__)

__all__ = [
    "SketchOperator",
    "SketchVector",
    "SketchAccumulator",
    "make_operator",
    "apply",
    "adjoint",
    "fwht",
    "sketch_stream",
    "sketch_tensor",
    "merge",
    "write_sketch",
    "read_sketch",
    "KINDS",
    "MODES",
]

KINDS = ("gaussian", "srht")
MODES = ("whitened", "unwhitened")

# entries ~ N(0, GAUSSIAN_VARIANCE_SCALE / m): unit expected row-energy normalization
GAUSSIAN_VARIANCE_SCALE = 1.0


def next_pow2(k: int) -> int:
    return 1 << max(0, (k - 1).bit_length())


def fwht(a: np.ndarray) -> np.ndarray:
    """In-place unnormalized Walsh-Hadamard transform along axis 0.

    The length of axis 0 must be a power of two. Output is in natural
    (Sylvester) order, i.e. equal to ``scipy.linalg.hadamard(L) @ a``.
    """
    L = a.shape[0]
    if L & (L - 1):
        raise DimensionError(f"length {L} is not a power of two")
    rest = a.shape[1:]
    h = 1
    while h < L:
        view = a.reshape((L // (2 * h), 2, h) + rest)
        top = view[:, 0].copy()
        view[:, 0] += view[:, 1]
        view[:, 1] *= -1
        view[:, 1] += top
        h *= 2
    return a


@dataclass(frozen=True, eq=False)
class SketchOperator:
    """Seed-reproducible random linear map from cumulant tensors to ``R^m``."""

    kind: str
    m: int
    n: int
    seed: int
    _matrix: np.ndarray | None = field(default=None, repr=False)
    _signs: np.ndarray | None = field(default=None, repr=False)
    _rows: np.ndarray | None = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return n_unique(self.n)

    @property
    def p_pad(self) -> int:
        return next_pow2(self.p)

    @property
    def fingerprint(self) -> tuple:
        return (self.kind, self.m, self.n, self.seed)

    @property
    def signs(self) -> np.ndarray:
        return self._signs

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    def apply_vec(self, v: np.ndarray) -> np.ndarray:
        """Act on vectorized tensors, ``v`` of shape ``(p,)`` or ``(p, k)``."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.p:
            raise DimensionError(f"operator expects length {self.p}, got {v.shape[0]}")
        if self.kind == "gaussian":
            return self._matrix @ v
        buf = np.zeros((self.p_pad,) + v.shape[1:])
        buf[: self.p] = v
        buf *= self._signs.reshape((-1,) + (1,) * (v.ndim - 1))
        fwht(buf)
        return buf[self._rows] / np.sqrt(self.m * self.p_pad)

    def adjoint_vec(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.m:
            raise DimensionError(f"operator expects length {self.m}, got {y.shape[0]}")
        if self.kind == "gaussian":
            return self._matrix.T @ y
        buf = np.zeros((self.p_pad,) + y.shape[1:])
        buf[self._rows] = y / np.sqrt(self.m * self.p_pad)
        fwht(buf)
        buf *= self._signs.reshape((-1,) + (1,) * (y.ndim - 1))
        return buf[: self.p]

    def apply(self, Z: SymmetricTensor4) -> np.ndarray:
        if Z.n != self.n:
            raise DimensionError(f"operator built for n={self.n}, tensor has n={Z.n}")
        return self.apply_vec(vectorize(Z))

    def adjoint(self, y: np.ndarray) -> SymmetricTensor4:
        return devectorize(self.adjoint_vec(y), self.n)

    def matrix(self) -> np.ndarray:
        """Dense ``(m, p)`` matrix of the operator."""
        if self.kind == "gaussian":
            return self._matrix.copy()
        return self.apply_vec(np.eye(self.p))


@lru_cache(maxsize=32)
def make_operator(kind: str, m: int, n: int, seed: int = 0) -> SketchOperator:
    """Build the operator deterministically from ``(kind, m, n, seed)``."""
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    if m < 1:
        raise ValueError(f"sketch size must be positive, got {m}")
    if n < 2:
        raise DimensionError(f"need at least 2 channels, got {n}")
    p = n_unique(n)
    rng = _rng.stream(seed, 0x5CE7C4)
    if kind == "gaussian":
        A = rng.standard_normal((m, p)) * np.sqrt(GAUSSIAN_VARIANCE_SCALE / m)
        A.setflags(write=False)
        return SketchOperator(kind, m, n, seed, _matrix=A)
    p_pad = next_pow2(p)
    if m > p_pad:
        raise ValueError(f"srht needs m <= p_pad={p_pad}, got m={m}")
    signs = rng.choice(np.array([-1.0, 1.0]), size=p_pad)
    rows = np.sort(rng.choice(p_pad, size=m, replace=False))
    signs.setflags(write=False)
    rows.setflags(write=False)
    return SketchOperator(kind, m, n, seed, _signs=signs, _rows=rows)


def apply(op: SketchOperator, Z: SymmetricTensor4) -> np.ndarray:
    return op.apply(Z)


def adjoint(op: SketchOperator, y: np.ndarray) -> SymmetricTensor4:
    return op.adjoint(y)


@dataclass(frozen=True, eq=False)
class SketchVector:
    """A finished sketch ``y = A(Z_hat)`` plus bookkeeping for merging.

    ``cov`` holds the packed second moment ``(1/N) sum x x^T``. It is part of
    the persisted sketch only in ``unwhitened`` mode; in-memory whitened
    sketches keep it too so that merges stay exact.
    """

    mode: str
    y: np.ndarray
    sample_count: int
    kind: str
    m: int
    n: int
    seed: int
    cov: np.ndarray | None = None

    @property
    def fingerprint(self) -> tuple:
        return (self.kind, self.m, self.n, self.seed)

    def second_moment(self) -> np.ndarray | None:
        return None if self.cov is None else sym_unpack(self.cov, self.n)

    def operator(self) -> SketchOperator:
        return make_operator(self.kind, self.m, self.n, self.seed)

    @classmethod
    def empty(cls, op: SketchOperator, mode: str) -> SketchVector:
        return cls(mode, np.zeros(op.m), 0, *op.fingerprint,
                   cov=np.zeros(op.n * (op.n + 1) // 2))


class SketchAccumulator:
    """Single-pass streaming sketch state.

    Keeps the running raw-quartic sketch ``sum_i A vec(x_i^{(x)4})`` (length
    ``m``), the running second moment (``n x n``) and a bounded input buffer.
    The cumulant correction is applied once, at :meth:`finalize`.
    """

    def __init__(self, op: SketchOperator, mode: str = "whitened", chunk_size: int = 4096):
        if mode not in MODES:
            raise ValueError(f"unknown sketch mode {mode!r}")
        self.op = op
        self.mode = mode
        self.chunk_size = chunk_size
        self.count = 0
        self.raw = np.zeros(op.m)
        self.sum2 = np.zeros((op.n, op.n))
        self._buf: list[np.ndarray] = []
        self._buffered = 0

    def state_size(self) -> int:
        """Floats held by the accumulator, excluding the operator itself."""
        return self.raw.size + self.sum2.size + self.chunk_size * self.op.n

    def _flush(self):
        if not self._buf:
            return
        X = np.concatenate(self._buf, axis=0)
        self._buf, self._buffered = [], 0
        self.sum2 += X.T @ X
        v = quartic_monomials(X).sum(axis=0) * _codec(self.op.n).sqrt_mult
        self.raw += self.op.apply_vec(v)
        self.count += len(X)

    def update(self, x) -> SketchAccumulator:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        if X.ndim != 2 or X.shape[1] != self.op.n:
            raise DimensionError(f"expected samples with {self.op.n} channels, got shape {np.shape(x)}")
        if not np.all(np.isfinite(X)):
            raise ValueError("data contains non-finite values")
        for start in range(0, len(X), self.chunk_size):
            block = X[start:start + self.chunk_size]
            self._buf.append(block)
            self._buffered += len(block)
            if self._buffered >= self.chunk_size:
                self._flush()
        return self

    def finalize(self) -> SketchVector:
        self._flush()
        if self.count == 0:
            raise ValueError("cannot sketch an empty stream")
        sigma = self.sum2 / self.count
        y = self.raw / self.count - self.op.apply(pair_product(sigma))
        return SketchVector(self.mode, y, self.count, *self.op.fingerprint, cov=sym_pack(sigma))


def sketch_stream(op: SketchOperator, data_source: Iterable, mode: str = "whitened",
                  chunk_size: int = 4096) -> SketchVector:
    """Sketch a stream of samples (single vectors or row blocks) in one pass.

    Whitened mode expects pre-whitened samples, unwhitened mode centered raw
    samples; both produce the sketch of the empirical 4th-order cumulant.
    """
    acc = SketchAccumulator(op, mode, chunk_size)
    if isinstance(data_source, np.ndarray) and data_source.ndim == 2:
        acc.update(data_source)
    else:
        for x in data_source:
            acc.update(x)
    return acc.finalize()


def sketch_tensor(op: SketchOperator, Z: SymmetricTensor4, mode: str = "whitened",
                  cov: np.ndarray | None = None) -> SketchVector:
    """Noiseless sketch of a known tensor (sample count 0)."""
    packed = None if cov is None else sym_pack(cov)
    return SketchVector(mode, op.apply(Z), 0, *op.fingerprint, cov=packed)


def merge(a: SketchVector, b: SketchVector, op: SketchOperator | None = None) -> SketchVector:
    """Combine two sketches into the sketch of the concatenated streams.

    Exact when both carry their second moments; otherwise the cumulant
    sketches are averaged by sample count, which is exact only if the two
    parts share the same second moment.
    """
    if a.fingerprint != b.fingerprint:
        raise FingerprintError(f"operator fingerprints differ: {a.fingerprint} vs {b.fingerprint}")
    if a.mode != b.mode:
        raise FingerprintError(f"sketch modes differ: {a.mode} vs {b.mode}")
    if b.sample_count == 0:
        return a
    if a.sample_count == 0:
        return b
    na, nb = a.sample_count, b.sample_count
    N = na + nb
    if a.cov is None or b.cov is None:
        log.warning("merging sketches without second moments; cumulant correction is approximate")
        return SketchVector(a.mode, (na * a.y + nb * b.y) / N, N, *a.fingerprint)
    op = op if op is not None else a.operator()
    if op.fingerprint != a.fingerprint:
        raise FingerprintError("operator does not match the sketches")
    sa, sb = a.second_moment(), b.second_moment()
    raw = (na * (a.y + op.apply(pair_product(sa))) + nb * (b.y + op.apply(pair_product(sb)))) / N
    sigma = (na * sa + nb * sb) / N
    y = raw - op.apply(pair_product(sigma))
    return SketchVector(a.mode, y, N, *a.fingerprint, cov=sym_pack(sigma))


_MAGIC = b"CIC1"
_HEADER = struct.Struct("<4sBBIIQQ")


def write_sketch(path, sv: SketchVector):
    """Persist a sketch in the little-endian ``CIC1`` format."""
    header = _HEADER.pack(_MAGIC, MODES.index(sv.mode), KINDS.index(sv.kind),
                          sv.n, sv.m, sv.seed & 0xFFFFFFFFFFFFFFFF, sv.sample_count)
    parts = [header, np.asarray(sv.y, dtype="<f8").tobytes()]
    if sv.mode == "unwhitened":
        if sv.cov is None:
            raise ValueError("unwhitened sketch without covariance")
        parts.append(struct.pack("<I", sv.n))
        parts.append(np.asarray(sv.cov, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_sketch(path) -> SketchVector:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise SketchFormatError("file too short for a sketch header")
    magic, mode, kind, n, m, seed, count = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise SketchFormatError(f"bad magic {magic!r}")
    if mode >= len(MODES) or kind >= len(KINDS):
        raise SketchFormatError(f"unknown mode {mode} or operator kind {kind}")
    off = _HEADER.size
    end = off + 8 * m
    if len(blob) < end:
        raise SketchFormatError("truncated sketch values")
    y = np.frombuffer(blob, dtype="<f8", count=m, offset=off).astype(float)
    cov = None
    if MODES[mode] == "unwhitened":
        if len(blob) < end + 4:
            raise SketchFormatError("missing covariance block")
        (d,) = struct.unpack_from("<I", blob, end)
        k = d * (d + 1) // 2
        if d != n or len(blob) < end + 4 + 8 * k:
            raise SketchFormatError("covariance block does not match the header")
        cov = np.frombuffer(blob, dtype="<f8", count=k, offset=end + 4).astype(float)
        end += 4 + 8 * k
    if len(blob) != end:
        raise SketchFormatError("trailing bytes after sketch")
    return SketchVector(MODES[mode], y, count, KINDS[kind], m, n, seed, cov=cov)
