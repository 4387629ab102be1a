"""End-to-end fits: prewhitening, sketching, solving and mixing-matrix assembly.

The whitened flow reads the data twice (covariance, then the sketch of the
whitened samples). The unwhitened flow sketches the centered raw samples in
a single pass and whitens inside the solver.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import DimensionError, RankDeficiencyError, SketchFormatError
from .projection import givens_diagonalize
from .sketch import SketchOperator, make_operator, sketch_stream
from .solvers import AsdConfig, IpgConfig, SolveResult, asd_solve, ipg_solve, ipg_solve_unwhitened
from .tensor import DiagonalTensor4, estimate_cumulant, n_unique

__all__ = [
    "WhiteningTransform",
    "MixingEstimate",
    "prewhiten",
    "fit_whitener",
    "cica_fit",
    "cica_fit_unwhitened",
    "baseline_comon_fit",
    "default_sketch_size",
    "load_data",
    "write_data",
]


@dataclass(frozen=True)
class WhiteningTransform:
    """``x - mean = P z`` with ``z`` white; ``P_pinv`` maps back."""

    P: np.ndarray
    P_pinv: np.ndarray
    eigvals: np.ndarray
    mean: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.P_pinv.T


@dataclass
class MixingEstimate:
    Q: np.ndarray
    S: DiagonalTensor4
    P: WhiteningTransform | None
    M: np.ndarray
    residual: float = float("nan")
    iterations: int = 0
    converged: bool = True
    solver: str = ""
    residuals: list = field(default_factory=list)

    def unmix(self, X) -> np.ndarray:
        """Source estimates ``M^+ (x - mean)``."""
        X = np.asarray(X, dtype=float)
        if self.P is not None:
            return self.P.transform(X) @ self.Q
        return X @ np.linalg.pinv(self.M).T


def fit_whitener(cov, mean, n: int) -> WhiteningTransform:
    """Whitener from the top-n eigenpairs of a covariance matrix.

    ``P = E_n diag(sqrt(lambda_n))``, ``P_pinv = diag(1/sqrt(lambda_n)) E_n^T``;
    ties in the spectrum keep the lower index.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    if not 1 <= n <= d:
        raise DimensionError(f"need 1 <= n <= d, got n={n}, d={d}")
    w, E = np.linalg.eigh((cov + cov.T) / 2)
    order = np.argsort(-w, kind="stable")[:n]
    lam, E = w[order], E[:, order]
    if lam[-1] <= 1e-12:
        raise RankDeficiencyError(f"eigenvalue {n} of the covariance is {lam[-1]:.3g}")
    root = np.sqrt(lam)
    return WhiteningTransform(E * root, E.T / root[:, None], lam, np.asarray(mean, dtype=float))


def prewhiten(data, n: int) -> tuple[WhiteningTransform, np.ndarray]:
    """Center and whiten ``data`` (``N x d``) onto its top ``n`` principal directions.

    The output has empirical covariance ``I_n`` (normalized by ``N``).
    """
    X = _as_matrix(data)
    N, d = X.shape
    if N <= d:
        raise DimensionError(f"need more samples than channels, got N={N}, d={d}")
    mean = X.mean(axis=0)
    Xc = X - mean
    wt = fit_whitener(Xc.T @ Xc / N, mean, n)
    return wt, Xc @ wt.P_pinv.T


def default_sketch_size(n: int) -> int:
    """``2 n (n + 1)``, four times the model-set dimension."""
    return 2 * n * (n + 1)


def _as_matrix(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"data must be 2-D (N, d), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    return X


def _blocks(data) -> Callable[[], Iterable[np.ndarray]]:
    """Re-iterable view of the data as row blocks."""
    if callable(data):
        return data
    X = _as_matrix(data)
    return lambda: (X[i:i + 8192] for i in range(0, len(X), 8192))


def _moments(blocks) -> tuple[int, np.ndarray, np.ndarray]:
    N, s1, s2 = 0, None, None
    for B in blocks():
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if s1 is None:
            s1, s2 = np.zeros(B.shape[1]), np.zeros((B.shape[1],) * 2)
        N += len(B)
        s1 += B.sum(axis=0)
        s2 += B.T @ B
    if N == 0:
        raise ValueError("empty data")
    mean = s1 / N
    return N, mean, s2 / N - np.outer(mean, mean)


def _solve(op, y, solver: str, cfg) -> SolveResult:
    if solver == "ipg":
        return ipg_solve(op, y, cfg if isinstance(cfg, IpgConfig) else None)
    if solver == "asd":
        return asd_solve(op, y, cfg if isinstance(cfg, AsdConfig) else None)
    raise ValueError(f"unknown solver {solver!r}")


def _estimate(result: SolveResult, wt: WhiteningTransform | None, M) -> MixingEstimate:
    return MixingEstimate(result.Q_hat, result.S_hat, wt, M, result.residual, result.iterations,
                          result.converged, result.solver, list(result.residuals))


def cica_fit(data, n: int, solver: str = "ipg", kind: str = "gaussian", m: int | None = None,
             seed: int = 0, cfg=None, op: SketchOperator | None = None,
             chunk_size: int = 4096) -> MixingEstimate:
    """Compressive ICA with prewhitening.

    Pass one estimates the mean and covariance and fixes the whitener, pass
    two streams the whitened samples into the sketch. Only the sketch is
    handed to the solver.

    ``data`` is an ``N x d`` array or a zero-argument callable returning an
    iterable of row blocks (called once per pass).
    """
    blocks = _blocks(data)
    N, mean, cov = _moments(blocks)
    if N <= cov.shape[0]:
        raise DimensionError(f"need more samples than channels, got N={N}, d={cov.shape[0]}")
    wt = fit_whitener(cov, mean, n)
    if n == 1:
        # one source: nothing to rotate
        return MixingEstimate(np.eye(1), DiagonalTensor4(np.ones(1)), wt, wt.P.copy(), 0.0, 0, True, solver)
    if op is None:
        op = make_operator(kind, m if m is not None else default_sketch_size(n), n, seed)
    elif op.n != n:
        raise DimensionError(f"operator built for n={op.n}, fitting n={n}")
    whitened = (wt.transform(B) for B in blocks())
    sv = sketch_stream(op, whitened, "whitened", chunk_size)
    result = _solve(op, sv.y, solver, cfg)
    return _estimate(result, wt, wt.P @ result.Q_hat)


def cica_fit_unwhitened(data, n: int, kind: str = "gaussian", m: int | None = None, seed: int = 0,
                        cfg: IpgConfig | None = None, chunk_size: int = 4096) -> MixingEstimate:
    """Single-pass compressive ICA on centered raw samples.

    The sketch holds the raw-channel cumulant and second moment; the solver
    whitens through the composed operator. An array input is centered first;
    a callable source must already yield zero-mean samples.
    """
    if callable(data):
        source = data()
        first = None
    else:
        X = _as_matrix(data)
        X = X - X.mean(axis=0)
        source = [X]
        first = X
    it = iter(source)
    if first is None:
        first = np.atleast_2d(np.asarray(next(it), dtype=float))
        rest = it
    else:
        rest = iter(())
    d = first.shape[1]
    op = make_operator(kind, m if m is not None else default_sketch_size(n), d, seed)

    def stream():
        yield first
        yield from rest

    sv = sketch_stream(op, stream(), "unwhitened", chunk_size)
    result = ipg_solve_unwhitened(op, sv, n, cfg)
    cov = sv.second_moment()
    wt = fit_whitener(cov, np.zeros(d), n)
    return _estimate(result, wt, result.M_hat)


def baseline_comon_fit(data, n: int) -> MixingEstimate:
    """Full-cumulant reference: prewhiten, estimate every cumulant, Givens-diagonalize.

    Uses the same sweep kernel as the proxy projection, with no compression.
    """
    wt, Z = prewhiten(data, n)
    if n == 1:
        return MixingEstimate(np.eye(1), DiagonalTensor4(np.ones(1)), wt, wt.P.copy(), solver="comon")
    C = estimate_cumulant(Z, already_centered=True)
    Q, R, sweeps = givens_diagonalize(C.to_full())
    idx = np.arange(n)
    S = DiagonalTensor4(R[idx, idx, idx, idx])
    return MixingEstimate(Q, S, wt, wt.P @ Q, iterations=sweeps, solver="comon")


# ---------------------------------------------------------------------------
# data files

_DATA_MAGIC = b"CIDM"
_DATA_HEADER = struct.Struct("<4sII4x")


def write_data(path, X) -> None:
    """Write an ``N x d`` matrix as little-endian float64 behind a 16-byte header."""
    X = _as_matrix(X)
    with open(path, "wb") as fh:
        fh.write(_DATA_HEADER.pack(_DATA_MAGIC, X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())


def _read_binary(raw: bytes) -> np.ndarray:
    if len(raw) < _DATA_HEADER.size:
        raise SketchFormatError("truncated data header")
    magic, N, d = _DATA_HEADER.unpack_from(raw)
    if magic != _DATA_MAGIC:
        raise SketchFormatError("bad data magic")
    body = raw[_DATA_HEADER.size:]
    if len(body) != 8 * N * d:
        raise SketchFormatError(f"expected {N * d} values, found {len(body) / 8:g}")
    return np.frombuffer(body, dtype="<f8").reshape(N, d).astype(float)


def _read_csv(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SketchFormatError("empty CSV")
    try:
        [float(v) for v in lines[0].split(",")]
    except ValueError:
        lines = lines[1:]  # header row
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines]
    except ValueError as exc:
        raise SketchFormatError(f"non-numeric CSV entry: {exc}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise SketchFormatError("CSV rows have differing lengths")
    return np.array(rows, dtype=float)


def load_data(path) -> np.ndarray:
    """Read samples (rows) by channels (columns) from CSV or the binary format."""
    raw = Path(path).read_bytes()
    if raw[:4] == _DATA_MAGIC:
        return _read_binary(raw)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise SketchFormatError("data is neither CSV nor the binary format") from None
    return _read_csv(text)
