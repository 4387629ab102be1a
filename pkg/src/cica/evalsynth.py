"""Evaluation metrics, synthetic sources and random mixing matrices."""
from __future__ import annotations

import numpy as np

from . import _rng
from .errors import DimensionError
from .tensor import DiagonalTensor4, SymmetricTensor4, multilinear_transform

__all__ = [
    "SOURCE_IDS",
    "FIG_COCKTAIL",
    "amari_error",
    "relative_efficiency",
    "sample_sources",
    "excess_kurtosis",
    "random_orthogonal",
    "random_mixing",
    "population_cumulant",
]


def amari_error(M, M_hat, P_pinv=None) -> float:
    """Amari distance between a true mixing matrix and its estimate (truth first).

    With ``b = M_hat^{-1} M``,

        d = 1/(2n(n-1)) * [sum_i (sum_j |b_ij| / max_j |b_ij| - 1)
                           + sum_j (sum_i |b_ij| / max_i |b_ij| - 1)]

    which is zero exactly when ``M_hat`` equals ``M`` up to column
    permutation and nonzero column scaling. For ``d > n`` both matrices are
    first reduced to ``n x n`` by ``P_pinv`` (the shared whitener) or, when
    none is given, by the pseudo-inverse of ``M_hat``.

    Not symmetric in its arguments.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    M_hat = np.atleast_2d(np.asarray(M_hat, dtype=float))
    if M.shape != M_hat.shape:
        raise DimensionError(f"shapes differ: {M.shape} vs {M_hat.shape}")
    d, n = M.shape
    if d < n:
        raise DimensionError("mixing matrix has fewer rows than columns")
    if P_pinv is not None:
        M, M_hat = P_pinv @ M, P_pinv @ M_hat
    elif d > n:
        M, M_hat = np.linalg.pinv(M_hat) @ M, np.eye(n)
    if n == 1:
        if M_hat[0, 0] == 0:
            raise np.linalg.LinAlgError("singular estimate")
        return 0.0
    b = np.abs(np.linalg.solve(M_hat, M))
    rows = np.sum(b.sum(axis=1) / b.max(axis=1) - 1)
    cols = np.sum(b.sum(axis=0) / b.max(axis=0) - 1)
    return float((rows + cols) / (2 * n * (n - 1)))


def relative_efficiency(errors_full, errors_sketch) -> float:
    """``var(errors_full) / var(errors_sketch)`` with unbiased variances."""
    a = np.asarray(errors_full, dtype=float)
    b = np.asarray(errors_sketch, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("need at least two errors per estimator")
    vb = np.var(b, ddof=1)
    if vb == 0:
        raise ZeroDivisionError("sketched errors have zero variance")
    return float(np.var(a, ddof=1) / vb)


# analytic excess kurtosis of each standardized source; None if infinite
_KURTOSIS = {
    "student_t": None,
    "laplace": 3.0,
    "uniform": -1.2,
    # ±1 shifts of a unit Laplace: variance 3, fourth cumulant 12 - 2
    "laplace_mixture": 10.0 / 9.0,
    # ±1 with sd 0.15: fourth cumulant -2, variance 1.0225
    "gaussian_bimodal": -2.0 / 1.0225**2,
    # centres -0.7 and 0.5 with sd 0.5, equal weights
    "gaussian_asym": -2 * 0.6**4 / 0.61**2,
}
SOURCE_IDS = tuple(_KURTOSIS)

# one source of each kind, the cocktail used by the efficiency experiment
FIG_COCKTAIL = SOURCE_IDS


def _draw(kind: str, N: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "student_t":
        return rng.standard_t(3, N)
    if kind == "laplace":
        return rng.laplace(0.0, 1.0, N)
    if kind == "uniform":
        return rng.uniform(-np.sqrt(3), np.sqrt(3), N)
    if kind == "laplace_mixture":
        return rng.choice([-1.0, 1.0], N) + rng.laplace(0.0, 1.0, N)
    if kind == "gaussian_bimodal":
        return rng.choice([-1.0, 1.0], N) + 0.15 * rng.standard_normal(N)
    if kind == "gaussian_asym":
        return rng.choice([-0.7, 0.5], N) + 0.5 * rng.standard_normal(N)
    raise ValueError(f"unknown source distribution {kind!r}; choose from {SOURCE_IDS}")


def _resolve(spec, n: int) -> list[str]:
    kinds = [spec] * n if isinstance(spec, str) else list(spec)
    if len(kinds) != n:
        raise DimensionError(f"{len(kinds)} source kinds given for n={n}")
    for k in kinds:
        if k not in _KURTOSIS:
            raise ValueError(f"unknown source distribution {k!r}; choose from {SOURCE_IDS}")
    return kinds


def sample_sources(spec, n: int, N: int, seed: int = 0) -> np.ndarray:
    """Draw ``N`` samples of ``n`` independent sources, each standardized.

    ``spec`` is one distribution id (shared by every source) or a sequence of
    ``n`` ids. Column ``i`` comes from its own generator stream, so columns
    are independent and reproducible on their own.
    """
    kinds = _resolve(spec, n)
    out = np.empty((N, n))
    for i, kind in enumerate(kinds):
        x = _draw(kind, N, _rng.stream(seed, 0x50C, i))
        out[:, i] = (x - x.mean()) / x.std()
    return out


def excess_kurtosis(x) -> np.ndarray:
    """Per-column sample excess kurtosis."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean(axis=0)
    m2 = np.mean(xc**2, axis=0)
    return np.mean(xc**4, axis=0) / m2**2 - 3.0


def random_orthogonal(n: int, seed: int = 0) -> np.ndarray:
    """Haar-distributed orthogonal matrix from a sign-fixed QR factorization."""
    G = _rng.stream(seed, 0x0A7).standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def random_mixing(d: int, n: int, seed: int = 0, cond_cap: float = 100.0) -> np.ndarray:
    """Gaussian ``d x n`` matrix, redrawn until its condition number is at most ``cond_cap``."""
    if d < n:
        raise DimensionError("need d >= n")
    rng = _rng.stream(seed, 0x313)
    while True:
        M = rng.standard_normal((d, n))
        if np.linalg.cond(M) <= cond_cap:
            return M


def population_cumulant(spec, Q) -> SymmetricTensor4:
    """Noiseless cumulant tensor ``diag(kappa) x Q`` from analytic source kurtoses."""
    Q = np.asarray(Q, dtype=float)
    kinds = _resolve(spec, Q.shape[1])
    kappa = [_KURTOSIS[k] for k in kinds]
    if any(k is None for k in kappa):
        raise ValueError("source with infinite fourth moment has no population cumulant")
    return multilinear_transform(DiagonalTensor4(np.array(kappa)), Q)
