"""Projections onto the ICA model set.

The model set holds tensors ``S x1 Q x2 Q x3 Q x4 Q`` with ``S`` diagonal and
``Q`` orthogonal. Near the model set it coincides with the intersection of
rank-``n`` tensors (rank of the ``n^2 x n^2`` matricization) and
super-symmetric tensors, which :func:`project_model_set` reaches by
alternating the two orthogonal projections. :func:`proxy_project` instead
diagonalizes by pairwise Givens rotations and zeroes the cross-cumulants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .tensor import EPS_S, DiagonalTensor4, SymmetricTensor4, matricize, multilinear_transform

__all__ = [
    "project_rank",
    "project_symmetric",
    "project_model_set",
    "proxy_project",
    "givens_diagonalize",
    "ProjectionResult",
    "ProxyResult",
]


def project_rank(Z) -> np.ndarray:
    """Best rank-n approximation of the matricization, as a dense 4-way array.

    Keeps the ``n`` eigenpairs of largest magnitude (ties go to the lower
    index), so negative-kurtosis directions survive. Rank truncation does not
    preserve super-symmetry, hence the dense return type.
    """
    M = matricize(Z)
    n = int(round(math.isqrt(M.shape[0])))
    if np.allclose(M, M.T, rtol=0, atol=1e-13 * max(1.0, np.abs(M).max())):
        w, V = np.linalg.eigh((M + M.T) / 2)
        keep = np.argsort(-np.abs(w), kind="stable")[:n]
        R = (V[:, keep] * w[keep]) @ V[:, keep].T
    else:
        U, s, Vt = np.linalg.svd(M)
        R = (U[:, :n] * s[:n]) @ Vt[:n]
    return R.reshape((n,) * 4)


def project_symmetric(Z) -> SymmetricTensor4:
    """Average each entry over all index permutations."""
    if isinstance(Z, SymmetricTensor4):
        return Z
    return SymmetricTensor4.from_full(np.asarray(Z, dtype=float), symmetrize=True)


@dataclass(frozen=True)
class ProjectionResult:
    tensor: SymmetricTensor4
    iterations: int
    converged: bool
    degenerate: bool = False


def project_model_set(Z: SymmetricTensor4, tol: float = 1e-10, max_iter: int = 50) -> ProjectionResult:
    """Alternate rank-n and symmetric projections until the iterate settles.

    Stops once ``||Z_t - Z_{t-1}||_F <= tol * max(1, ||Z_t||_F)``; running out
    of iterations only clears the ``converged`` flag.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if Z.frobenius_norm() == 0.0:
        return ProjectionResult(Z, 0, True, degenerate=True)
    current = Z
    for it in range(1, max_iter + 1):
        nxt = project_symmetric(project_rank(current))
        change = (nxt - current).frobenius_norm()
        current = nxt
        if change <= tol * max(1.0, current.frobenius_norm()):
            return ProjectionResult(current, it, True)
    return ProjectionResult(current, max_iter, False)


def _rotation_rows(theta):
    c, s = np.cos(theta), np.sin(theta)
    U = np.stack([c**4, 4 * c**3 * s, 6 * c**2 * s**2, 4 * c * s**3, s**4], axis=1)
    W = np.stack([s**4, -4 * s**3 * c, 6 * s**2 * c**2, -4 * s * c**3, c**4], axis=1)
    return U, W


def _pair_contrast(a0, a1, a2, a3, a4, theta):
    """``R_iiii^2 + R_jjjj^2`` after rotating the pair (i, j) by ``theta``."""
    U, W = _rotation_rows(np.atleast_1d(np.asarray(theta, dtype=float)))
    a = np.array([a0, a1, a2, a3, a4])
    return (U @ a) ** 2 + (W @ a) ** 2


# The sweep kernels run scalar loops, so they are compiled.


@numba.njit(cache=True)
def _best_angle(a0, a1, a2, a3, a4):
    """Rotation angle in [-pi/4, pi/4] maximizing the pairwise squared-diagonal contrast.

    In ``t = 4 theta`` the contrast is a trigonometric polynomial of degree 2,
    ``f(t) = F0 + 2 Re(F1 e^{it}) + 2 Re(F2 e^{2it})``, read off from eight
    samples. The maximum is bracketed on a grid and refined by Newton steps
    on ``f'``.
    """
    F0 = 0.0
    F1 = 0.0j
    F2 = 0.0j
    for k in range(8):
        t = k * (2 * np.pi / 8)
        c = np.cos(t / 4)
        s = np.sin(t / 4)
        ni = c**4 * a0 + 4 * c**3 * s * a1 + 6 * c**2 * s**2 * a2 + 4 * c * s**3 * a3 + s**4 * a4
        nj = s**4 * a0 - 4 * s**3 * c * a1 + 6 * s**2 * c**2 * a2 - 4 * s * c**3 * a3 + c**4 * a4
        f = ni * ni + nj * nj
        F0 += f / 8
        F1 += f * np.exp(-1j * t) / 8
        F2 += f * np.exp(-2j * t) / 8
    scale = max(abs(F0), 1e-300)
    if abs(F1) < 1e-15 * scale and abs(F2) < 1e-15 * scale:
        return 0.0
    # near-ties are rounding noise around one maximum; take the smallest rotation
    ngrid = 64
    vmax = -np.inf
    for k in range(ngrid):
        t = -np.pi + k * (2 * np.pi / ngrid)
        z = np.exp(1j * t)
        vmax = max(vmax, (F1 * z).real + (F2 * z * z).real)
    t = 0.0
    tbest = np.inf
    for k in range(ngrid):
        tk = -np.pi + k * (2 * np.pi / ngrid)
        z = np.exp(1j * tk)
        if (F1 * z).real + (F2 * z * z).real >= vmax - 1e-12 * scale and abs(tk) < tbest:
            tbest = abs(tk)
            t = tk
    for _ in range(30):
        z = np.exp(1j * t)
        d1 = -2 * (F1 * z).imag - 4 * (F2 * z * z).imag
        d2 = -2 * (F1 * z).real - 8 * (F2 * z * z).real
        if d2 >= 0:
            break
        step = d1 / d2
        t -= step
        if abs(step) <= 4e-16 * max(1.0, abs(t)):
            break
    t = (t + np.pi) % (2 * np.pi) - np.pi
    return t / 4


@numba.njit(cache=True)
def _rotate_modes(R, i, j, c, s):
    """Apply the plane rotation ``(c, s)`` on axes i, j of every mode, in place."""
    n = R.shape[0]
    for a in range(n):
        for b in range(n):
            for d in range(n):
                x, y = R[i, a, b, d], R[j, a, b, d]
                R[i, a, b, d], R[j, a, b, d] = c * x + s * y, c * y - s * x
    for a in range(n):
        for b in range(n):
            for d in range(n):
                x, y = R[a, i, b, d], R[a, j, b, d]
                R[a, i, b, d], R[a, j, b, d] = c * x + s * y, c * y - s * x
    for a in range(n):
        for b in range(n):
            for d in range(n):
                x, y = R[a, b, i, d], R[a, b, j, d]
                R[a, b, i, d], R[a, b, j, d] = c * x + s * y, c * y - s * x
    for a in range(n):
        for b in range(n):
            for d in range(n):
                x, y = R[a, b, d, i], R[a, b, d, j]
                R[a, b, d, i], R[a, b, d, j] = c * x + s * y, c * y - s * x


@numba.njit(cache=True)
def _sweep_kernel(R, Q, max_sweeps, angle_tol):
    n = R.shape[0]
    sweeps = 0
    for sweep in range(1, max_sweeps + 1):
        sweeps = sweep
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                theta = _best_angle(R[i, i, i, i], R[i, i, i, j], R[i, i, j, j], R[i, j, j, j], R[j, j, j, j])
                if abs(theta) <= angle_tol:
                    continue
                rotated = True
                c, s = np.cos(theta), np.sin(theta)
                _rotate_modes(R, i, j, c, s)
                for a in range(Q.shape[0]):
                    x, y = Q[a, i], Q[a, j]
                    Q[a, i], Q[a, j] = c * x + s * y, c * y - s * x
        if not rotated:
            break
    return sweeps


def givens_diagonalize(T: np.ndarray, max_sweeps: int | None = None, angle_tol: float = 1e-12,
                       Q0: np.ndarray | None = None):
    """Jacobi sweeps of plane rotations maximizing the sum of squared auto-cumulants.

    Returns ``(Q, R, sweeps)`` with ``R = T x1 Q^T x2 Q^T x3 Q^T x4 Q^T`` the
    rotated tensor, so ``T`` is approximately ``diag(R)`` transformed by ``Q``.
    An orthogonal ``Q0`` warm-starts the sweeps.
    """
    R = np.array(T, dtype=float, copy=True)
    n = R.shape[0]
    if Q0 is None:
        Q = np.eye(n)
    else:
        Q = np.array(Q0, dtype=float, copy=True)
        for _ in range(4):
            # contracting the leading axis appends the new one, so four rounds restore order
            R = np.tensordot(R, Q, axes=(0, 0))
    if max_sweeps is None:
        max_sweeps = default_sweeps(n)
    R = np.ascontiguousarray(R)
    sweeps = _sweep_kernel(R, Q, int(max_sweeps), float(angle_tol))
    return Q, R, sweeps


# Comon's 1 + ceil(sqrt(n)) sweeps stop short of machine precision for n >= 4;
# sweeps end on the angle tolerance well before this cap.
MAX_SWEEPS = 50


def default_sweeps(n: int) -> int:
    return max(MAX_SWEEPS, 1 + math.ceil(math.sqrt(n)))


@dataclass(frozen=True)
class ProxyResult:
    tensor: SymmetricTensor4
    Q: np.ndarray
    S: DiagonalTensor4
    sweeps: int
    below_floor: bool


def proxy_project(Z: SymmetricTensor4, max_sweeps: int | None = None, angle_tol: float = 1e-12,
                  eps_floor: float = EPS_S, Q0: np.ndarray | None = None) -> ProxyResult:
    """Givens diagonalization followed by zeroing every cross-cumulant."""
    Q, R, sweeps = givens_diagonalize(Z.to_full(), max_sweeps, angle_tol, Q0)
    idx = np.arange(Z.n)
    S = DiagonalTensor4(R[idx, idx, idx, idx], eps_floor)
    return ProxyResult(multilinear_transform(S, Q), Q, S, sweeps, not S.is_model_member())
