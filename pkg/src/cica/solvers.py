"""Sketch decoders: iterative projected gradient (IPG) and alternating steepest descent (ASD).

Both minimize ``||y - A(Z)||_2`` over the ICA model set. IPG takes a gradient
step in the full tensor space and projects back; ASD works on the factors
``(S, Q)`` directly, with ``Q`` updated along a Cayley curve that keeps it
orthogonal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from scipy.optimize import least_squares

from . import _rng
from .errors import DimensionError, DivergenceError, RankDeficiencyError
from .projection import project_model_set, proxy_project
from .sketch import SketchOperator, SketchVector
from .tensor import EPS_S, DiagonalTensor4, SymmetricTensor4, multilinear_transform

log = logging.getLogger(__name__)

__all__ = [
    "IpgConfig",
    "AsdConfig",
    "SolveResult",
    "WhitenedOperator",
    "ipg_solve",
    "ipg_solve_unwhitened",
    "asd_solve",
    "asd_objective",
    "grad_S",
    "grad_Q",
    "cayley_step",
    "whitener_from_cov",
    "polish_factors",
]


@dataclass(frozen=True)
class IpgConfig:
    """Settings for :func:`ipg_solve`.

    ``tol`` bounds the squared residual ``||y - A(Z)||^2``.
    ``step_rule`` is ``"normalized"`` (``||g||^2 / ||A g||^2``) or
    ``"paper"`` (``||g||^2 / ||r||^2``), with ``g = A*(r)``; either is shrunk
    by ``beta`` until the projected candidate lowers the residual.
    """

    tol: float = 1e-20
    beta: float = 0.5
    max_outer: int = 500
    max_backtracks: int = 30
    step_rule: str = "normalized"
    projector: str = "proxy"
    restarts: int = 0
    seed: int = 0
    proj_tol: float = 1e-12
    proj_max_iter: int = 50
    eps_floor: float = EPS_S

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if self.step_rule not in ("normalized", "paper"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.projector not in ("alternating", "proxy"):
            raise ValueError(f"unknown projector {self.projector!r}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.restarts < 0 or self.max_outer < 0:
            raise ValueError("restarts and max_outer must be non-negative")


@dataclass(frozen=True)
class AsdConfig:
    """Settings for :func:`asd_solve`."""

    tol: float = 1e-20
    mu: float = 0.1
    tau_init: float = 1.0
    c1: float = 1e-4
    max_outer: int = 500
    max_backtracks: int = 40
    restarts: int = 0
    seed: int = 0
    eps_floor: float = EPS_S

    def __post_init__(self):
        if self.mu <= 0 or self.tau_init <= 0:
            raise ValueError("mu and tau_init must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.restarts < 0 or self.max_outer < 0:
            raise ValueError("restarts and max_outer must be non-negative")


@dataclass
class SolveResult:
    Z_hat: SymmetricTensor4
    Q_hat: np.ndarray
    S_hat: DiagonalTensor4
    residuals: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    restart: int = 0
    solver: str = ""
    P_hat: np.ndarray | None = None

    @property
    def residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")

    @property
    def M_hat(self) -> np.ndarray:
        """Composite mixing estimate ``P Q`` (just ``Q`` when no whitener)."""
        return self.Q_hat if self.P_hat is None else self.P_hat @ self.Q_hat


class WhitenedOperator:
    """The map ``Z -> A(Z x1 P x2 P x3 P x4 P)`` for an ``(d, n)`` whitener ``P``."""

    def __init__(self, op: SketchOperator, P: np.ndarray):
        P = np.asarray(P, dtype=float)
        if P.shape[0] != op.n:
            raise DimensionError(f"whitener has {P.shape[0]} rows, operator expects {op.n}")
        self.op = op
        self.P = P
        self.n = P.shape[1]
        self.m = op.m

    def apply(self, Z: SymmetricTensor4) -> np.ndarray:
        return self.op.apply(multilinear_transform(Z, self.P))

    def adjoint(self, y: np.ndarray) -> SymmetricTensor4:
        return multilinear_transform(self.op.adjoint(y), self.P.T)


def _check_y(op, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (op.m,):
        raise DimensionError(f"sketch length {y.shape} does not match operator m={op.m}")
    if not np.all(np.isfinite(y)):
        raise ValueError("sketch contains non-finite values")
    return y


def _random_model_point(n: int, scale: float, rng) -> tuple[DiagonalTensor4, np.ndarray]:
    G = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diag(R))
    kappa = rng.choice([-1.0, 1.0], size=n) * scale / np.sqrt(n)
    return DiagonalTensor4(kappa), Q


# ---------------------------------------------------------------------------
# IPG


def _ipg_run(op, y, cfg: IpgConfig, Z0: SymmetricTensor4) -> SolveResult:
    # the proxy projector warm-starts from the rotation of the current iterate
    Q_cur = None

    def project(Z, Q0=None):
        if cfg.projector == "proxy":
            res = proxy_project(Z, eps_floor=cfg.eps_floor, Q0=Q0)
            return res.tensor, res.Q
        return project_model_set(Z, cfg.proj_tol, cfg.proj_max_iter).tensor, None

    Z, Q_cur = project(Z0)
    r = y - op.apply(Z)
    res2 = float(r @ r)
    history = [np.sqrt(res2)]
    converged = res2 <= cfg.tol
    it = 0
    while not converged and it < cfg.max_outer:
        g = op.adjoint(r)
        g2 = g.inner(g)
        if g2 == 0.0:
            break
        if cfg.step_rule == "normalized":
            Ag = op.apply(g)
            mu = g2 / float(Ag @ Ag)
        else:
            mu = g2 / res2
        accepted = False
        for _ in range(cfg.max_backtracks):
            cand, Q_cand = project(Z + mu * g, Q_cur)
            rc = y - op.apply(cand)
            rc2 = float(rc @ rc)
            if not np.isfinite(rc2):
                raise DivergenceError(f"non-finite residual at iteration {it}")
            if rc2 < res2:
                accepted = True
                break
            mu *= cfg.beta
        if not accepted:
            break
        Z, r, res2, Q_cur = cand, rc, rc2, Q_cand
        it += 1
        history.append(np.sqrt(res2))
        converged = res2 <= cfg.tol
    factors = proxy_project(Z, eps_floor=cfg.eps_floor, Q0=Q_cur)
    return SolveResult(Z, factors.Q, factors.S, history, it, converged, solver="ipg")


def _ipg_restarts(op, y, cfg: IpgConfig, init) -> SolveResult:
    y = _check_y(op, y)
    best = None
    for k in range(cfg.restarts + 1):
        if k == 0:
            Z0 = init if init is not None else op.adjoint(y)
        else:
            rng = _rng.stream(cfg.seed, k)
            S, Q = _random_model_point(op.n, max(np.linalg.norm(y), 1e-12), rng)
            Z0 = multilinear_transform(S, Q)
        result = _ipg_run(op, y, cfg, Z0)
        result.restart = k
        if best is None or result.residual < best.residual:
            best = result
        if best.converged:
            break
    return best


def ipg_solve(op: SketchOperator, y, cfg: IpgConfig | None = None,
              init: SymmetricTensor4 | None = None) -> SolveResult:
    """Recover a model-set tensor from its sketch by projected gradient descent.

    Starts from the projected back-projection ``A*(y)`` unless ``init`` is
    given. Restarts use random model-set points and the lowest-residual run
    is returned.
    """
    return _ipg_restarts(op, y, cfg or IpgConfig(), init)


def whitener_from_cov(cov: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``P = E_n diag(sqrt(lambda_n))`` from the top-n eigenpairs of ``cov``.

    Returns ``(P, eigenvalues)``; ties keep the lower eigenvector index, so
    an identity covariance gives ``P = I``.
    """
    cov = np.asarray(cov, dtype=float)
    w, E = np.linalg.eigh(cov)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise ValueError("covariance is not positive semidefinite")
    order = np.argsort(-w, kind="stable")[:n]
    lam = w[order]
    if lam[-1] <= 1e-12:
        raise RankDeficiencyError(f"eigenvalue {n} of the covariance is {lam[-1]:.3g}")
    return E[:, order] * np.sqrt(lam), lam


def _skew(w: np.ndarray, n: int) -> np.ndarray:
    B = np.zeros((n, n))
    B[np.triu_indices(n, 1)] = w
    return B - B.T


def polish_factors(op, y, S: DiagonalTensor4, Q: np.ndarray, eps_floor: float = EPS_S):
    """Levenberg-Marquardt refinement of ``(kappa, Q)`` on the model set.

    ``Q`` moves along Cayley curves ``Y(1)`` of a skew matrix built from
    ``n(n-1)/2`` free parameters, so the search has exactly the model-set
    dimension and its convergence does not depend on the conditioning of
    ``op``. Returns ``(S, Q, residual_norm)``.
    """
    n = S.n
    Q = np.asarray(Q, dtype=float)

    def unpack(x):
        return DiagonalTensor4(x[:n]), cayley_step(Q, _skew(x[n:], n), 1.0)

    def fun(x):
        S_, Q_ = unpack(x)
        return op.apply(multilinear_transform(S_, Q_)) - y

    x0 = np.concatenate([S.kappa, np.zeros(n * (n - 1) // 2)])
    sol = least_squares(fun, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    S_new, Q_new = unpack(sol.x)
    return DiagonalTensor4.clamped(S_new.kappa, eps_floor), Q_new, float(np.linalg.norm(sol.fun))


def ipg_solve_unwhitened(op: SketchOperator, sketch: SketchVector, n: int | None = None,
                         cfg: IpgConfig | None = None, polish_starts: int = 4) -> SolveResult:
    """IPG on an unwhitened sketch.

    The whitener comes from the sketch's second moment; the composed map
    ``Z -> A(P-bar Z)`` replaces ``A``. That map carries the conditioning of
    ``P`` to the fourth power, which stalls plain gradient steps, so the IPG
    factors are refined by :func:`polish_factors`. When the refined residual
    misses the tolerance, up to ``polish_starts`` random orthogonal starts
    are refined as well and the best is kept.

    The result carries ``P_hat`` and ``M_hat = P_hat Q_hat``.
    """
    if sketch.mode != "unwhitened":
        raise ValueError("sketch is not in unwhitened mode")
    if sketch.fingerprint != op.fingerprint:
        raise DimensionError("sketch was not built with this operator")
    cfg = cfg or IpgConfig()
    n = op.n if n is None else n
    P, _ = whitener_from_cov(sketch.second_moment(), n)
    W = WhitenedOperator(op, P)
    y = _check_y(W, sketch.y)
    result = _ipg_restarts(W, y, cfg, None)
    result.P_hat = P
    if n == 1 or result.converged:
        return result
    best = polish_factors(W, y, result.S_hat, result.Q_hat, cfg.eps_floor)
    for k in range(polish_starts):
        if best[2] ** 2 <= cfg.tol:
            break
        _, Q0 = _random_model_point(n, 1.0, _rng.stream(cfg.seed, 0x9015, k))
        cand = polish_factors(W, y, _ls_kappa(W, y, Q0, cfg.eps_floor), Q0, cfg.eps_floor)
        if cand[2] < best[2]:
            best = cand
    S, Q, res = best
    if res < result.residual:
        result.S_hat, result.Q_hat = S, Q
        result.Z_hat = multilinear_transform(S, Q)
        result.residuals.append(res)
        result.converged = res**2 <= cfg.tol
    return result


# ---------------------------------------------------------------------------
# ASD


def _residual(S: DiagonalTensor4, Q, op, y) -> np.ndarray:
    return op.apply(multilinear_transform(S, Q)) - y


def asd_objective(S: DiagonalTensor4, Q, op, y) -> float:
    """``||y - A(S x1 Q x2 Q x3 Q x4 Q)||^2``."""
    if S.n != np.shape(Q)[1]:
        raise DimensionError("S and Q disagree on n")
    r = _residual(S, Q, op, np.asarray(y, dtype=float))
    return float(r @ r)


def _contract3(G: SymmetricTensor4, Q: np.ndarray) -> np.ndarray:
    """``T[a, p] = sum_jkl G_ajkl Q_jp Q_kp Q_lp``."""
    T = np.einsum("ajkl,lp->ajkp", G.to_full(), Q)
    T = np.einsum("ajkp,kp->ajp", T, Q)
    return np.einsum("ajp,jp->ap", T, Q)


def _gradients(S: DiagonalTensor4, Q, op, y, r=None):
    if r is None:
        r = _residual(S, Q, op, y)
    T = _contract3(op.adjoint(r), Q)
    gS = 2.0 * np.einsum("ap,ap->p", Q, T)
    gQ = 8.0 * T * S.kappa
    return gS, gQ


def grad_S(S: DiagonalTensor4, Q, op, y) -> np.ndarray:
    """Gradient of :func:`asd_objective` with respect to the diagonal cumulants."""
    return _gradients(S, np.asarray(Q, dtype=float), op, np.asarray(y, dtype=float))[0]


def grad_Q(S: DiagonalTensor4, Q, op, y) -> np.ndarray:
    """Euclidean gradient of :func:`asd_objective` with respect to ``Q``."""
    return _gradients(S, np.asarray(Q, dtype=float), op, np.asarray(y, dtype=float))[1]


def cayley_step(Q: np.ndarray, B: np.ndarray, tau: float) -> np.ndarray:
    """Point ``(I + tau/2 B)^{-1} (I - tau/2 B) Q`` on the Cayley curve of skew ``B``.

    The curve keeps ``Q^T Q`` fixed for every ``tau``.
    """
    B = np.asarray(B, dtype=float)
    assert np.abs(B + B.T).max(initial=0.0) <= 1e-12 * max(1.0, np.abs(B).max(initial=0.0)), \
        "B must be skew-symmetric"
    n = B.shape[0]
    half = 0.5 * tau * B
    return np.linalg.solve(np.eye(n) + half, (np.eye(n) - half) @ Q)


def _asd_run(op, y, cfg: AsdConfig, S: DiagonalTensor4, Q: np.ndarray) -> SolveResult:
    r = _residual(S, Q, op, y)
    F = float(r @ r)
    history = [np.sqrt(F)]
    converged = F <= cfg.tol
    mu, tau = cfg.mu, cfg.tau_init
    it = 0
    while not converged and it < cfg.max_outer:
        progressed = False

        gS, _ = _gradients(S, Q, op, y, r)
        for _ in range(cfg.max_backtracks):
            S_new = DiagonalTensor4.clamped(S.kappa - mu * gS, cfg.eps_floor)
            r_new = _residual(S_new, Q, op, y)
            F_new = float(r_new @ r_new)
            if F_new <= F:
                break
            mu *= 0.5
        else:
            S_new, r_new, F_new = S, r, F
        if F_new < F:
            progressed = True
            mu *= 2.0
        S, r, F = S_new, r_new, F_new

        _, gQ = _gradients(S, Q, op, y, r)
        B = gQ @ Q.T - Q @ gQ.T
        slope = 0.5 * float(np.sum(B * B))
        if slope > 0:
            for _ in range(cfg.max_backtracks):
                Y = cayley_step(Q, B, tau)
                rY = _residual(S, Y, op, y)
                FY = float(rY @ rY)
                if FY <= F - cfg.c1 * tau * slope:
                    if FY < F:
                        progressed = True
                    Q, r, F = Y, rY, FY
                    tau *= 2.0
                    break
                tau *= 0.5
        if not np.isfinite(F):
            raise DivergenceError(f"non-finite objective at iteration {it}")
        it += 1
        history.append(np.sqrt(F))
        converged = F <= cfg.tol
        if not progressed:
            break
    Z = multilinear_transform(S, Q)
    return SolveResult(Z, Q, S, history, it, converged, solver="asd")


def _ls_kappa(op, y, Q, eps_floor) -> DiagonalTensor4:
    """Best diagonal cumulants for a fixed ``Q`` (linear least squares)."""
    n = Q.shape[1]
    K = np.column_stack([
        op.apply(multilinear_transform(DiagonalTensor4(np.eye(n)[p]), Q)) for p in range(n)
    ])
    kappa, *_ = np.linalg.lstsq(K, y, rcond=None)
    return DiagonalTensor4.clamped(kappa, eps_floor)


def asd_solve(op: SketchOperator, y, cfg: AsdConfig | None = None,
              init: tuple[DiagonalTensor4, np.ndarray] | None = None) -> SolveResult:
    """Alternating descent over the diagonal cumulants and the orthogonal factor.

    Each iteration takes a backtracked gradient step on ``S`` followed by an
    Armijo curve search along the Cayley transform for ``Q``. The default
    start is the Givens factorization of ``A*(y)``.
    """
    cfg = cfg or AsdConfig()
    y = _check_y(op, y)
    best = None
    for k in range(cfg.restarts + 1):
        if k == 0 and init is not None:
            S0, Q0 = init
            Q0 = np.asarray(Q0, dtype=float)
        elif k == 0:
            Q0 = proxy_project(op.adjoint(y), eps_floor=cfg.eps_floor).Q
            S0 = _ls_kappa(op, y, Q0, cfg.eps_floor)
        else:
            _, Q0 = _random_model_point(op.n, 1.0, _rng.stream(cfg.seed, k))
            S0 = _ls_kappa(op, y, Q0, cfg.eps_floor)
        result = _asd_run(op, y, cfg, DiagonalTensor4.clamped(S0.kappa, cfg.eps_floor), Q0)
        result.restart = k
        if best is None or result.residual < best.residual:
            best = result
        if best.converged:
            break
    return best
