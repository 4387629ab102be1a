"""Monte Carlo harnesses: phase transition, relative efficiency, finite-sample decay.

Every cell draws from its own counter-based stream keyed by the master seed
and the cell coordinates, so results do not depend on execution order or on
how cells are spread over workers.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

import numpy as np

from . import _rng
from .evalsynth import (FIG_COCKTAIL, amari_error, population_cumulant, random_mixing,
                        random_orthogonal, relative_efficiency, sample_sources)
from .pipeline import baseline_comon_fit, cica_fit
from .sketch import make_operator
from .solvers import AsdConfig, IpgConfig, asd_solve, ipg_solve
from .tensor import estimate_cumulant, n_unique

__all__ = [
    "SUCCESS_THRESHOLD",
    "reference_lines",
    "phase_transition",
    "efficiency",
    "finite_sample_decay",
    "loglog_slope",
    "default_m_grid",
]

SUCCESS_THRESHOLD = 1e-6

# stream tags keep the different draws of one cell apart
_TAG_MIX, _TAG_OP, _TAG_SRC = 1, 2, 3


def _seed(master: int, *keys: int) -> int:
    return int(_rng.stream(master, *keys).integers(0, 2**63))


def reference_lines(n: int) -> dict:
    """Model-set dimension multiples and the full cumulant size for ``n`` sources."""
    dim = n * (n + 1) // 2
    return {"dim": dim, "dim2": 2 * dim, "dim4": 4 * dim, "p": n_unique(n)}


def _map(fn, tasks, threads: int):
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def _solve(solver, op, y, seed):
    if solver == "ipg":
        return ipg_solve(op, y, IpgConfig(seed=seed))
    if solver == "asd":
        return asd_solve(op, y, AsdConfig(seed=seed))
    raise ValueError(f"unknown solver {solver!r}")


def _phase_cell(task) -> float:
    n, m, t, seed, solver, kind, source = task
    Q = random_orthogonal(n, _seed(seed, _TAG_MIX, n, t))
    Z = population_cumulant(source, Q)
    op = make_operator(kind, m, n, _seed(seed, _TAG_OP, n, m, t))
    result = _solve(solver, op, op.apply(Z), seed)
    return amari_error(Q, result.Q_hat)


def phase_transition(n_values: Sequence[int], m_values, trials: int = 50, seed: int = 0,
                     solver: str = "ipg", kind: str = "gaussian", source: str = "laplace",
                     threshold: float = SUCCESS_THRESHOLD, threads: int = 1) -> list[dict]:
    """Recovery probability over a grid of ``(n, m)`` on noiseless population cumulants.

    ``m_values`` is a sequence shared by every ``n`` or a callable ``n -> sequence``.
    Trial ``t`` at a given ``n`` uses the same orthogonal mixing for every ``m``;
    the operator is redrawn per cell. Success means Amari error at most
    ``threshold``.
    """
    cells = []
    for n in n_values:
        ms = m_values(n) if callable(m_values) else m_values
        for m in ms:
            cells.append((int(n), int(m)))
    tasks = [(n, m, t, seed, solver, kind, source) for n, m in cells for t in range(trials)]
    errors = _map(_phase_cell, tasks, threads)
    rows = []
    for c, (n, m) in enumerate(cells):
        errs = np.array(errors[c * trials:(c + 1) * trials])
        successes = int(np.sum(errs <= threshold))
        rows.append({"n": n, "m": m, "trials": trials, "successes": successes,
                     "prob": successes / trials, **reference_lines(n)})
    return rows


def _efficiency_cell(task):
    kind_of, n, N, m, t, seed, M, solver, kind = task
    cocktail = [FIG_COCKTAIL[i % len(FIG_COCKTAIL)] for i in range(n)]
    X = sample_sources(cocktail, n, N, _seed(seed, _TAG_SRC, t)) @ M.T
    if kind_of == "full":
        return amari_error(M, baseline_comon_fit(X, n).M)
    est = cica_fit(X, n, solver=solver, kind=kind, m=m, seed=_seed(seed, _TAG_OP, n, m, t),
                   cfg=IpgConfig(seed=seed) if solver == "ipg" else AsdConfig(seed=seed))
    return amari_error(M, est.M)


def efficiency(n: int = 6, N: int = 1000, m_list: Sequence[int] = (60, 100, 150, 250),
               trials: int = 100, seed: int = 0, solver: str = "ipg", kind: str = "gaussian",
               threads: int = 1) -> list[dict]:
    """Relative efficiency of sketched fits against the full-cumulant Givens fit.

    The true mixing matrix is drawn once and fixed; each trial draws fresh
    sources (one of each cocktail distribution) and the sketch operator is
    redrawn per ``(m, trial)``. ``e = var(full errors) / var(sketch errors)``.
    """
    if not m_list:
        raise ValueError("m_list is empty")
    M = random_mixing(n, n, _seed(seed, _TAG_MIX, n))
    full_tasks = [("full", n, N, 0, t, seed, M, solver, kind) for t in range(trials)]
    sketch_tasks = [("sketch", n, N, int(m), t, seed, M, solver, kind)
                    for m in m_list for t in range(trials)]
    errs = _map(_efficiency_cell, full_tasks + sketch_tasks, threads)
    full = np.array(errs[:trials])
    rows = []
    for k, m in enumerate(m_list):
        sk = np.array(errs[trials * (k + 1):trials * (k + 2)])
        rows.append({"m": int(m), "e": relative_efficiency(full, sk), "trials": trials,
                     "median_full": float(np.median(full)), "median_sketch": float(np.median(sk))})
    return rows


def finite_sample_decay(n: int = 4, Ns: Sequence[int] = (1000, 10000, 100000), seeds: int = 20,
                        m: int | None = None, seed: int = 0, source: str = "laplace",
                        kind: str = "gaussian") -> list[dict]:
    """Sketch error ``||A(Z_N) - A(Z)||_2`` of the empirical cumulant, averaged over seeds.

    Sources are mixed by a fixed orthogonal matrix, so the population
    cumulant is known exactly.
    """
    m = 2 * n * (n + 1) if m is None else m
    Q = random_orthogonal(n, _seed(seed, _TAG_MIX, n))
    op = make_operator(kind, m, n, _seed(seed, _TAG_OP, n, m))
    y = op.apply(population_cumulant(source, Q))
    rows = []
    for N in Ns:
        errs = []
        for s in range(seeds):
            X = sample_sources(source, n, int(N), _seed(seed, _TAG_SRC, int(N), s)) @ Q.T
            errs.append(np.linalg.norm(op.apply(estimate_cumulant(X)) - y))
        rows.append({"N": int(N), "error": float(np.mean(errs)), "seeds": seeds})
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)[0])


def default_m_grid(n: int) -> list[int]:
    """Sketch sizes at 1, 2 and 4 times the model-set dimension."""
    dim = n * (n + 1) // 2
    return [dim, 2 * dim, 4 * dim]
