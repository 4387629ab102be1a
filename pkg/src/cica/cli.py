"""Command-line interface: ``cica <subcommand> ...``.

Exit codes: 0 ok, 2 format error, 3 dimension error, 4 fingerprint
mismatch, 5 non-convergence (with ``--strict``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DimensionError, FingerprintError, RankDeficiencyError, SketchFormatError
from .evalsynth import amari_error
from .experiments import SUCCESS_THRESHOLD, default_m_grid, efficiency, phase_transition
from .pipeline import cica_fit, cica_fit_unwhitened, load_data, prewhiten
from .sketch import make_operator, merge, read_sketch, sketch_stream, write_sketch
from .solvers import AsdConfig, IpgConfig, asd_solve, ipg_solve, ipg_solve_unwhitened
from .tensor import n_unique

EXIT_OK, EXIT_FORMAT, EXIT_DIMENSION, EXIT_FINGERPRINT, EXIT_NONCONVERGED = 0, 2, 3, 4, 5

SCHEMAS = {
    "estimate": "cica.estimate/1",
    "phase_transition": "cica.phase_transition/1",
    "efficiency": "cica.efficiency/1",
}
PHASE_COLUMNS = ["n", "m", "trials", "successes", "prob", "dim", "dim2", "dim4", "p"]
EFFICIENCY_COLUMNS = ["m", "e", "trials", "median_full", "median_sketch"]


class NonConvergence(Exception):
    pass


def _parse_range(text: str) -> list[int]:
    """``"2:5"`` (inclusive), ``"10:100:10"`` or ``"3,6,12"``."""
    text = text.strip()
    if ":" in text:
        parts = [int(v) for v in text.split(":")]
        if len(parts) == 2:
            parts.append(1)
        lo, hi, step = parts
        if step <= 0 or hi < lo:
            raise ValueError(f"bad range {text!r}")
        return list(range(lo, hi + 1, step))
    return [int(v) for v in text.split(",") if v.strip()]


def _write_text(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _table(rows, columns, schema: str, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"schema": schema, "rows": [{c: r[c] for c in columns} for r in rows]},
                          indent=2) + "\n"
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({c: (repr(float(r[c])) if isinstance(r[c], float) else r[c]) for c in columns})
    return buf.getvalue()


def _estimate_json(M, Q, kappa, residuals, converged, solver, wall, extra=None) -> str:
    doc = {
        "schema": SCHEMAS["estimate"],
        "version": __version__,
        "solver": solver,
        "M": np.asarray(M).tolist(),
        "Q": np.asarray(Q).tolist(),
        "S": np.asarray(kappa).tolist(),
        "residuals": [float(r) for r in residuals],
        "converged": bool(converged),
        "wall_time": wall,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    doc.update(extra or {})
    return json.dumps(doc, indent=2) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_sketch(args) -> int:
    X = load_data(args.input)
    N, d = X.shape
    if args.mode == "whitened":
        n = args.n if args.n is not None else d
        _, data = prewhiten(X, n)
    else:
        if args.n is not None and args.n != d:
            raise DimensionError(f"unwhitened sketches keep all {d} channels; drop --n or set it to {d}")
        n = d
        data = X - X.mean(axis=0)
    m = args.m if args.m is not None else 2 * n * (n + 1)
    op = make_operator(args.kind, m, n, args.seed)
    sv = sketch_stream(op, data, args.mode)
    write_sketch(args.out, sv)
    p = n_unique(n)
    print(f"n={n} m={m} p={p} N={N} ratio={p / m:.4g}")
    return EXIT_OK


def cmd_merge(args) -> int:
    parts = [read_sketch(p) for p in args.inputs]
    out = parts[0]
    for sv in parts[1:]:
        out = merge(out, sv)
    write_sketch(args.out, out)
    print(f"merged {len(parts)} sketches, N={out.sample_count}")
    return EXIT_OK


def cmd_solve(args) -> int:
    sv = read_sketch(args.sketch)
    op = sv.operator()
    t0 = time.perf_counter()
    if sv.mode == "unwhitened":
        if args.solver != "ipg":
            raise DimensionError("unwhitened sketches are solved with ipg")
        result = ipg_solve_unwhitened(op, sv, args.n, IpgConfig(restarts=args.restarts, seed=args.seed))
    elif args.solver == "ipg":
        result = ipg_solve(op, sv.y, IpgConfig(restarts=args.restarts, seed=args.seed))
    else:
        result = asd_solve(op, sv.y, AsdConfig(restarts=args.restarts, seed=args.seed))
    wall = time.perf_counter() - t0
    _write_text(args.out, _estimate_json(result.M_hat, result.Q_hat, result.S_hat.kappa, result.residuals,
                                         result.converged, args.solver, wall,
                                         {"iterations": result.iterations, "restart": result.restart}))
    if args.strict and not result.converged:
        raise NonConvergence(f"solver stopped at residual {result.residual:.3g} without converging")
    return EXIT_OK


def cmd_fit(args) -> int:
    X = load_data(args.input)
    t0 = time.perf_counter()
    if args.mode == "whitened":
        cfg = IpgConfig(restarts=args.restarts, seed=args.seed) if args.solver == "ipg" \
            else AsdConfig(restarts=args.restarts, seed=args.seed)
        est = cica_fit(X, args.n, solver=args.solver, kind=args.kind, m=args.m, seed=args.seed, cfg=cfg)
    else:
        est = cica_fit_unwhitened(X, args.n, kind=args.kind, m=args.m, seed=args.seed,
                                  cfg=IpgConfig(restarts=args.restarts, seed=args.seed))
    wall = time.perf_counter() - t0
    _write_text(args.out, _estimate_json(est.M, est.Q, est.S.kappa, est.residuals, est.converged,
                                         est.solver or args.solver, wall))
    if args.components:
        np.savetxt(args.components, est.unmix(X), delimiter=",")
    if args.strict and not est.converged:
        raise NonConvergence("fit did not converge")
    return EXIT_OK


def cmd_phase_transition(args) -> int:
    trials = 250 if args.paper_scale and args.trials is None else (args.trials or 50)
    if args.paper_scale and args.n_range is None:
        n_values = list(range(2, 11))
    else:
        n_values = _parse_range(args.n_range or "2:6")
    if args.m_range:
        ms = _parse_range(args.m_range)
        m_values = ms
    elif args.paper_scale:
        m_values = lambda n: list(range(2, 701, 2))  # noqa: E731
    else:
        m_values = default_m_grid
    rows = phase_transition(n_values, m_values, trials=trials, seed=args.seed, solver=args.solver,
                            kind=args.kind, threshold=args.threshold, threads=args.threads)
    _write_text(args.out, _table(rows, PHASE_COLUMNS, SCHEMAS["phase_transition"], args.format))
    return EXIT_OK


def cmd_efficiency(args) -> int:
    m_list = _parse_range(args.m_list)
    rows = efficiency(n=args.n, N=args.N, m_list=m_list, trials=args.trials, seed=args.seed,
                      solver=args.solver, kind=args.kind, threads=args.threads)
    _write_text(args.out, _table(rows, EFFICIENCY_COLUMNS, SCHEMAS["efficiency"], args.format))
    return EXIT_OK


def _read_matrix(path) -> np.ndarray:
    text = Path(path).read_text().strip()
    if text.startswith("{"):
        return np.array(json.loads(text)["M"], dtype=float)
    return load_data(path)


def cmd_amari(args) -> int:
    print(repr(amari_error(_read_matrix(args.truth), _read_matrix(args.estimate))))
    return EXIT_OK


# ---------------------------------------------------------------------------


def _global_flags(parser, suppress: bool):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="master seed (u64)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker processes for experiments")
    parser.add_argument("--strict", action="store_true", default=default(False),
                        help="exit 5 when a solver does not converge")
    parser.add_argument("--format", choices=["csv", "json"], default=default("csv"),
                        help="table format for experiment output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cica", description="Compressive ICA from cumulant sketches.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("sketch", cmd_sketch, "sketch a data file")
    p.add_argument("input")
    p.add_argument("--mode", choices=["whitened", "unwhitened"], default="whitened")
    p.add_argument("--kind", choices=["gaussian", "srht"], default="gaussian")
    p.add_argument("--m", type=int, default=None, help="sketch size (default 2n(n+1))")
    p.add_argument("--n", type=int, default=None, help="number of sources (whitened mode)")
    p.add_argument("--out", required=True)

    p = add("merge", cmd_merge, "merge sketch files built with the same operator")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)

    p = add("solve", cmd_solve, "recover the mixing matrix from a sketch file")
    p.add_argument("sketch")
    p.add_argument("--solver", choices=["ipg", "asd"], default="ipg")
    p.add_argument("--restarts", type=int, default=0)
    p.add_argument("--n", type=int, default=None, help="number of sources (unwhitened sketches)")
    p.add_argument("--out", default="-")

    p = add("fit", cmd_fit, "sketch and solve a data file end to end")
    p.add_argument("input")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--solver", choices=["ipg", "asd"], default="ipg")
    p.add_argument("--mode", choices=["whitened", "unwhitened"], default="whitened")
    p.add_argument("--kind", choices=["gaussian", "srht"], default="gaussian")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--restarts", type=int, default=0)
    p.add_argument("--out", default="-")
    p.add_argument("--components", default=None, help="write estimated sources as CSV")

    p = add("phase-transition", cmd_phase_transition, "recovery probability over (n, m)")
    p.add_argument("--n-range", default=None, help='e.g. "2:6" or "2,4,8"')
    p.add_argument("--m-range", default=None, help='e.g. "4:80:4"; default 1x, 2x, 4x the model-set dimension')
    p.add_argument("--trials", type=int, default=None, help="default 50 (250 with --paper-scale)")
    p.add_argument("--solver", choices=["ipg", "asd"], default="ipg")
    p.add_argument("--kind", choices=["gaussian", "srht"], default="gaussian")
    p.add_argument("--threshold", type=float, default=SUCCESS_THRESHOLD)
    p.add_argument("--paper-scale", action="store_true", help="n up to 10, m from 2 to 700, 250 trials")
    p.add_argument("--out", default="-")

    p = add("efficiency", cmd_efficiency, "relative efficiency against the full-cumulant fit")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--m-list", default="60,100,150,250")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--solver", choices=["ipg", "asd"], default="ipg")
    p.add_argument("--kind", choices=["gaussian", "srht"], default="gaussian")
    p.add_argument("--out", default="-")

    p = add("amari", cmd_amari, "Amari error between two mixing matrices (truth first)")
    p.add_argument("truth", help="CSV, binary data file or estimate JSON")
    p.add_argument("estimate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SketchFormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (DimensionError, RankDeficiencyError) as exc:
        print(f"dimension error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except FingerprintError as exc:
        print(f"fingerprint mismatch: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except NonConvergence as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
