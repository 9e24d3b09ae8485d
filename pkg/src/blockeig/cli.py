"""Benchmark driver: build a Laplacian eigenproblem from flags, run the
solver, compare against the analytic oracle, and report.

The flag set follows the single-dash convention of classic eigensolver test
drivers: ``-n nx ny nz`` picks the grid, ``-vrand m`` (synonym ``-n_eigs m``)
the block size, ``-seed`` the random initial block, ``-tol`` / ``-itr`` the
stopping rules, ``-precond`` and ``-pcgitr`` the preconditioner (``-pcgitr
0`` applies the base preconditioner directly; ``p >= 1`` wraps it in p inner
PCG steps on A), and ``-verb`` the verbosity (0 prints nothing but errors).
Reports go to stdout, and optionally to machine-readable files: ``-json``
(full run record), ``-csv`` (per-iteration history rows ``iter,j,ritz,
resid,active``), ``-out_evecs`` (binary eigenvector block).  A prior run's
eigenvector file fed back via ``-constraints`` hard-locks those vectors, so
consecutive runs walk up the spectrum slice by slice.

Sweep mode (``-sweep inner_iter`` or ``-sweep block_size``) runs a matrix of
solves with a fixed seed, varying one knob, and emits one summary row per
configuration instead of the single-run report.

Exit codes: 0 full convergence, 2 iteration budget exhausted with partial
convergence, 1 error (bad flags, file problems, or solver failure).
"""

import argparse
import json
import struct
import sys
import time

import numpy as np

from .lobpcg import Constraints, SolverConfig, solve
from .operators import (
    Grid3D,
    inner_pcg_preconditioner,
    jacobi_preconditioner,
    laplacian3d,
)
from .problems import exact_eigenvalues

__all__ = [
    "main",
    "sweep",
    "build_parser",
    "save_eigenvectors",
    "load_eigenvectors",
]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2

SWEEP_DEFAULTS = {
    "inner_iter": (0, 1, 2, 5, 10, 15, 20),
    "block_size": (1, 2, 4, 8, 16),
}

_EVEC_MAGIC = b"LOBX"
_EVEC_VERSION = 1
_EVEC_HEADER = struct.Struct("<4sIQQ")


def save_eigenvectors(path, x):
    """Write an (n, k) eigenvector block to a binary container.

    Layout: magic bytes "LOBX", version u32, n u64, k u64, then the n*k
    doubles in column-major order, all little-endian.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"eigenvector block must be 2-d, got shape {x.shape}")
    n, k = x.shape
    with open(path, "wb") as f:
        f.write(_EVEC_HEADER.pack(_EVEC_MAGIC, _EVEC_VERSION, n, k))
        f.write(x.astype("<f8", copy=False).tobytes(order="F"))


def load_eigenvectors(path):
    """Read an eigenvector block written by ``save_eigenvectors``."""
    with open(path, "rb") as f:
        header = f.read(_EVEC_HEADER.size)
        if len(header) != _EVEC_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, n, k = _EVEC_HEADER.unpack(header)
        if magic != _EVEC_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != _EVEC_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        payload = f.read()
    expected = 8 * n * k
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return flat.reshape((n, k), order="F")


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits with code 1 on malformed flags."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_ERROR)


def build_parser():
    parser = _Parser(
        prog="blockeig-bench",
        description="Block preconditioned eigensolver benchmark on the "
        "3-d 7-point Dirichlet Laplacian.",
        allow_abbrev=False,
    )
    parser.add_argument(
        "-n",
        nargs=3,
        type=int,
        default=[10, 10, 10],
        metavar=("NX", "NY", "NZ"),
        help="grid dimensions (default 10 10 10)",
    )
    parser.add_argument(
        "-vrand",
        "-n_eigs",
        dest="m",
        type=int,
        default=5,
        metavar="M",
        help="block size: number of eigenpairs, started from M random "
        "vectors (default 5)",
    )
    parser.add_argument(
        "-seed", type=int, default=0, help="random seed for the initial block"
    )
    parser.add_argument(
        "-tol",
        type=float,
        default=1e-6,
        help="per-vector residual 2-norm tolerance (default 1e-6)",
    )
    parser.add_argument(
        "-itr",
        type=int,
        default=200,
        metavar="K",
        help="maximum outer iterations (default 200)",
    )
    parser.add_argument(
        "-pcgitr",
        type=int,
        default=0,
        metavar="P",
        help="inner PCG steps per preconditioner application; 0 applies "
        "the base preconditioner directly (default 0)",
    )
    parser.add_argument(
        "-precond",
        choices=("none", "jacobi"),
        default="jacobi",
        help="base preconditioner (default jacobi)",
    )
    parser.add_argument(
        "-verb",
        type=int,
        default=1,
        help="verbosity: 0 silent, 1 summary, 2 per-iteration (default 1)",
    )
    parser.add_argument(
        "-full_out",
        type=int,
        choices=(0, 1),
        default=0,
        help="1 includes the complete per-iteration history in the JSON "
        "report (default 0)",
    )
    parser.add_argument(
        "-json", dest="json_path", metavar="PATH", help="write the run record as JSON"
    )
    parser.add_argument(
        "-csv",
        dest="csv_path",
        metavar="PATH",
        help="write per-iteration history (or the sweep table) as CSV",
    )
    parser.add_argument(
        "-constraints",
        dest="constraints_path",
        metavar="PATH",
        help="eigenvector file from a prior run; those vectors are "
        "hard-locked and the solve targets the next eigenpairs up",
    )
    parser.add_argument(
        "-out_evecs",
        dest="out_evecs_path",
        metavar="PATH",
        help="write computed eigenvectors to this file (feed to a later "
        "run via -constraints)",
    )
    parser.add_argument(
        "-sweep",
        choices=tuple(SWEEP_DEFAULTS),
        help="run a parameter sweep instead of a single solve",
    )
    parser.add_argument(
        "-sweep_values",
        metavar="V1,V2,...",
        help="comma-separated values for the swept parameter "
        "(defaults: inner_iter 0,1,2,5,10,15,20; block_size 1,2,4,8,16)",
    )
    return parser


def _validate(parser, args):
    if any(d < 1 for d in args.n):
        parser.error(f"-n dimensions must be positive, got {args.n}")
    if args.m < 1:
        parser.error(f"block size must be positive, got {args.m}")
    if args.tol <= 0.0:
        parser.error(f"-tol must be positive, got {args.tol}")
    if args.itr < 1:
        parser.error(f"-itr must be positive, got {args.itr}")
    if args.pcgitr < 0:
        parser.error(f"-pcgitr must be nonnegative, got {args.pcgitr}")
    if args.verb < 0:
        parser.error(f"-verb must be nonnegative, got {args.verb}")


def _preconditioner(op, precond, pcgitr):
    base = jacobi_preconditioner(op) if precond == "jacobi" else None
    if pcgitr == 0:
        return base
    return inner_pcg_preconditioner(op, base, pcgitr)


def _precond_descriptor(precond, pcgitr):
    return f"pcg:{pcgitr}" if pcgitr > 0 else precond


def _config_echo(args):
    return {
        "n": [int(d) for d in args.n],
        "m": int(args.m),
        "seed": int(args.seed),
        "tol": float(args.tol),
        "itr": int(args.itr),
        "pcgitr": int(args.pcgitr),
        "precond": args.precond,
        "preconditioner": _precond_descriptor(args.precond, args.pcgitr),
        "verb": int(args.verb),
        "full_out": int(args.full_out),
        "constraints": args.constraints_path,
        "out_evecs": args.out_evecs_path,
    }


def _history_rows(report):
    rows = []
    for entry in report.history:
        if entry.ritz is None:
            continue
        for j in range(entry.ritz.size):
            rows.append(
                {
                    "iter": int(entry.iteration),
                    "j": j,
                    "ritz": float(entry.ritz[j]),
                    "resid": float(entry.residual_norms[j]),
                    "active": bool(entry.active[j]),
                }
            )
    return rows


def _run_record(args, report, analytic, setup_sec, solve_sec):
    rel_errors = None
    analytic_list = None
    if analytic is not None:
        analytic_list = [float(v) for v in analytic]
        rel_errors = [
            float(abs(lam - ref) / abs(ref))
            for lam, ref in zip(report.eigenvalues, analytic)
        ]
    return {
        "config": _config_echo(args),
        "eigenvalues": [float(v) for v in report.eigenvalues],
        "analytic": analytic_list,
        "rel_errors": rel_errors,
        "iterations": int(report.iterations_used),
        "history": _history_rows(report) if args.full_out else [],
        "setup_sec": float(setup_sec),
        "solve_sec": float(solve_sec),
        "status": report.status,
    }


def _write_history_csv(path, report):
    with open(path, "w") as f:
        f.write("iter,j,ritz,resid,active\n")
        for row in _history_rows(report):
            f.write(
                f"{row['iter']},{row['j']},{row['ritz']!r},"
                f"{row['resid']!r},{int(row['active'])}\n"
            )


def _print_report(args, report, analytic, setup_sec, solve_sec):
    grid = "x".join(str(d) for d in args.n)
    desc = _precond_descriptor(args.precond, args.pcgitr)
    print(
        f"grid {grid}  m {args.m}  precond {desc}  seed {args.seed}  "
        f"tol {args.tol:g}"
    )
    print(f"{'':>4} {'eigenvalue':>22} {'analytic':>22} {'rel err':>10} conv")
    for j, lam in enumerate(report.eigenvalues):
        if analytic is not None:
            ref = analytic[j]
            rel = abs(lam - ref) / abs(ref)
            print(
                f"{j:>4} {lam:>22.15f} {ref:>22.15f} {rel:>10.2e} "
                f"{'yes' if report.converged[j] else 'NO'}"
            )
        else:
            print(
                f"{j:>4} {lam:>22.15f} {'-':>22} {'-':>10} "
                f"{'yes' if report.converged[j] else 'NO'}"
            )
    print(
        f"status {report.status}  iterations {report.iterations_used}  "
        f"setup {setup_sec:.3f}s  solve {solve_sec:.3f}s"
    )


def sweep(kind, args):
    """Run one solve per parameter value, fixed seed, and emit the table.

    kind "inner_iter" varies -pcgitr over the sweep values; "block_size"
    varies m.  Returns an exit code: 0 unless a solve failed outright.
    """
    if args.sweep_values is not None:
        try:
            values = [int(v) for v in args.sweep_values.split(",") if v.strip()]
        except ValueError:
            print(f"bad -sweep_values: {args.sweep_values!r}", file=sys.stderr)
            return EXIT_ERROR
    else:
        values = list(SWEEP_DEFAULTS[kind])
    if not values:
        print("empty sweep range", file=sys.stderr)
        return EXIT_ERROR
    if kind == "block_size" and any(v < 1 for v in values):
        print("block sizes must be positive", file=sys.stderr)
        return EXIT_ERROR
    if kind == "inner_iter" and any(v < 0 for v in values):
        print("inner iteration counts must be nonnegative", file=sys.stderr)
        return EXIT_ERROR

    grid = Grid3D(*args.n)
    op = laplacian3d(grid)
    column = "pcgitr" if kind == "inner_iter" else "block_size"
    rows = []
    for value in values:
        m = args.m if kind == "inner_iter" else value
        pcgitr = value if kind == "inner_iter" else args.pcgitr
        t = _preconditioner(op, args.precond, pcgitr)
        config = SolverConfig(
            block_size=m,
            tol=args.tol,
            max_iter=args.itr,
            seed=args.seed,
            verbosity=0,
            lock_history=False,
        )
        start = time.perf_counter()
        report = solve(op, t=t, config=config)
        elapsed = time.perf_counter() - start
        rows.append(
            {
                column: value,
                "iterations": int(report.iterations_used),
                "solve_sec": float(elapsed),
                "status": report.status,
            }
        )

    if args.verb >= 1:
        print(f"{column:>10} {'iterations':>10} {'solve_sec':>10}  status")
        for row in rows:
            print(
                f"{row[column]:>10} {row['iterations']:>10} "
                f"{row['solve_sec']:>10.3f}  {row['status']}"
            )
    if args.csv_path:
        with open(args.csv_path, "w") as f:
            f.write(f"{column},iterations,solve_sec\n")
            for row in rows:
                f.write(
                    f"{row[column]},{row['iterations']},{row['solve_sec']!r}\n"
                )
    if args.json_path:
        record = {"sweep": kind, "config": _config_echo(args), "rows": rows}
        with open(args.json_path, "w") as f:
            json.dump(record, f, indent=2)
            f.write("\n")
    if any(row["status"].startswith("Failed") for row in rows):
        return EXIT_ERROR
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(parser, args)
    except SystemExit as err:
        return err.code if err.code is not None else EXIT_ERROR

    try:
        if args.sweep:
            return sweep(args.sweep, args)

        setup_start = time.perf_counter()
        grid = Grid3D(*args.n)
        op = laplacian3d(grid)
        t = _preconditioner(op, args.precond, args.pcgitr)
        constraints = None
        if args.constraints_path:
            basis = load_eigenvectors(args.constraints_path)
            if basis.shape[0] != grid.n:
                raise ValueError(
                    f"constraint vectors have dimension {basis.shape[0]}, "
                    f"but the grid has {grid.n} points"
                )
            constraints = Constraints.from_basis(basis)
        config = SolverConfig(
            block_size=args.m,
            tol=args.tol,
            max_iter=args.itr,
            seed=args.seed,
            verbosity=args.verb if args.verb >= 2 else 0,
        )
        setup_sec = time.perf_counter() - setup_start

        solve_start = time.perf_counter()
        report = solve(op, t=t, y=constraints, config=config)
        solve_sec = time.perf_counter() - solve_start

        offset = 0 if constraints is None else constraints.count
        analytic = None
        if offset + args.m <= grid.n:
            analytic = exact_eigenvalues(grid, offset + args.m)[offset:]

        if args.verb >= 1:
            _print_report(args, report, analytic, setup_sec, solve_sec)
        if args.json_path:
            record = _run_record(args, report, analytic, setup_sec, solve_sec)
            with open(args.json_path, "w") as f:
                json.dump(record, f, indent=2)
                f.write("\n")
        if args.csv_path:
            _write_history_csv(args.csv_path, report)
        if args.out_evecs_path:
            save_eigenvectors(args.out_evecs_path, report.eigenvectors)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR

    if not report.ok:
        print(f"error: solver reported {report.status}", file=sys.stderr)
        return EXIT_ERROR
    if not report.all_converged:
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
