"""Command line experiment runner.

    minresfem run <config> [--serial] [--out DIR]
    minresfem infsup <config> [--serial] [--out DIR]
    minresfem helmholtz <levels>

Exit status 0 on success, 1 on invalid input, 2 on numerical failure.
"""
import argparse
import contextlib
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .adapt import AdaptError, adaptive_loop
from .analysis import eoc, helmholtz_verify
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .mesh import bisect, initial_square_mesh
from .solve import SolverError

log = logging.getLogger(__name__)

CSV_COLUMNS = ("level", "ntri", "dofs_x", "gamma_tilde", "estimator", "err_ref")
HELMHOLTZ_TOL = 1e-10
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

__all__ = ["ExperimentConfig", "parse_config", "run_experiment", "emit_csv",
           "eoc_table", "main"]


# ---------------------------------------------------------------------------
# CSV

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


class CsvSink:
    """Writes the header at once and flushes every row as it arrives."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_COLUMNS)
        self._fh.flush()

    def __call__(self, rec):
        self._w.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_csv(trace, path):
    """Write a trace (iterable of records) with the fixed column contract."""
    with CsvSink(path) as sink:
        for rec in trace:
            sink(rec)
    return Path(path)


def read_csv(path):
    """Parse a results file back into dictionaries (blank fields -> None)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if v == "":
                    rec[k] = None
                elif k in ("level", "ntri", "dofs_x"):
                    rec[k] = int(v)
                else:
                    rec[k] = float(v)
            out.append(rec)
    return out


# ---------------------------------------------------------------------------
# summary

def eoc_table(trace):
    """Human readable table of the trace with observed rates in DOFs."""
    recs = list(trace)
    head = (f"{'level':>5} {'ntri':>7} {'dofs_x':>8} {'gamma':>10} "
            f"{'estimator':>12} {'eoc':>6} {'err_ref':>12} {'eoc':>6}")
    lines = [head, "-" * len(head)]

    def rates(name):
        pts = [(r.dofs_x, getattr(r, name)) for r in recs]
        out = [None] * len(recs)
        for i in range(1, len(recs)):
            (n0, v0), (n1, v1) = pts[i - 1], pts[i]
            if v0 and v1 and v0 > 0 and v1 > 0:
                out[i] = eoc([(n0, v0), (n1, v1)])[0]
        return out

    r_est, r_err = rates("estimator"), rates("err_ref")

    def num(v, width, spec):
        return f"{'':>{width}}" if v is None else f"{v:>{width}{spec}}"

    for r, a, b in zip(recs, r_est, r_err):
        lines.append(f"{r.level:>5} {r.ntri:>7} {r.dofs_x:>8} "
                     f"{num(r.gamma_tilde, 10, '.5f')} {num(r.estimator, 12, '.4e')} "
                     f"{num(a, 6, '.3f')} {num(r.err_ref, 12, '.4e')} "
                     f"{num(b, 6, '.3f')}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# runs

def _thread_limit(serial):
    """Context manager capping BLAS/OpenMP threads."""
    limit = 1 if serial else None
    env = os.environ.get("MINRESFEM_THREADS")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"MINRESFEM_THREADS: expected an integer, got {env!r}")
        if cap < 1:
            raise ConfigError("MINRESFEM_THREADS must be positive")
        limit = cap if limit is None else min(limit, cap)
    if limit is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=limit)


def output_path(config, out_dir=None):
    path = Path(config.output)
    return Path(out_dir) / path.name if out_dir is not None else path


def run_experiment(config, out_dir=None, serial=False, stream=None):
    """Run the study, stream rows to the CSV file and print a summary.

    Returns ``(trace, csv_path)``.  Solver failures propagate as
    :class:`~minresfem.adapt.AdaptError`.
    """
    path = output_path(config, out_dir)
    with _thread_limit(serial), CsvSink(path) as sink:
        trace = adaptive_loop(config, on_record=sink)
    if stream is not None:
        print(f"# {config.formulation} p={config.trial_degree} "
              f"test={config.test_enrichment} refinement={config.refinement} "
              f"data={config.data}", file=stream)
        print(eoc_table(trace), file=stream)
        if trace.converged:
            print("# estimator vanished (relative to the zero trial function)",
                  file=stream)
        print(f"# wrote {path}", file=stream)
    return trace, path


def helmholtz_sweep(levels, stream=None):
    """Verify the discrete Helmholtz splitting on ``levels`` successive
    bisect-all meshes for both boundary configurations.  Returns ``ok``."""
    ok = True
    for label, gamma_n in (("Gamma_D = boundary", ()), ("Gamma_N = left", ("left",))):
        mesh = initial_square_mesh(gamma_n)
        for lev in range(levels):
            rep = helmholtz_verify(mesh)
            good = rep.additive and rep.max_cross_inner_product <= HELMHOLTZ_TOL
            ok &= good
            if stream is not None:
                print(f"{label:20s} level {lev:2d} ntri {mesh.ntriangles:6d} "
                      f"div0 {rep.dim_rt_div0:6d} gradCR {rep.dim_grad_cr:6d} "
                      f"DG0^2 {rep.dim_dg2:6d} cross {rep.max_cross_inner_product:.2e} "
                      f"{'ok' if good else 'FAIL'}", file=stream)
            mesh = bisect(mesh, range(mesh.ntriangles))
    return ok


# ---------------------------------------------------------------------------
# entry point

def _parser():
    ap = argparse.ArgumentParser(prog="minresfem", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log each level")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run the configured refinement study"),
                       ("infsup", "inf-sup constants only (no reference solves)")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="key = value configuration file")
        p.add_argument("--serial", action="store_true",
                       help="single-threaded, bit-reproducible run")
        p.add_argument("--out", metavar="DIR", help="directory for the CSV output")
    p = sub.add_parser("helmholtz", help="discrete Helmholtz decomposition sweep")
    p.add_argument("levels", type=int, help="number of meshes")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "helmholtz":
            if args.levels < 1:
                raise ConfigError("levels must be positive")
            return EXIT_OK if helmholtz_sweep(args.levels, sys.stdout) else EXIT_NUMERICAL
        config = load_config(args.config)
        if args.command == "infsup":
            if config.formulation != "ultraweak":
                raise ConfigError("infsup: formulation must be ultraweak")
            config = dataclasses.replace(config, compute_gamma=True,
                                         compute_reference=False)
        run_experiment(config, args.out, args.serial, sys.stdout)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (AdaptError, SolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
