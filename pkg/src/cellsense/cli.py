"""Command-line front end: simulate, build, locate, evaluate and sweep.

Exit codes: 0 on success, 1 on usage errors, 2 on data or format errors.
Machine output goes to stdout or files; messages go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from typing import Sequence

from .errors import CellSenseError, InvalidInputError
from .estimators import (
    ALL,
    EstimatorParams,
    Method,
    cellid_locate,
    cellsense_locate,
    knn_locate,
    parse_k,
)
from .evaluation import (
    DEFAULT_KNN_K,
    compare_all,
    sweep_grid,
    sweep_k,
    sweep_n,
    windows,
    write_reports,
)
from .fingerprint import (
    DEFAULT_ALPHA,
    DEFAULT_CELL_LENGTH_M,
    build_deterministic_fingerprint,
    build_fingerprint,
    build_tower_db,
    load_fingerprint,
    save_fingerprint,
)
from .gp import GpLocator, fit_tower_models
from .simworld import PRESETS, make_dataset, parse_world_spec, preset
from .trace_io import ParseReport, Trace, read_trace, write_trace

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default, which is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _k_arg(text: str):
    try:
        return parse_k(text)
    except InvalidInputError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0 or v != v or v == float("inf"):
        raise argparse.ArgumentTypeError(f"expected a positive finite number, got {text}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cellsense", description="Probabilistic RSSI fingerprint localization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="synthesize a war-driving trace")
    s.add_argument("--preset", choices=sorted(PRESETS), default="urban")
    s.add_argument("--out", required=True, help="training trace CSV")
    s.add_argument("--test-out", help="also write an independent test drive here")
    s.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    s.add_argument("--route-len-m", type=_positive_float, default=22_000.0)
    s.add_argument("--test-len-m", type=_positive_float, default=6_000.0)
    s.add_argument("--world-config", help="key=value file overriding the preset")

    b = sub.add_parser("build", help="build a probabilistic fingerprint")
    b.add_argument("--trace", required=True)
    b.add_argument("--cell-length", type=_positive_float, default=DEFAULT_CELL_LENGTH_M)
    b.add_argument("--alpha", type=_positive_float, default=DEFAULT_ALPHA)
    b.add_argument("--out", required=True)

    loc = sub.add_parser("locate", help="estimate positions for a trace of scans")
    loc.add_argument("--fp", help="fingerprint file (cellsense)")
    loc.add_argument("--train", help="training trace (knn, cellid, gp)")
    loc.add_argument("--scan", required=True)
    loc.add_argument("--k", type=_k_arg, default=ALL)
    loc.add_argument("--n", type=_positive_int, default=1)
    loc.add_argument("--method", choices=[m.value for m in Method], default="cellsense")
    loc.add_argument("--knn-k", type=_positive_int, default=DEFAULT_KNN_K)
    loc.add_argument("--seed", type=_seed, default=DEFAULT_SEED)

    e = sub.add_parser("evaluate", help="compare methods on a test trace")
    e.add_argument("--train", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--methods", default="all",
                   help="'all' or a comma-separated subset of " +
                        ",".join(m.value for m in Method))
    e.add_argument("--out", required=True)
    e.add_argument("--k", type=_k_arg, default=ALL)
    e.add_argument("--n", type=_positive_int, default=1)
    e.add_argument("--cell-length", type=_positive_float, default=DEFAULT_CELL_LENGTH_M)
    e.add_argument("--alpha", type=_positive_float, default=DEFAULT_ALPHA)
    e.add_argument("--knn-k", type=_positive_int, default=DEFAULT_KNN_K)
    e.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    e.add_argument("--no-runtime", action="store_true",
                   help="leave the runtime column empty so the report is byte-reproducible")

    w = sub.add_parser("sweep", help="median error as one parameter varies")
    w.add_argument("--train", required=True)
    w.add_argument("--test", required=True)
    w.add_argument("--param", choices=("k", "n", "grid"), required=True)
    w.add_argument("--values", nargs="+", required=True)
    w.add_argument("--cell-length", type=_positive_float, default=DEFAULT_CELL_LENGTH_M)
    w.add_argument("--alpha", type=_positive_float, default=DEFAULT_ALPHA)
    w.add_argument("--out", help="write CSV here instead of stdout")
    return p


# -- helpers ----------------------------------------------------------------------------

def _check_input(path: str) -> None:
    if not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")


def _check_output(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"output directory does not exist: {parent}")


def _load_training(path: str) -> Trace:
    """Read a trace that must carry ground truth on every scan."""
    trace, report = read_trace(path)
    _require_truth_rows(trace, report, path)
    if len(trace) == 0:
        raise InvalidInputError(f"{path}: trace has no scans")
    return trace


def _require_truth_rows(trace: Trace, report: ParseReport, path: str) -> None:
    for scan in trace.scans:
        if scan.truth is None:
            line = report.scan_lines.get(scan.scan_id)
            raise InvalidInputError(
                f"{path}: line {line}: scan {scan.scan_id} has no lat/lon ground truth")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def _parse_methods(text: str) -> list[Method]:
    if text.strip().lower() == "all":
        return [Method.CELLID, Method.KNN, Method.GP, Method.CELLSENSE]
    out = []
    for part in text.split(","):
        try:
            out.append(Method(part.strip().lower()))
        except ValueError:
            raise UsageError(f"unknown method {part!r}") from None
    return out


# -- subcommands ------------------------------------------------------------------------

def _cmd_simulate(args, stdout) -> None:
    _check_output(args.out)
    if args.test_out:
        _check_output(args.test_out)
    spec = preset(args.preset, args.seed)
    if args.world_config:
        _check_input(args.world_config)
        with open(args.world_config, encoding="utf-8") as fh:
            spec = parse_world_spec(fh, spec)
    data = make_dataset(spec, args.route_len_m, args.test_len_m)
    _write_text(args.out, write_trace(data.train, io.StringIO()).getvalue())
    if args.test_out:
        _write_text(args.test_out, write_trace(data.test, io.StringIO()).getvalue())


def _cmd_build(args, stdout) -> None:
    _check_input(args.trace)
    _check_output(args.out)
    trace = _load_training(args.trace)
    fp = build_fingerprint(trace, args.cell_length, args.alpha)
    buf = io.StringIO()
    save_fingerprint(fp, buf)
    _write_text(args.out, buf.getvalue())


def _cmd_locate(args, stdout) -> None:
    method = Method(args.method)
    _check_input(args.scan)
    if method is Method.CELLSENSE:
        if not args.fp:
            raise UsageError("locate --method cellsense needs --fp")
        _check_input(args.fp)
    else:
        if not args.train:
            raise UsageError(f"locate --method {method.value} needs --train")
        _check_input(args.train)
        if args.n != 1:
            raise UsageError(f"--n applies to cellsense only; {method.value} uses one scan")

    scans, _ = read_trace(args.scan)
    if method is Method.CELLSENSE:
        with open(args.fp, newline="", encoding="utf-8") as fh:
            fp = load_fingerprint(fh)
        params = EstimatorParams(k=args.k, n_samples=args.n)
        fn = lambda w: cellsense_locate(fp, w, params)
    else:
        train = _load_training(args.train)
        if method is Method.KNN:
            dfp = build_deterministic_fingerprint(train)
            fn = lambda w: knn_locate(dfp, w[-1], args.knn_k)
        elif method is Method.CELLID:
            db = build_tower_db(train)
            fn = lambda w: cellid_locate(db, w[-1])
        else:
            fp = build_fingerprint(train)
            models = fit_tower_models(train, fp.grid.origin, seed=args.seed)
            locator = GpLocator(models, [(i, fp.cells[i].rep_location) for i in fp.cell_order],
                                fp.grid.origin)
            fn = lambda w: locator.locate(w[-1], args.k)

    out = csv.writer(stdout, lineterminator="\n")
    out.writerow(("scan_id", "lat", "lon", "method"))
    for w in windows(scans, args.n):
        try:
            est = fn(w)
        except CellSenseError as exc:
            if not isinstance(exc, InvalidInputError):
                out.writerow((w[-1].scan_id, "", "", method.value))
                continue
            raise
        out.writerow((w[-1].scan_id, f"{est.geo.lat:.7f}", f"{est.geo.lon:.7f}", method.value))


def _cmd_evaluate(args, stdout) -> None:
    _check_input(args.train)
    _check_input(args.test)
    _check_output(args.out)
    methods = _parse_methods(args.methods)
    train = _load_training(args.train)
    test = _load_training(args.test)
    params = EstimatorParams(k=args.k, n_samples=args.n)
    comp = compare_all(train, test, params, cell_length_m=args.cell_length, alpha=args.alpha,
                       knn_k=args.knn_k, methods=methods, seed=args.seed)
    buf = io.StringIO()
    write_reports(comp.reports, buf, comp.degradation_pct or None,
                  include_runtime=not args.no_runtime)
    _write_text(args.out, buf.getvalue())


def _cmd_sweep(args, stdout) -> None:
    _check_input(args.train)
    _check_input(args.test)
    if args.out:
        _check_output(args.out)
    try:
        if args.param == "k":
            values = [parse_k(v) for v in args.values]
        elif args.param == "n":
            values = [int(v) for v in args.values]
            if any(v < 1 for v in values):
                raise ValueError("n must be positive")
        else:
            values = [float(v) for v in args.values]
            if any(not v > 0 for v in values):
                raise ValueError("cell length must be positive")
    except ValueError as exc:
        raise UsageError(f"bad --values: {exc}") from None

    train = _load_training(args.train)
    test = _load_training(args.test)
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    if args.param == "grid":
        out.writerow(("cell_length", "median_m", "n_cells"))
        for length, med, n_cells in sweep_grid(train, test, values, args.alpha):
            out.writerow((f"{length:g}", f"{med:.3f}", n_cells))
    else:
        fp = build_fingerprint(train, args.cell_length, args.alpha)
        rows = sweep_k(fp, test, values) if args.param == "k" else sweep_n(fp, test, values)
        out.writerow((args.param, "median_m"))
        for v, med in rows:
            out.writerow((v, f"{med:.3f}"))
    if args.out:
        _write_text(args.out, buf.getvalue())
    else:
        stdout.write(buf.getvalue())


_COMMANDS = {
    "simulate": _cmd_simulate,
    "build": _cmd_build,
    "locate": _cmd_locate,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
}


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = build_parser().parse_args(argv)
        _COMMANDS[args.command](args, stdout)
    except BrokenPipeError:
        # the reader closed the pipe early (e.g. piped into head); silence the flush at exit
        if stdout is sys.stdout:
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except (CellSenseError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    code = run()
    try:
        sys.stdout.flush()
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    sys.exit(code)


if __name__ == "__main__":
    main()
