"""Command-line entry point: ``reorgheat <command> [--config PATH] [--out DIR]``.

Exit codes: 0 success, 2 validation error, 3 regression failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from . import experiments, golden
from .config import defaults, load_config
from .errors import RegressionError, ReorgHeatError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_REGRESSION = 0, 2, 3
log = logging.getLogger("reorgheat")


def format_value(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.17g}"
    return str(v)


def rows_to_csv(rows, columns=None) -> str:
    """Header plus rows; columns in first-seen order unless given."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_outputs(out_dir: Path, stem: str, rows, extra=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    payload = {"rows": rows}
    if extra is not None:
        payload["summary"] = extra
    (out_dir / f"{stem}.json").write_text(
        json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_dir / f"{stem}.csv"


def build_parser():
    p = argparse.ArgumentParser(prog="reorgheat",
                                description="Heat currents from reorganised and conventional "
                                            "master equations, with exact benchmarks.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [("dynamics", "time series of observables"),
                           ("currents", "steady-state currents at one temperature pair"),
                           ("sweep", "currents over a temperature grid or line"),
                           ("heom-convergence", "HEOM convergence record")]:
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", type=Path, help="INI configuration file")
        s.add_argument("--out", type=Path, default=Path("."), help="output directory")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    r = sub.add_parser("regression", help="recompute golden values")
    r.add_argument("--golden", type=Path, default=None, help="golden JSON (default: packaged)")
    r.add_argument("--out", type=Path, default=None, help="optional report directory")
    r.add_argument("--only", action="append", default=None, help="restrict to named entries")
    r.add_argument("--jobs", type=int, default=1)
    return p


def _load(args):
    return load_config(args.config) if args.config else defaults()


def _stem(cfg, command):
    return f"{cfg['run']['label']}_{command.replace('-', '_')}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "regression":
            data = golden.load_golden(args.golden)
            items = golden.run_regression(data, only=args.only)
            rows = [vars(i) for i in items]
            for i in items:
                print(f"{'PASS' if i.passed else 'FAIL'} {i.name}: expected {i.expected:.12g} "
                      f"computed {i.computed:.12g} drift {i.drift:.3e} "
                      f"({i.tolerance_kind} tol {i.tolerance:.1e})")
            if args.out is not None:
                write_outputs(args.out, "regression", rows)
            failed = [i.name for i in items if not i.passed]
            if failed:
                print("regression failed: " + ", ".join(failed), file=sys.stderr)
                return EXIT_REGRESSION
            return EXIT_OK
        if args.jobs < 1:
            raise ValidationError("--jobs must be at least 1")
        cfg = _load(args)
        extra = None
        if args.command == "dynamics":
            rows = experiments.run_dynamics(cfg)
        elif args.command == "currents":
            t = cfg["temperatures"]
            if abs(t["t1"] - t["t2"]) < 1e-12:
                log.info("equal temperatures: currents vanish")
            rows = experiments.current_point(cfg, t["t1"], t["t2"])
        elif args.command == "sweep":
            rows = experiments.run_current_sweep(cfg, jobs=args.jobs)
        else:
            rows, extra = experiments.heom_convergence(cfg)
        path = write_outputs(args.out, _stem(cfg, args.command), rows, extra)
        print(path)
        return EXIT_OK
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RegressionError as exc:
        print(f"regression error: {exc}", file=sys.stderr)
        return EXIT_REGRESSION
    except ReorgHeatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
