"""Command-line entry point: ``kingmix <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 failed criteria (``experiment --assert``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import experiments as ex
from .errors import ConfigError, NumericalError
from .limit import sample_limit_path
from .measure import load_measure
from .rates import RateFunctional
from .sim import Backend, SimConfig, simulate, stream_rng
from .speed import SpeedFunction, Variant

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CRITERIA = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _fmt(x) -> str:
    return f"{x:.17g}"


def _emit(text: str, output):
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _values(args, name):
    vals = getattr(args, name)
    return [float(v) for v in vals]


def cmd_psi(args):
    rf = RateFunctional(load_measure(args.measure))
    qs = _values(args, "q")
    kind = {"psi": rf.psi, "psi1": rf.psi1, "psi_star": rf.psi_star}[args.kind]
    vals = [kind(q) for q in qs]
    if args.format == "json":
        return json.dumps({"seed": args.seed, "kind": args.kind, "q": qs, "values": vals}) + "\n"
    if len(qs) == 1 and args.output in (None, "-"):
        return repr(vals[0]) + "\n"
    return _csv(["q", args.kind], [(_fmt(q), _fmt(v)) for q, v in zip(qs, vals)])


def cmd_speed(args):
    sf = SpeedFunction(RateFunctional(load_measure(args.measure)), Variant(args.variant))
    ts = _values(args, "t")
    vals = [sf(t) for t in ts]
    if args.format == "json":
        return json.dumps({"seed": args.seed, "variant": args.variant, "t": ts, "values": vals}) + "\n"
    if len(ts) == 1 and args.output in (None, "-"):
        return repr(vals[0]) + "\n"
    return _csv(["t", args.variant], [(_fmt(t), _fmt(v)) for t, v in zip(ts, vals)])


def cmd_simulate(args):
    measure = load_measure(args.measure)
    cfg = SimConfig(measure, args.n0, args.t_end, Backend(args.backend), (args.seed, args.stream))
    path = simulate(cfg)
    if args.format == "json":
        return json.dumps(
            {"seed": args.seed, "stream_index": args.stream, "initial_n": path.initial_n,
             "t_start": path.t_start, "times": path.times.tolist(),
             "counts": path.counts.tolist()}
        ) + "\n"
    if args.output not in (None, "-"):
        path.to_csv(args.output)
        return None
    rows = [(_fmt(path.t_start), path.initial_n)] + [(_fmt(t), n) for t, n in path.events]
    return _csv(["time", "count"], rows)


def cmd_limit(args):
    grid = _values(args, "grid")
    lp = sample_limit_path(grid, args.scale_c, stream_rng(args.seed, 0), size=args.paths)
    if args.format == "json":
        return json.dumps({"seed": args.seed, "grid": grid, "values": lp.values.tolist()}) + "\n"
    rows = [
        (i, _fmt(t), _fmt(x)) for i, row in enumerate(lp.values) for t, x in zip(grid, row)
    ]
    return _csv(["path", "t", "value"], rows)


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def cmd_experiment(args):
    report = ex.run_config(_load_config(args.config), args.seed, args.threads)
    text = report.to_json() + "\n" if args.format == "json" else report.to_text() + "\n"
    args._failed = not report.passed
    return text


def cmd_oracle_check(args):
    measure = load_measure(args.measure)
    report = ex.run_oracle_equivalence(
        measure, args.n, _values(args, "t"), args.replicates, args.seed
    )
    args._failed = not report.passed
    return report.to_json() + "\n" if args.format == "json" else report.to_text() + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kingmix", description="Block-counting fluctuations of Lambda-coalescents.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, measure=True, formats=("csv", "json")):
        if measure:
            sp.add_argument("--measure", required=True, help="measure JSON file")
        sp.add_argument("--output", "-o", default=None)
        sp.add_argument("--format", choices=formats, default=formats[0])
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("psi", help="evaluate Psi, Psi_1 or Psi*")
    common(sp)
    sp.add_argument("--q", nargs="+", required=True)
    sp.add_argument("--kind", choices=("psi", "psi1", "psi_star"), default="psi")
    sp.set_defaults(func=cmd_psi)

    sp = sub.add_parser("speed", help="solve for the speed v_t")
    common(sp)
    sp.add_argument("--t", nargs="+", required=True)
    sp.add_argument("--variant", choices=[v.value for v in Variant], default="v")
    sp.set_defaults(func=cmd_speed)

    sp = sub.add_parser("simulate", help="simulate one block-count path")
    common(sp)
    sp.add_argument("--n0", type=int, required=True)
    sp.add_argument("--t-end", type=float, required=True)
    sp.add_argument("--backend", choices=[b.value for b in Backend], default="chain")
    sp.add_argument("--stream", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("limit", help="sample the limit process on a grid")
    common(sp, measure=False)
    sp.add_argument("--grid", nargs="+", required=True)
    sp.add_argument("--scale-c", type=float, default=1.0)
    sp.add_argument("--paths", type=int, default=1)
    sp.set_defaults(func=cmd_limit)

    sp = sub.add_parser("experiment", help="run an experiment config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--output", "-o", default=None)
    sp.add_argument("--format", choices=("text", "json"), default="text")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--assert", dest="assert_", action="store_true",
                    help="exit with code 3 if any criterion fails")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("oracle-check", help="compare simulation backends")
    common(sp, formats=("text", "json"))
    sp.add_argument("--n", type=int, default=6)
    sp.add_argument("--t", nargs="+", default=["0.5"])
    sp.add_argument("--replicates", type=int, default=100_000)
    sp.set_defaults(func=cmd_oracle_check, assert_=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args._failed = False
        text = args.func(args)
        if text is not None:
            _emit(text, args.output)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if getattr(args, "assert_", False) and args._failed:
        return EXIT_CRITERIA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
