"""Command-line interface.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .harness import (
    ExperimentConfig,
    HarnessError,
    SearchLog,
    export,
    load_schema,
    load_system,
    run_exhaustive,
    run_search,
)
from .objectives import Evaluator
from .schema import (
    TOO_LARGE,
    DesignPoint,
    SchemaError,
    check_constraints,
    constrained_cardinality,
    raw_cardinality,
)
from .workload import WorkloadError, load_model


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # bad usage is invalid input, not a crash
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="stackdse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a schema file")
    p.add_argument("schema")

    p = sub.add_parser("cardinality", help="count design points of a schema")
    p.add_argument("schema")
    p.add_argument("--constrained", action="store_true",
                   help="apply every constraint instead of the headline count")
    p.add_argument("--cap", type=int, default=None,
                   help="report TOO_LARGE when the constrained count exceeds this")

    p = sub.add_parser("simulate", help="evaluate one design point")
    p.add_argument("schema")
    p.add_argument("point", help="JSON file mapping knob names to values")
    p.add_argument("--model", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--objective", default="perf_per_bw",
                   choices=("perf_per_bw", "perf_per_cost"))
    p.add_argument("--phase", default="training")
    p.add_argument("--global-batch", type=int, default=1024)

    p = sub.add_parser("search", help="run an agent search from an experiment file")
    p.add_argument("experiment")
    p.add_argument("--output-dir", default=None)

    p = sub.add_parser("exhaustive", help="enumerate a (small) restricted space")
    p.add_argument("experiment")
    p.add_argument("--output-dir", default=None)

    p = sub.add_parser("export", help="convert a saved search log")
    p.add_argument("log")
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("--output-dir", default=".")
    return parser


def _cmd_validate(args) -> int:
    schema = load_schema(args.schema)
    print(
        f"OK: {len(schema.knobs)} knobs, {len(schema.constraints)} constraints, "
        f"npu_count={schema.npu_count}, {schema.slot_count} action slots"
    )
    return 0


def _cmd_cardinality(args) -> int:
    schema = load_schema(args.schema)
    if args.constrained:
        count = constrained_cardinality(schema, cap=args.cap)
        if count is TOO_LARGE:
            print(f"TOO_LARGE (> {args.cap})")
        else:
            print(f"{count} ({count:.2e})")
    else:
        count = raw_cardinality(schema)
        print(f"{count} ({count:.2e})")
    return 0


def _cmd_simulate(args) -> int:
    schema = load_schema(args.schema)
    system = load_system(args.system)
    model = load_model(args.model)
    point = DesignPoint(json.loads(Path(args.point).read_text()))
    report = check_constraints(schema, point)
    evaluator = Evaluator(
        schema=schema, model=model, compute=system.compute,
        objective=args.objective, phase=args.phase,
        global_batch=args.global_batch, link_latency=system.link_latency,
    )
    evaluation = evaluator.evaluate(point)
    out = {
        "constraints_valid": report.valid,
        "violations": list(report.violations),
        "valid": evaluation.valid,
        "reward": evaluation.reward,
        "latency": evaluation.latency,
        "diagnostics": dict(evaluation.diagnostics),
    }
    print(json.dumps(out, indent=2))
    return 0


def _cmd_search(args) -> int:
    cfg = ExperimentConfig.from_json(args.experiment)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    log = run_search(cfg)
    best = log.best_reward
    print(f"search finished: {len(log.records)} evaluations, best reward {best:.6g}")
    if cfg.output_dir:
        print(f"log written under {cfg.output_dir}")
    return 0


def _cmd_exhaustive(args) -> int:
    cfg = ExperimentConfig.from_json(args.experiment)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    result = run_exhaustive(cfg)
    print(
        f"exhaustive finished: {result.evaluations} points "
        f"({result.valid_evaluations} valid), best reward {result.best_reward:.6g}, "
        f"latency spread {result.latency_spread:.3g}x, "
        f"{len(result.ties)} equivalent optima"
    )
    return 0


def _cmd_export(args) -> int:
    log = SearchLog.load(args.log)
    written = export(log, args.output_dir, fmt=args.format)
    for path in written:
        print(path)
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "cardinality": _cmd_cardinality,
    "simulate": _cmd_simulate,
    "search": _cmd_search,
    "exhaustive": _cmd_exhaustive,
    "export": _cmd_export,
}

_INPUT_ERRORS = (
    SchemaError, WorkloadError, HarnessError, FileNotFoundError,
    json.JSONDecodeError, KeyError, ValueError,
)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
