"""Validate, inspect, run and benchmark SOP documents from the shell.

Exit codes: 0 success, 1 domain failure (invalid SOP or case, failed run,
divergence), 2 usage, I/O or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import (
    CaseError,
    CaseSpec,
    format_report,
    load_case_file,
    oracle_factory,
    refinement_check,
    report_records,
    run_benchmark,
    sample_environment,
    scripted_factory,
    with_faults,
)
from .deciders import Environment, OracleDecider, ScriptedDecider, load_environment
from .engine import RunLimits, dump_trace, run, trace_records
from .graph import STAT_ROWS, GraphBuildError, build_graph, compute_stats
from .llm import TOKEN_ENV, LLMConfig, LLMDecider
from .sop_format import SopSyntaxError, parse_sop, validate

OK, FAIL, USAGE = 0, 1, 2


class _ConfigError(Exception):
    pass


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None


def _load_sop(path: str):
    """Parse and validate; returns (doc, diagnostics) or raises SopSyntaxError."""
    doc = parse_sop(_read(path), path)
    return doc, validate(doc)


def _decider_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--decider", choices=("scripted", "oracle", "llm"), default="oracle")
    p.add_argument("--script", help="JSON list of plan entries for the scripted decider")
    p.add_argument("--llm-endpoint", help="chat-completions URL (or $SOP_AGENT_ENDPOINT)")
    p.add_argument("--llm-model", help="model name (or $SOP_AGENT_MODEL)")
    p.add_argument("--llm-temperature", type=float, default=0.0)
    p.add_argument("--llm-timeout", type=float, default=60.0)
    p.add_argument("--fault-seed", type=_nonneg, action="append", default=[],
                   help="take one wrong branch on runs with this seed (repeatable)")


def _llm_config(args) -> LLMConfig:
    try:
        return LLMConfig.from_env(
            endpoint=args.llm_endpoint,
            model=args.llm_model,
            temperature=args.llm_temperature,
            timeout=args.llm_timeout,
        )
    except ValueError as exc:
        raise _ConfigError(f"{exc} (token is read from ${TOKEN_ENV})") from None


def _plan(args) -> list:
    if not args.script:
        return []
    try:
        plan = json.loads(_read(args.script))
    except json.JSONDecodeError as exc:
        raise _ConfigError(f"{args.script}: {exc}") from None
    if not isinstance(plan, list):
        raise _ConfigError(f"{args.script}: expected a JSON list")
    return plan


def _factory(args):
    if args.decider == "oracle":
        factory = oracle_factory
    elif args.decider == "scripted":
        factory = scripted_factory(_plan(args))
    else:
        shared = LLMDecider(_llm_config(args))

        def factory(graph, env, seed):
            return shared

    return with_faults(factory, args.fault_seed) if args.fault_seed else factory


def _load_cases(paths: list[str]) -> list[CaseSpec]:
    files: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            files.extend(sorted(path.glob("*.case")))
        elif path.exists():
            files.append(path)
        else:
            raise _ConfigError(f"cannot read {p}: no such file or directory")
    if not files:
        raise _ConfigError("no case files given")
    return [load_case_file(f) for f in files]


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise _ConfigError(f"cannot write {path}: {exc.strerror or exc}") from None


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        _, diags = _load_sop(args.sop)
    except SopSyntaxError as exc:
        print(f"error: {exc}")
        return FAIL
    for d in diags:
        print(d)
    errors = [d for d in diags if d.severity == "error"]
    if not errors:
        print(f"{args.sop}: ok")
    return FAIL if errors else OK


def _stats_table(title: str, stats) -> list[str]:
    lines = [title]
    for row, attr in STAT_ROWS:
        value = getattr(stats, attr)
        shown = f"{value:.2f}" if isinstance(value, float) else str(value)
        lines.append(f"  {row}: {shown}")
    return lines


def cmd_stats(args) -> int:
    target = Path(args.sop)
    files = sorted(target.glob("*.sop")) if target.is_dir() else [target]
    if target.is_dir() and not files:
        raise _ConfigError(f"no .sop files in {target}")
    collected = []
    failed = False
    for f in files:
        try:
            doc, diags = _load_sop(str(f))
        except SopSyntaxError as exc:
            print(f"error: {exc}")
            failed = True
            continue
        errors = [d for d in diags if d.severity == "error"]
        if errors:
            for d in errors:
                print(f"{f}: {d}")
            failed = True
            continue
        stats = compute_stats(build_graph(doc))
        collected.append(stats)
        print("\n".join(_stats_table(str(f), stats)))
    if len(files) > 1 and collected:
        print(f"Averages over {len(collected)} SOPs")
        for row, attr in STAT_ROWS:
            mean = sum(getattr(s, attr) for s in collected) / len(collected)
            print(f"  {row}: {mean:.2f}")
    return FAIL if failed else OK


def cmd_run(args) -> int:
    case = None
    if args.case:
        try:
            case = load_case_file(args.case)
        except CaseError as exc:
            print(f"error: {exc}")
            return FAIL
        graph = case.graph
    elif args.sop:
        try:
            doc, diags = _load_sop(args.sop)
        except SopSyntaxError as exc:
            print(f"error: {exc}")
            return FAIL
        errors = [d for d in diags if d.severity == "error"]
        if errors:
            for d in errors:
                print(d)
            return FAIL
        graph = build_graph(doc)
    else:
        raise _ConfigError("run needs --sop or --case")

    if args.env:
        try:
            env = load_environment(args.env)
        except OSError as exc:
            raise _ConfigError(f"cannot read {args.env}: {exc.strerror or exc}") from None
        except ValueError as exc:
            raise _ConfigError(str(exc)) from None
    elif case is not None:
        env = sample_environment(case, args.seed)
    else:
        env = Environment()

    if args.decider == "llm":
        decider = LLMDecider(_llm_config(args))
    elif args.decider == "scripted":
        decider = ScriptedDecider(_plan(args), seed=args.seed)
    else:
        decider = OracleDecider(graph, env)
    if args.fault_seed:
        decider = with_faults(lambda g, e, s: decider, args.fault_seed)(graph, env, args.seed)

    result = run(graph, decider, env.executor(), RunLimits(step_limit=args.step_limit, seed=args.seed))
    if args.out:
        _write(Path(args.out), dump_trace(result.trace))
    print("trajectory: " + json.dumps(list(result.trajectory.calls)))
    print(f"queries: {result.query_count}")
    print(f"terminal: {result.terminal}")
    return OK if result.terminal.completed else FAIL


def cmd_bench(args) -> int:
    if args.runs < 1:
        print("error: --runs must be at least 1")
        return FAIL
    try:
        cases = _load_cases(args.case)
    except CaseError as exc:
        print(f"error: {exc}")
        return FAIL
    report = run_benchmark(
        cases,
        _factory(args),
        runs_per_case=args.runs,
        seed=args.seed,
        limits=RunLimits(step_limit=args.step_limit),
        parallel=args.parallel,
    )
    table = format_report(report)
    print(table, end="")
    if args.out:
        out = Path(args.out)
        _write(out / "report.jsonl", report_records(report))
        _write(out / "report.txt", table)
        lines = []
        for rec in report.records:
            lines.extend(trace_records(rec.result.trace, case=rec.case, seed=rec.seed))
        _write(out / "traces.jsonl", "\n".join(lines) + "\n")
    return OK


def cmd_refine_check(args) -> int:
    try:
        (case,) = _load_cases([args.case])
    except (CaseError, ValueError) as exc:
        print(f"error: {exc}")
        return USAGE
    report = refinement_check(
        case, _factory(args), n_runs=args.runs, seed=args.seed, limits=RunLimits(step_limit=args.step_limit)
    )
    if not report.needs_refinement:
        print(f"{case.name}: all {report.runs} trials match the ground truth")
        return OK
    print(f"{case.name}: {len(report.divergent)} of {report.runs} trials diverge; refine the SOP")
    for d in report.divergent:
        print(
            f"  seed {d.seed}: predicted {json.dumps(list(d.predicted.calls))} "
            f"truth {json.dumps(list(d.truth.calls))} ({d.terminal})"
        )
    return FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sop-agent", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an SOP file")
    p.add_argument("--sop", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="decision-graph statistics of an SOP file or directory")
    p.add_argument("--sop", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("run", help="execute an SOP once")
    p.add_argument("--sop")
    p.add_argument("--case", help="benchmark case; its environment is sampled from --seed")
    p.add_argument("--env", help="JSON-lines environment file")
    p.add_argument("--seed", type=_nonneg, default=0)
    p.add_argument("--step-limit", type=_nonneg, default=50)
    p.add_argument("--out", help="write the trace here")
    _decider_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run benchmark cases and report path/leaf accuracy")
    p.add_argument("--case", action="append", required=True, help="case file or directory (repeatable)")
    p.add_argument("--runs", type=_nonneg, default=100)
    p.add_argument("--seed", type=_nonneg, default=0)
    p.add_argument("--step-limit", type=_nonneg, default=50)
    p.add_argument("--parallel", type=_nonneg, default=1)
    p.add_argument("--out", help="directory for report.jsonl, report.txt and traces.jsonl")
    _decider_options(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("refine-check", help="seeded trials that flag an SOP needing refinement")
    p.add_argument("--case", required=True)
    p.add_argument("--runs", type=_nonneg, default=20)
    p.add_argument("--seed", type=_nonneg, default=0)
    p.add_argument("--step-limit", type=_nonneg, default=50)
    _decider_options(p)
    p.set_defaults(func=cmd_refine_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "step_limit", 1) < 1:
        print("error: --step-limit must be at least 1")
        return USAGE
    try:
        return args.func(args)
    except _ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except GraphBuildError as exc:
        print(f"error: {exc}")
        return FAIL


if __name__ == "__main__":
    sys.exit(main())
