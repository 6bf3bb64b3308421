"""Simulated customer-service benchmark: cases, sampling, ground truth, scoring."""

from __future__ import annotations

import json
import re
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .deciders import AmbiguousBranch, Environment, OracleDecider, ScriptedDecider, compare, eval_condition
from .engine import RunLimits, RunResult, Terminal, Trajectory, run
from .graph import DecisionGraph, build_graph, successors
from .protocol import (
    BranchMode,
    Decider,
    DeciderRequest,
    DeciderResponse,
    MissingObservation,
    Observation,
    ToolCall,
    TypeMismatch,
)
from .sop_format import (
    Boolean,
    Categorical,
    Freeform,
    Numerical,
    OutputSchema,
    SopDocument,
    SopSyntaxError,
    Structured,
    Textual,
    iter_nodes,
    parse_sop,
    validate,
)

__all__ = [
    "CaseError",
    "LoopNotAllowed",
    "ParameterizedTool",
    "MissingSchema",
    "CaseSpec",
    "parse_output_schema",
    "load_case",
    "load_case_file",
    "sample_environment",
    "sample_uniform_queue",
    "ground_truth_trajectory",
    "RunScore",
    "score_run",
    "RunRecord",
    "CaseReport",
    "BenchReport",
    "run_benchmark",
    "Divergence",
    "RefineReport",
    "refinement_check",
    "DeciderFactory",
    "oracle_factory",
    "scripted_factory",
    "FaultyDecider",
    "with_faults",
    "report_records",
    "format_report",
    "DEFAULT_NUMERIC_RANGE",
]

DEFAULT_NUMERIC_RANGE = (0.0, 100.0)


class CaseError(ValueError):
    pass


class LoopNotAllowed(CaseError):
    pass


class ParameterizedTool(CaseError):
    pass


class MissingSchema(CaseError):
    pass


# --------------------------------------------------------------------------
# Case files
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CaseSpec:
    name: str
    sop: SopDocument
    tool_outputs: Mapping[str, OutputSchema]
    graph: DecisionGraph = field(compare=False, repr=False)


def parse_output_schema(spec: Mapping, variable: str | None = None) -> OutputSchema:
    if not isinstance(spec, Mapping) or "type" not in spec:
        raise CaseError(f"output schema needs a 'type': {spec!r}")
    kind = spec["type"]
    var = spec.get("variable", variable) or "result"
    if kind == "categorical":
        candidates = spec.get("candidates")
        if not candidates or not isinstance(candidates, list):
            raise CaseError("categorical schema needs a non-empty 'candidates' list")
        return Categorical(tuple(candidates), var)
    if kind == "boolean":
        return Boolean(var)
    if kind == "numerical":
        rng = spec.get("range")
        if rng is not None:
            if len(rng) != 2 or rng[0] > rng[1]:
                raise CaseError(f"numerical range must be [low, high], got {rng!r}")
            rng = (float(rng[0]), float(rng[1]))
        return Numerical(rng, var)
    if kind == "freeform":
        return Freeform(var)
    raise CaseError(f"unknown output type {kind!r}")


_SECTION = re.compile(r"^(case|sop|tool_outputs):\s*(.*)$")


def load_case(text: str, name: str | None = None) -> CaseSpec:
    """Parse and cross-check a case document.

    The document has three top-level sections::

        case: <name>
        sop:
            <SOP text>
        tool_outputs:
            <tool>: {"type": "categorical", "variable": "...", "candidates": [...]}
    """
    sections: dict[str, list[str]] = {}
    header_value: dict[str, str] = {}
    current = None
    offsets: dict[str, int] = {}
    for number, line in enumerate(text.splitlines(), 1):
        m = _SECTION.match(line)
        if m:
            current = m.group(1)
            if current in sections:
                raise CaseError(f"line {number}: duplicate section {current!r}")
            sections[current] = []
            header_value[current] = m.group(2).strip()
            offsets[current] = number
            continue
        if current is None:
            if line.strip() and not line.lstrip().startswith("#"):
                raise CaseError(f"line {number}: content before the first section")
            continue
        sections[current].append(line)

    if "sop" not in sections:
        raise CaseError("case has no 'sop' section")
    case_name = header_value.get("case") or name or "case"
    # keep source line numbers meaningful in syntax errors
    sop_text = "\n" * offsets["sop"] + "\n".join(sections["sop"])
    try:
        doc = parse_sop(sop_text, case_name)
    except SopSyntaxError as exc:
        raise CaseError(str(exc)) from None
    errors = [d for d in validate(doc) if d.severity == "error"]
    if errors:
        raise CaseError("; ".join(str(d) for d in errors))

    for path, node in iter_nodes(doc):
        if node.goto_labels:
            raise LoopNotAllowed(f"node {'.'.join(map(str, path))} has goto {list(node.goto_labels)}")
        if node.tool is not None and node.tool.params:
            raise ParameterizedTool(f"tool {node.tool.name!r} declares parameters")
        if isinstance(node.condition, Textual):
            raise CaseError(f"node {'.'.join(map(str, path))} has a textual condition; cases need structured ones")

    referenced: dict[str, set[str]] = {}
    for _, node in iter_nodes(doc):
        if isinstance(node.condition, Structured):
            referenced.setdefault(node.condition.api, set()).add(node.condition.variable)

    raw: dict[str, Mapping] = {}
    for offset, line in enumerate(sections.get("tool_outputs", []), offsets.get("tool_outputs", 0) + 1):
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        tool, sep, value = body.partition(":")
        try:
            raw[tool.strip()] = json.loads(value)
        except json.JSONDecodeError as exc:
            raise CaseError(f"line {offset}: malformed schema for {tool.strip()!r}: {exc.msg}") from None
        if not sep:
            raise CaseError(f"line {offset}: expected '<tool>: {{schema}}'")

    schemas: dict[str, OutputSchema] = {}
    for tool, spec in raw.items():
        variables = referenced.get(tool, set())
        if len(variables) > 1:
            raise CaseError(f"conditions read several variables of {tool!r}: {sorted(variables)}")
        inferred = next(iter(variables), None)
        schema = parse_output_schema(spec, inferred)
        if inferred is not None and schema.variable != inferred:
            raise CaseError(f"schema variable {schema.variable!r} of {tool!r} differs from conditions ({inferred!r})")
        schemas[tool] = schema

    missing = sorted(set(referenced) - set(schemas))
    if missing:
        raise MissingSchema(f"no output schema for condition tools {missing}")
    graph = build_graph(doc)
    return CaseSpec(case_name, doc, dict(sorted(schemas.items())), graph)


def load_case_file(path: str | Path) -> CaseSpec:
    path = Path(path)
    return load_case(path.read_text(encoding="utf-8"), path.stem)


# --------------------------------------------------------------------------
# Leaf-weighted environment sampling
# --------------------------------------------------------------------------


def _holds(cond: Structured, value) -> bool:
    try:
        return compare(value, cond.comparator, cond.value)
    except TypeMismatch:
        return False


def _uniform_value(schema: OutputSchema, rng: np.random.Generator):
    if isinstance(schema, Categorical):
        return schema.candidates[int(rng.integers(len(schema.candidates)))]
    if isinstance(schema, Boolean):
        return bool(rng.random() < 0.5)
    if isinstance(schema, Numerical):
        lo, hi = schema.range or DEFAULT_NUMERIC_RANGE
        return float(rng.uniform(lo, hi))
    return "ok"


def sample_uniform_queue(schema: OutputSchema, seed: int, count: int = 1) -> list[Observation]:
    rng = np.random.default_rng(seed)
    return [{schema.variable: _uniform_value(schema, rng)} for _ in range(count)]


def _numeric_range(schema: Numerical, thresholds: list[float]) -> tuple[float, float]:
    if schema.range is not None:
        return schema.range
    if not thresholds:
        return DEFAULT_NUMERIC_RANGE
    delta = max(1.0, max(abs(t) for t in thresholds))
    return min(thresholds) - delta, max(thresholds) + delta


def _numeric_in(cond: Structured, lo: float, hi: float, rng: np.random.Generator):
    """Uniform draw from the part of [lo, hi] where ``cond`` holds, or None if empty."""
    v = float(cond.value)
    op = cond.comparator
    if op == "is":
        return cond.value if lo <= v <= hi else None
    if op == "is_not":
        x = float(rng.uniform(lo, hi))
        return x if x != v else None
    if op in ("gt", "ge"):
        a, b = max(lo, v), hi
    else:
        a, b = lo, min(hi, v)
    if a > b or (a == b and op in ("gt", "lt")):
        return None
    x = float(rng.uniform(a, b))
    if not _holds(cond, x):  # open end hit exactly
        x = float(np.nextafter(v, b if op == "gt" else a))
    return x


def _draw(schema: OutputSchema, guarded: list, leaves: list[int], rng: np.random.Generator, where: str):
    """Value for one call, weighting each guarded branch by its leaf count."""
    if not guarded:
        return _uniform_value(schema, rng)

    if isinstance(schema, Numerical):
        thresholds = [float(c.value) for c in guarded if not isinstance(c.value, (bool, str))]
        lo, hi = _numeric_range(schema, thresholds)
        total = sum(leaves)
        pick = int(rng.choice(len(guarded), p=[n / total for n in leaves]))
        value = _numeric_in(guarded[pick], lo, hi, rng)
        if value is None:
            warnings.warn(f"{where}: branch condition unsatisfiable in [{lo}, {hi}]; drawing uniformly", stacklevel=3)
            value = float(rng.uniform(lo, hi))
        return value

    if isinstance(schema, Freeform):
        return _uniform_value(schema, rng)
    candidates = list(schema.candidates) if isinstance(schema, Categorical) else [True, False]
    weights = [sum(n for c, n in zip(guarded, leaves) if _holds(c, v)) for v in candidates]
    total = sum(weights)
    if total == 0:
        warnings.warn(f"{where}: no schema value satisfies any branch; drawing uniformly", stacklevel=3)
        return candidates[int(rng.integers(len(candidates)))]
    unmatched = [v for v, w in zip(candidates, weights) if w == 0]
    if unmatched:
        warnings.warn(f"{where}: schema values {unmatched!r} open no branch and are never drawn", stacklevel=3)
    return candidates[int(rng.choice(len(candidates), p=[w / total for w in weights]))]


def sample_environment(case: CaseSpec, seed: int) -> Environment:
    """Draw one test environment, a pure function of ``(case, seed)``.

    Sampling follows the SOP: whenever a tool is called, the branches below
    that read its output are weighted by the leaves beneath them, one is
    picked, and a value satisfying its condition is generated.  Tools whose
    output guards nothing are drawn uniformly from their schema.
    """
    graph = case.graph
    rng = np.random.default_rng(seed)
    queues: dict[str, list[Observation]] = {}
    history: list[tuple[str, Observation]] = []
    stack = list(reversed(graph.roots))
    while stack:
        node = graph.nodes[stack.pop()]
        succ = successors(graph, node.id)
        tool = node.executable_tool
        if tool is not None:
            schema = case.tool_outputs.get(tool)
            if schema is None:
                obs: Observation = {}
            else:
                guarded = [
                    s for s in succ
                    if isinstance(s.condition, Structured)
                    and s.condition.api == tool
                    and s.condition.variable == schema.variable
                ]
                leaves = [graph.leaf_counts[s.id] for s in guarded]
                obs = {schema.variable: _draw(schema, [s.condition for s in guarded], leaves, rng, f"{case.name}:{tool}")}
            queues.setdefault(tool, []).append(obs)
            history.append((tool, obs))
        holding = [s for s in succ if eval_condition(s.condition, history)]
        if holding:
            stack.append(holding[0].id)
    return Environment({k: tuple(v) for k, v in queues.items()})


# --------------------------------------------------------------------------
# Ground truth and scoring
# --------------------------------------------------------------------------


def ground_truth_trajectory(graph: DecisionGraph, env: Environment, max_steps: int = 10_000) -> Trajectory:
    """Tool calls made by evaluating every condition exactly against ``env``.

    At each node the first successor whose condition holds is followed; if
    several hold an ``AmbiguousBranch`` warning is issued.
    """
    cursor: dict[str, int] = {}
    history: list[tuple[str, Observation]] = []
    calls: list[str] = []
    leaf_positions: list[int] = []
    stack: list[tuple[int, int | None]] = [(r, None) for r in reversed(graph.roots)]
    steps = 0
    while stack:
        steps += 1
        if steps > max_steps:
            raise RuntimeError(f"ground truth did not terminate within {max_steps} steps")
        nid, last = stack.pop()
        node = graph.nodes[nid]
        tool = node.executable_tool
        if tool is not None:
            if tool in env.outputs:
                i = cursor.get(tool, 0)
                if i >= len(env.outputs[tool]):
                    raise MissingObservation(f"observation queue for {tool} is exhausted")
                cursor[tool] = i + 1
                obs = env.outputs[tool][i]
            else:
                obs = {}
            calls.append(tool)
            history.append((tool, obs))
            last = len(calls) - 1
        succ = successors(graph, nid)
        holding = [s for s in succ if eval_condition(s.condition, history)]
        if len(holding) > 1:
            warnings.warn(
                f"node {node.path}: {len(holding)} sibling conditions hold; following the first",
                AmbiguousBranch,
                stacklevel=2,
            )
        if holding:
            stack.append((holding[0].id, last))
        elif last is not None and last not in leaf_positions:
            leaf_positions.append(last)
    return Trajectory(tuple(calls), tuple(sorted(leaf_positions)))


@dataclass(frozen=True)
class RunScore:
    path_match: bool
    leaf_match: bool


def score_run(predicted: Trajectory, truth: Trajectory, graph: DecisionGraph | None = None) -> RunScore:
    """Path match is exact sequence equality; leaf match only asks that the
    final call of every traversed truth path appears somewhere in the prediction.
    """
    path = tuple(predicted.calls) == tuple(truth.calls)
    made = set(predicted.calls)
    leaf = all(c in made for c in truth.leaf_calls())
    return RunScore(path, leaf)


# --------------------------------------------------------------------------
# Deciders for benchmark runs
# --------------------------------------------------------------------------

DeciderFactory = Callable[[DecisionGraph, Environment, int], Decider]


def oracle_factory(graph: DecisionGraph, env: Environment, seed: int) -> Decider:
    return OracleDecider(graph, env)


def scripted_factory(plan: Sequence = (), policy: Callable | None = None) -> DeciderFactory:
    def make(graph: DecisionGraph, env: Environment, seed: int) -> Decider:
        return ScriptedDecider(plan, seed=seed, policy=policy)

    return make


class FaultyDecider:
    """Wraps a decider and deliberately takes a wrong branch once.

    At the first branching request with two or more candidates, the candidate
    listed after the wrapped decider's choice is taken instead.
    """

    def __init__(self, base: Decider):
        self.base = base
        self.fired = False

    def decide(self, request: DeciderRequest) -> DeciderResponse:
        response = self.base.decide(request)
        if self.fired or request.purpose != "branch" or len(request.candidates) < 2:
            return response
        self.fired = True
        cands = request.candidates
        if request.mode is BranchMode.INDISTINGUISHABLE:
            names = request.tool_names
            picked = [names.index(s.name) for s in response.selections if s.name in names]
            alt = (picked[0] + 1) % len(cands) if picked else 0
            return DeciderResponse((ToolCall(names[alt], {}),))
        if response.no_call:
            current = next(i for i, c in enumerate(cands) if c.tool is None)
        elif response.selections:
            current = next((i for i, c in enumerate(cands) if c.tool == response.selections[0].name), -1)
        else:
            current = -1
        alt = cands[(current + 1) % len(cands)]
        if alt.tool is None:
            return DeciderResponse(no_call=True)
        return DeciderResponse((ToolCall(alt.tool, {}),))


def with_faults(factory: DeciderFactory, seeds: Iterable[int]) -> DeciderFactory:
    """Factory that wraps the decider in ``FaultyDecider`` on the given run seeds."""
    bad = frozenset(seeds)

    def make(graph: DecisionGraph, env: Environment, seed: int) -> Decider:
        decider = factory(graph, env, seed)
        return FaultyDecider(decider) if seed in bad else decider

    return make


# --------------------------------------------------------------------------
# Benchmark runs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    case: str
    seed: int
    result: RunResult
    truth: Trajectory
    score: RunScore


@dataclass(frozen=True)
class CaseReport:
    name: str
    runs: int
    path_accuracy: float
    leaf_accuracy: float
    failures: int
    failure_kinds: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class BenchReport:
    cases: tuple[CaseReport, ...]
    records: tuple[RunRecord, ...] = field(repr=False, default=())

    @property
    def path_accuracy(self) -> float:
        return float(np.mean([c.path_accuracy for c in self.cases])) if self.cases else 0.0

    @property
    def leaf_accuracy(self) -> float:
        return float(np.mean([c.leaf_accuracy for c in self.cases])) if self.cases else 0.0

    @property
    def failures(self) -> int:
        return sum(c.failures for c in self.cases)


def _one_run(case: CaseSpec, factory: DeciderFactory, seed: int, limits: RunLimits) -> RunRecord:
    env = sample_environment(case, seed)
    truth = ground_truth_trajectory(case.graph, env)
    decider = factory(case.graph, env, seed)
    result = run(case.graph, decider, env.executor(), replace(limits, seed=seed))
    if result.terminal.completed:
        score = score_run(result.trajectory, truth, case.graph)
    else:
        score = RunScore(False, False)
    return RunRecord(case.name, seed, result, truth, score)


def _run_all(jobs, factory, limits, parallel):
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(lambda job: _one_run(job[0], factory, job[1], limits), jobs))
    return [_one_run(case, factory, seed, limits) for case, seed in jobs]


def run_benchmark(
    cases: Sequence[CaseSpec],
    decider_factory: DeciderFactory,
    runs_per_case: int = 100,
    seed: int = 0,
    limits: RunLimits = RunLimits(),
    parallel: int = 1,
) -> BenchReport:
    """Run every case ``runs_per_case`` times; run ``i`` uses seed ``seed + i``.

    Failed runs score false on both metrics and are tallied by error class.
    """
    if runs_per_case < 1:
        raise ValueError("runs_per_case must be >= 1")
    jobs = [(case, seed + i) for case in cases for i in range(runs_per_case)]
    records = _run_all(jobs, decider_factory, limits, parallel)

    reports = []
    for k, case in enumerate(cases):
        mine = records[k * runs_per_case:(k + 1) * runs_per_case]
        kinds = Counter(r.result.terminal.error for r in mine if not r.result.terminal.completed)
        reports.append(
            CaseReport(
                name=case.name,
                runs=len(mine),
                path_accuracy=sum(r.score.path_match for r in mine) / len(mine),
                leaf_accuracy=sum(r.score.leaf_match for r in mine) / len(mine),
                failures=sum(kinds.values()),
                failure_kinds=dict(sorted(kinds.items())),
            )
        )
    return BenchReport(tuple(reports), tuple(records))


@dataclass(frozen=True)
class Divergence:
    seed: int
    predicted: Trajectory
    truth: Trajectory
    terminal: Terminal


@dataclass(frozen=True)
class RefineReport:
    needs_refinement: bool
    divergent: tuple[Divergence, ...]
    runs: int


def refinement_check(
    case: CaseSpec,
    decider_factory: DeciderFactory,
    n_runs: int = 20,
    seed: int = 0,
    limits: RunLimits = RunLimits(),
) -> RefineReport:
    """Run seeded trials and list every one whose trajectory misses the ground truth."""
    if n_runs < 0:
        raise ValueError("n_runs must be >= 0")
    divergent = []
    for i in range(n_runs):
        rec = _one_run(case, decider_factory, seed + i, limits)
        if not rec.result.terminal.completed or rec.result.trajectory != rec.truth:
            divergent.append(Divergence(rec.seed, rec.result.trajectory, rec.truth, rec.result.terminal))
    return RefineReport(bool(divergent), tuple(divergent), n_runs)


# --------------------------------------------------------------------------
# Report output
# --------------------------------------------------------------------------


def report_records(report: BenchReport) -> str:
    """JSON-lines records, one per case, then one aggregate line."""
    lines = [
        json.dumps(
            {
                "case": c.name,
                "runs": c.runs,
                "path_acc": round(c.path_accuracy, 6),
                "leaf_acc": round(c.leaf_accuracy, 6),
                "failures": c.failures,
                "failure_kinds": dict(c.failure_kinds),
            }
        )
        for c in report.cases
    ]
    lines.append(
        json.dumps(
            {
                "case": "*",
                "runs": sum(c.runs for c in report.cases),
                "path_acc": round(report.path_accuracy, 6),
                "leaf_acc": round(report.leaf_accuracy, 6),
                "failures": report.failures,
            }
        )
    )
    return "\n".join(lines) + "\n"


def format_report(report: BenchReport) -> str:
    width = max([len("case"), len("average")] + [len(c.name) for c in report.cases])
    out = [f"{'case':<{width}}  path_acc  leaf_acc  failures"]
    for c in report.cases:
        out.append(f"{c.name:<{width}}  {c.path_accuracy:8.3f}  {c.leaf_accuracy:8.3f}  {c.failures:8d}")
    out.append(f"{'average':<{width}}  {report.path_accuracy:8.3f}  {report.leaf_accuracy:8.3f}  {report.failures:8d}")
    return "\n".join(out) + "\n"
