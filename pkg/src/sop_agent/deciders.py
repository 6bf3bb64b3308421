"""Deciders that answer branching questions, plus simulated tool environments."""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .graph import DecisionGraph
from .protocol import (
    BranchMode,
    ContractViolation,
    DeciderRequest,
    DeciderResponse,
    MissingObservation,
    Observation,
    TextualNotEvaluable,
    ToolCall,
    TypeMismatch,
    Value,
)
from .sop_format import Always, Condition, Structured, Textual, ToolSpec

__all__ = [
    "AmbiguousBranch",
    "canonical_text",
    "compare",
    "eval_condition",
    "Environment",
    "EnvironmentExecutor",
    "load_environment",
    "dump_environment",
    "ScriptedDecider",
    "OracleDecider",
    "oracle_decider",
    "default_arguments",
]


class AmbiguousBranch(UserWarning):
    """Several sibling conditions hold where one branch was expected."""


# --------------------------------------------------------------------------
# Condition evaluation
# --------------------------------------------------------------------------


def canonical_text(value: Value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        if isinstance(value, float) and value.is_integer():
            return str(int(value))
        return repr(value)
    return str(value).strip()


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def compare(observed: Value, comparator: str, expected: Value) -> bool:
    """Apply a structured-condition comparator.

    ``is``/``is_not`` compare canonical text exactly (case-sensitive);
    the ordering comparators require numbers on both sides.
    """
    if comparator == "is":
        return canonical_text(observed) == canonical_text(expected)
    if comparator == "is_not":
        return canonical_text(observed) != canonical_text(expected)
    if not (_is_number(observed) and _is_number(expected)):
        raise TypeMismatch(f"{comparator} needs numbers, got {observed!r} and {expected!r}")
    if comparator == "gt":
        return observed > expected
    if comparator == "ge":
        return observed >= expected
    if comparator == "lt":
        return observed < expected
    if comparator == "le":
        return observed <= expected
    raise ValueError(f"unknown comparator {comparator!r}")


def eval_condition(cond: Condition, history: Sequence[tuple[str, Observation]]) -> bool:
    """Evaluate ``cond`` against the observation history (oldest first).

    A structured condition reads its variable from the most recent
    observation produced by its tool.
    """
    if isinstance(cond, Always):
        return True
    if isinstance(cond, Textual):
        raise TextualNotEvaluable(f"textual condition cannot be evaluated mechanically: {cond.text!r}")
    for tool, obs in reversed(history):
        if tool == cond.api:
            if cond.variable not in obs:
                raise MissingObservation(f"latest output of {cond.api} has no variable {cond.variable!r}")
            return compare(obs[cond.variable], cond.comparator, cond.value)
    raise MissingObservation(f"{cond.api} has not produced an observation yet")


# --------------------------------------------------------------------------
# Environments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Environment:
    """Pre-sampled tool outputs: tool name -> queue of observations."""

    outputs: Mapping[str, tuple[Observation, ...]] = field(default_factory=dict)

    @classmethod
    def of(cls, outputs: Mapping[str, Iterable[Observation]]) -> "Environment":
        return cls({k: tuple(dict(o) for o in v) for k, v in outputs.items()})

    def executor(self) -> "EnvironmentExecutor":
        return EnvironmentExecutor(self)


class EnvironmentExecutor:
    """Replays an environment's queues; each call consumes the next value.

    Tools absent from the environment produce no observable output (``{}``);
    a tool whose queue is used up raises ``MissingObservation``.
    """

    def __init__(self, env: Environment):
        self.env = env
        self.cursor: dict[str, int] = {}

    def __call__(self, call: ToolCall) -> Observation:
        if call.name not in self.env.outputs:
            return {}
        queue = self.env.outputs[call.name]
        i = self.cursor.get(call.name, 0)
        if i >= len(queue):
            raise MissingObservation(f"observation queue for {call.name} is exhausted")
        self.cursor[call.name] = i + 1
        return dict(queue[i])


def load_environment(path: str | Path, schema_sampler: Callable | None = None) -> Environment:
    """Read a JSON-lines environment file.

    Each record is ``{"tool": name, "queue": [obs, ...]}`` or
    ``{"tool": name, "output_schema": {...}, "seed": n, "count": k}``; the
    latter is filled by ``schema_sampler(schema, seed, count)``.
    """
    from .bench import parse_output_schema, sample_uniform_queue

    outputs = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            tool = record["tool"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{number}: malformed environment record: {exc}") from None
        if "queue" in record:
            outputs[tool] = tuple(dict(o) for o in record["queue"])
        elif "output_schema" in record:
            schema = parse_output_schema(record["output_schema"])
            sampler = schema_sampler or sample_uniform_queue
            outputs[tool] = tuple(sampler(schema, int(record.get("seed", 0)), int(record.get("count", 1))))
        else:
            raise ValueError(f"{path}:{number}: record needs 'queue' or 'output_schema'")
    return Environment(outputs)


def dump_environment(env: Environment) -> str:
    lines = [
        json.dumps({"tool": tool, "queue": [dict(o) for o in queue]}, ensure_ascii=False)
        for tool, queue in sorted(env.outputs.items())
    ]
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# Deciders
# --------------------------------------------------------------------------


def default_arguments(tool: ToolSpec) -> dict:
    """Placeholder arguments matching the declared parameter types."""
    blank = {"text": "", "bool": False, "number": 0}
    return {p.name: blank[p.type] for p in tool.params}


class ScriptedDecider:
    """Replays a fixed plan, then falls back to seeded random choices.

    Plan entries, consumed one per request:

    * a tool name -> call that tool with default arguments
    * a list/tuple of tool names -> call each (multi-select)
    * ``None`` -> answer without calling anything
    * a ``DeciderResponse`` -> returned as is
    * a callable -> ``entry(request)`` must return a ``DeciderResponse``

    ``policy`` (a callable like the above) answers every request once the plan
    is exhausted; without it the decider picks uniformly at random using
    ``seed`` (or raises if ``fallback="error"``).  Names are not checked
    against the offered tools, so a plan can inject hallucinated calls.
    """

    def __init__(self, plan: Sequence = (), seed: int = 0, policy: Callable | None = None, fallback: str = "random"):
        if fallback not in ("random", "error"):
            raise ValueError("fallback must be 'random' or 'error'")
        self.plan = list(plan)
        self.policy = policy
        self.fallback = fallback
        self.rng = random.Random(seed)
        self.requests: list[DeciderRequest] = []

    def decide(self, request: DeciderRequest) -> DeciderResponse:
        index = len(self.requests)
        self.requests.append(request)
        if index < len(self.plan):
            return self._answer(self.plan[index], request)
        if self.policy is not None:
            return self.policy(request)
        if self.fallback == "error":
            raise IndexError(f"scripted plan exhausted after {len(self.plan)} requests")
        return self._random(request)

    def _answer(self, entry, request: DeciderRequest) -> DeciderResponse:
        if entry is None:
            return DeciderResponse(no_call=True)
        if isinstance(entry, DeciderResponse):
            return entry
        if callable(entry):
            return entry(request)
        names = [entry] if isinstance(entry, str) else list(entry)
        specs = {t.name: t for t in request.tools}
        return DeciderResponse(
            tuple(ToolCall(n, default_arguments(specs[n]) if n in specs else {}) for n in names)
        )

    def _random(self, request: DeciderRequest) -> DeciderResponse:
        options = list(request.tools)
        may_skip = request.purpose == "branch" and request.mode is BranchMode.DISTINGUISHABLE and any(
            getattr(c, "tool", "x") is None for c in request.candidates
        )
        pick = self.rng.randrange(len(options) + (1 if may_skip else 0)) if (options or may_skip) else None
        if pick is None or pick == len(options):
            return DeciderResponse(no_call=True)
        tool = options[pick]
        return DeciderResponse((ToolCall(tool.name, default_arguments(tool)),))


class OracleDecider:
    """Selects exactly the candidates whose structured conditions hold.

    Conditions are evaluated against the observations the engine has
    collected so far (carried on each request).  In distinguishable mode only
    one branch can be expressed, so the first holding candidate wins.
    """

    def __init__(self, graph: DecisionGraph, env: Environment | None = None):
        self.graph = graph
        self.env = env

    def decide(self, request: DeciderRequest) -> DeciderResponse:
        if request.purpose == "arguments":
            tool = request.tools[0]
            return DeciderResponse((ToolCall(tool.name, default_arguments(tool)),))

        holding = [
            i for i, cand in enumerate(request.candidates) if eval_condition(cand.condition, request.observations)
        ]
        if not holding:
            return DeciderResponse()

        if request.mode is BranchMode.INDISTINGUISHABLE:
            return DeciderResponse(tuple(ToolCall(request.tools[i].name, {}) for i in holding))

        if len(holding) > 1:
            warnings.warn(
                f"{len(holding)} candidate conditions hold; following the first listed",
                AmbiguousBranch,
                stacklevel=2,
            )
        cand = request.candidates[holding[0]]
        if cand.tool is None:
            return DeciderResponse(no_call=True)
        spec = next((t for t in request.tools if t.name == cand.tool), None)
        if spec is None:
            raise ContractViolation(f"oracle chose {cand.tool!r}, which is not offered", cand.tool)
        return DeciderResponse((ToolCall(cand.tool, default_arguments(spec)),))


def oracle_decider(graph: DecisionGraph, env: Environment | None = None) -> OracleDecider:
    return OracleDecider(graph, env)
