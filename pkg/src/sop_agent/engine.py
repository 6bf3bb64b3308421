"""Selective depth-first traversal of a decision graph.

At every node the engine executes the node's tool call, then asks a decider
which successors apply.  When the candidate successors bind pairwise-distinct
tools (with at most one tool-less candidate) the decider's single tool call
identifies the branch, costing one query.  Otherwise each candidate is offered
as a dummy ``explore_subtree_X`` tool, and every chosen branch that binds a
real tool costs one more query to generate its arguments.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .graph import DecisionGraph, DecisionNode, successors
from .protocol import (
    BranchMode,
    ConditionError,
    ContractViolation,
    Decider,
    DeciderError,
    DeciderRequest,
    DeciderResponse,
    Executor,
    ExecutorFailure,
    HallucinatedCall,
    NoBranchSelected,
    Observation,
    RunError,
    StepLimitExceeded,
    ToolCall,
    dummy_tool_name,
)
from .sop_format import ToolSpec, condition_text

__all__ = [
    "Memory",
    "mem_set",
    "mem_get",
    "TraceEvent",
    "Trajectory",
    "PromptBundle",
    "RetryPolicy",
    "RunLimits",
    "EngineState",
    "Terminal",
    "RunResult",
    "classify_branching",
    "build_step_prompt",
    "execute_with_retry",
    "step",
    "run",
    "trace_records",
    "dump_trace",
    "HISTORY_WINDOW",
    "DEFAULT_STEP_LIMIT",
    "MEMORY_TOOL",
]

log = logging.getLogger(__name__)

HISTORY_WINDOW = 20
DEFAULT_STEP_LIMIT = 50
MEMORY_TOOL = "log_to_memory"


class Memory:
    """Read-replace key/value store: writes overwrite, nothing is deleted."""

    def __init__(self, entries: Mapping[str, str] | None = None):
        self._entries: dict[str, str] = dict(entries or {})

    def set(self, key: str, value: str) -> "Memory":
        if not key:
            raise ValueError("memory key must be non-empty")
        self._entries[key] = str(value)
        return self

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def items(self):
        return self._entries.items()

    def snapshot(self) -> dict[str, str]:
        return dict(self._entries)

    def __len__(self):
        return len(self._entries)


def mem_set(memory: Memory, key: str, value: str) -> Memory:
    return memory.set(key, value)


def mem_get(memory: Memory, key: str) -> str | None:
    return memory.get(key)


@dataclass(frozen=True)
class TraceEvent:
    step: int
    node: int
    branch_mode: BranchMode | None
    candidates: tuple[int, ...]
    chosen: tuple[int, ...]
    call: ToolCall | None
    observation: Observation | None
    queries_used: int

    def to_record(self) -> dict:
        return {
            "step": self.step,
            "node": self.node,
            "branch_mode": self.branch_mode.value if self.branch_mode else None,
            "candidates": list(self.candidates),
            "chosen": list(self.chosen),
            "call": self.call.to_dict() if self.call else None,
            "observation": dict(self.observation) if self.observation is not None else None,
            "queries_used": self.queries_used,
        }


def trace_records(trace: Iterable[TraceEvent], **extra) -> list[str]:
    """One JSON line per event; ``extra`` keys are prepended to each record."""
    lines = []
    for event in trace:
        record = dict(extra)
        record.update(event.to_record())
        lines.append(json.dumps(record, ensure_ascii=False))
    return lines


def dump_trace(trace: Iterable[TraceEvent]) -> str:
    lines = trace_records(trace)
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class Trajectory:
    """Ordered tool calls of a run.

    ``leaf_positions`` indexes the final call of every root-to-leaf path that
    was traversed; it is bookkeeping for leaf accuracy and does not take part
    in equality.
    """

    calls: tuple[str, ...] = ()
    leaf_positions: tuple[int, ...] | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.calls)

    def leaf_calls(self) -> tuple[str, ...]:
        if self.leaf_positions is None:
            return self.calls[-1:]
        return tuple(self.calls[i] for i in self.leaf_positions)


@dataclass(frozen=True)
class PromptBundle:
    prompt: str
    tools: tuple[ToolSpec, ...]


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: float = 0.0  # seconds before the 2nd attempt; doubles after that

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class RunLimits:
    step_limit: int = DEFAULT_STEP_LIMIT
    seed: int = 0
    retry: RetryPolicy = RetryPolicy()
    history_window: int = HISTORY_WINDOW
    memory_tool: str | None = MEMORY_TOOL


@dataclass(frozen=True)
class Terminal:
    status: str  # "completed" | "failed"
    error: str | None = None
    message: str = ""

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def __str__(self):
        return "Completed" if self.completed else f"Failed({self.error}: {self.message})"


@dataclass(frozen=True)
class RunResult:
    trajectory: Trajectory
    trace: tuple[TraceEvent, ...]
    terminal: Terminal
    query_count: int = 0
    memory: Mapping[str, str] = field(default_factory=dict)


def classify_branching(candidates: Sequence[DecisionNode]) -> BranchMode:
    if not candidates:
        raise ValueError("cannot classify an empty candidate list")
    tools = [c.tool for c in candidates if c.tool is not None]
    untooled = len(candidates) - len(tools)
    if len(set(tools)) != len(tools) or untooled >= 2:
        return BranchMode.INDISTINGUISHABLE
    return BranchMode.DISTINGUISHABLE


def _letter(i: int) -> str:
    return dummy_tool_name(i)[len("explore_subtree_"):]


def _render_value(value) -> str:
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def _lookup_tool(name: str, registry: Mapping[str, ToolSpec] | None) -> ToolSpec:
    if registry is not None and name in registry:
        return registry[name]
    return ToolSpec(name)


def build_step_prompt(
    node: DecisionNode,
    candidates: Sequence[DecisionNode],
    memory: Memory,
    history: Sequence[TraceEvent],
    mode: BranchMode,
    registry: Mapping[str, ToolSpec] | None = None,
    history_window: int = HISTORY_WINDOW,
) -> PromptBundle | None:
    """Structural prompt plus the filtered toolset for one branching decision.

    Returns ``None`` when there are no candidates (the node is terminal).
    """
    if not candidates:
        return None
    lines = [
        "You are following a standard operating procedure.",
        f"Current step: {node.action_text or '(unnamed step)'}",
    ]
    if len(memory):
        lines.append("Memory:")
        lines.extend(f"  {k}: {v}" for k, v in memory.items())
    recent = list(history)[-history_window:] if history_window > 0 else []
    if recent:
        lines.append("Recent history:")
        for ev in recent:
            entry = f"  step {ev.step}: node {ev.node}"
            if ev.call is not None:
                entry += f" called {ev.call.name}({_render_value(dict(ev.call.arguments))})"
            if ev.observation is not None:
                entry += f" observed {_render_value(dict(ev.observation))}"
            lines.append(entry)
    lines.append("Candidate next steps:")
    for i, cand in enumerate(candidates):
        tool = f" [function: {cand.tool}]" if cand.tool else ""
        lines.append(f"  {_letter(i)}. if {condition_text(cand.condition)}: {cand.action_text}{tool}")

    if mode is BranchMode.DISTINGUISHABLE:
        names = []
        for cand in candidates:
            if cand.tool is not None and cand.tool not in names:
                names.append(cand.tool)
        tools = tuple(_lookup_tool(n, registry) for n in names)
        lines.append(
            "Decide which candidate step applies and call its function. "
            "If the applicable step has no function, answer without calling any function."
        )
    else:
        tools = tuple(
            ToolSpec(dummy_tool_name(i), f"Explore candidate step {_letter(i)}: {cand.action_text}")
            for i, cand in enumerate(candidates)
        )
        lines.append("Call the explore_subtree function of every candidate step that applies.")
    return PromptBundle("\n".join(lines), tools)


def execute_with_retry(
    executor: Executor,
    call: ToolCall,
    policy: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
) -> Observation:
    last: BaseException | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return executor(call)
        except ConditionError:
            # a simulated environment that cannot answer will not answer on retry either
            raise
        except Exception as exc:
            last = exc
            log.debug("call %s attempt %d failed: %r", call.name, attempt, exc)
            if attempt < policy.max_attempts and policy.backoff > 0:
                sleep(policy.backoff * 2 ** (attempt - 1))
    raise ExecutorFailure(call, policy.max_attempts, last)


@dataclass
class _Frame:
    node: int
    call: ToolCall | None
    path_last_call: int | None


@dataclass
class EngineState:
    frontier: list[_Frame]
    memory: Memory = field(default_factory=Memory)
    history: list[TraceEvent] = field(default_factory=list)
    query_count: int = 0
    step_limit: int = DEFAULT_STEP_LIMIT
    seed: int = 0
    calls: list[str] = field(default_factory=list)
    leaf_positions: set[int] = field(default_factory=set)
    observations: list[tuple[str, Observation]] = field(default_factory=list)

    @classmethod
    def start(cls, graph: DecisionGraph, limits: RunLimits = RunLimits()) -> "EngineState":
        frontier = [_Frame(r, None, None) for r in reversed(graph.roots)]
        return cls(frontier=frontier, step_limit=limits.step_limit, seed=limits.seed)


def _ask(decider: Decider, request: DeciderRequest) -> DeciderResponse:
    try:
        return decider.decide(request)
    except ContractViolation as exc:
        if exc.tool_name is not None:
            raise HallucinatedCall(exc.tool_name, request.tool_names) from exc
        raise


def step(
    graph: DecisionGraph,
    state: EngineState,
    decider: Decider,
    executor: Executor,
    limits: RunLimits = RunLimits(),
) -> tuple[list[int], TraceEvent]:
    """Enter the node on top of the DFS stack, run its call and branch.

    The event is appended to ``state.history`` even when the step fails.
    """
    if not state.frontier:
        raise ValueError("frontier is empty")
    if len(state.history) >= state.step_limit:
        raise StepLimitExceeded(f"step limit {state.step_limit} reached")

    frame = state.frontier.pop()
    node = graph[frame.node]
    number = len(state.history) + 1
    ev = dict(node=node.id, branch_mode=None, candidates=(), chosen=(), call=None, observation=None, queries_used=0)

    def record() -> TraceEvent:
        event = TraceEvent(step=number, **ev)
        state.history.append(event)
        state.query_count += ev["queries_used"]
        return event

    try:
        path_last = frame.path_last_call
        tool_name = node.executable_tool
        if tool_name is not None:
            call = frame.call
            if call is None:
                call = _root_call(graph, node, state, decider, ev)
            ev["call"] = call
            state.calls.append(call.name)
            path_last = len(state.calls) - 1
            if limits.memory_tool is not None and call.name == limits.memory_tool and "key" in call.arguments:
                state.memory.set(str(call.arguments["key"]), str(call.arguments.get("value", "")))
                obs: Observation = {"status": "ok"}
            else:
                obs = execute_with_retry(executor, call, limits.retry)
            ev["observation"] = obs
            state.observations.append((call.name, obs))

        candidates = successors(graph, node.id)
        ev["candidates"] = tuple(c.id for c in candidates)
        if not candidates:
            if path_last is not None:
                state.leaf_positions.add(path_last)
            return [], record()

        mode = classify_branching(candidates)
        ev["branch_mode"] = mode
        chosen, calls = _branch(graph, node, candidates, mode, state, decider, limits, ev)
        ev["chosen"] = tuple(c.id for c in chosen)
        for cand in reversed(chosen):
            state.frontier.append(_Frame(cand.id, calls.get(cand.id), path_last))
        return [c.id for c in chosen], record()
    except (RunError, DeciderError):
        record()
        raise


def _root_call(graph, node, state, decider, ev) -> ToolCall:
    spec = graph.tool_registry[node.tool]
    if not spec.params:
        return ToolCall(node.tool, {})
    request = DeciderRequest(
        prompt=f"Generate the arguments for {node.tool}: {node.action_text}",
        tools=(spec,),
        mode=BranchMode.DISTINGUISHABLE,
        purpose="arguments",
        candidates=(node,),
        observations=tuple(state.observations),
    )
    ev["queries_used"] += 1
    return _single_call(_ask(decider, request), spec.name)


def _single_call(response: DeciderResponse, tool: str) -> ToolCall:
    if len(response.selections) != 1:
        raise ContractViolation(f"expected exactly one call to {tool}, got {len(response.selections)}")
    call = response.selections[0]
    if call.name != tool:
        raise HallucinatedCall(call.name, (tool,))
    return call


def _branch(graph, node, candidates, mode, state, decider, limits, ev):
    bundle = build_step_prompt(
        node, candidates, state.memory, state.history, mode, graph.tool_registry, limits.history_window
    )
    request = DeciderRequest(
        prompt=bundle.prompt,
        tools=bundle.tools,
        mode=mode,
        multi_select_allowed=mode is BranchMode.INDISTINGUISHABLE,
        purpose="branch",
        candidates=tuple(candidates),
        observations=tuple(state.observations),
    )
    ev["queries_used"] += 1
    response = _ask(decider, request)
    allowed = request.tool_names

    if mode is BranchMode.DISTINGUISHABLE:
        if len(response.selections) > 1:
            raise ContractViolation(f"{len(response.selections)} calls returned where one branch is selectable")
        if response.selections:
            call = response.selections[0]
            if call.name not in allowed:
                raise HallucinatedCall(call.name, allowed)
            matches = [c for c in candidates if c.tool == call.name]
            if len(matches) > 1:
                log.warning("node %s: tool %s bound by several candidates; taking the first", node.id, call.name)
            return [matches[0]], {matches[0].id: call}
        if response.no_call:
            untooled = [c for c in candidates if c.tool is None]
            if untooled:
                return [untooled[0]], {}
        raise NoBranchSelected(f"no branch selected at node {node.id}")

    if not response.selections:
        raise NoBranchSelected(f"no branch selected at node {node.id}")
    picked = set()
    for sel in response.selections:
        if sel.name not in allowed:
            raise HallucinatedCall(sel.name, allowed)
        picked.add(allowed.index(sel.name))
    chosen = [candidates[i] for i in sorted(picked)]
    calls = {}
    for cand in chosen:
        if cand.tool is None:
            continue
        spec = graph.tool_registry[cand.tool]
        arg_request = DeciderRequest(
            prompt=f"{bundle.prompt}\nGenerate the arguments for {cand.tool} to carry out: {cand.action_text}",
            tools=(spec,),
            mode=BranchMode.DISTINGUISHABLE,
            purpose="arguments",
            candidates=(cand,),
            observations=tuple(state.observations),
        )
        ev["queries_used"] += 1
        calls[cand.id] = _single_call(_ask(decider, arg_request), cand.tool)
    return chosen, calls


def run(
    graph: DecisionGraph,
    decider: Decider,
    executor: Executor,
    limits: RunLimits = RunLimits(),
) -> RunResult:
    """Traverse ``graph`` from its roots until the DFS stack empties or a step fails."""
    if limits.step_limit < 1:
        raise ValueError("step_limit must be >= 1")
    state = EngineState.start(graph, limits)
    terminal = Terminal("completed")
    try:
        while state.frontier:
            step(graph, state, decider, executor, limits)
    except (RunError, DeciderError) as exc:
        terminal = Terminal("failed", type(exc).__name__, str(exc))
    return RunResult(
        trajectory=Trajectory(tuple(state.calls), tuple(sorted(state.leaf_positions))),
        trace=tuple(state.history),
        terminal=terminal,
        query_count=state.query_count,
        memory=state.memory.snapshot(),
    )
