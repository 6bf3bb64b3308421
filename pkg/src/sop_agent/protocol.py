"""Types shared by the traversal engine and the deciders that drive it."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Protocol, Union

from .sop_format import ToolSpec

__all__ = [
    "Value",
    "Observation",
    "BranchMode",
    "ToolCall",
    "DeciderRequest",
    "DeciderResponse",
    "Decider",
    "Executor",
    "dummy_tool_name",
    "DUMMY_PREFIX",
    "SopAgentError",
    "DeciderError",
    "ContractViolation",
    "TransportError",
    "MalformedResponse",
    "ConditionError",
    "MissingObservation",
    "TypeMismatch",
    "TextualNotEvaluable",
    "RunError",
    "HallucinatedCall",
    "NoBranchSelected",
    "StepLimitExceeded",
    "ExecutorFailure",
]

Value = Union[str, bool, int, float]
Observation = Mapping[str, Value]


class BranchMode(str, Enum):
    DISTINGUISHABLE = "distinguishable"
    INDISTINGUISHABLE = "indistinguishable"


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": dict(self.arguments)}


DUMMY_PREFIX = "explore_subtree_"


def dummy_tool_name(index: int) -> str:
    """explore_subtree_A, ..., explore_subtree_Z, explore_subtree_AA, ..."""
    letters = ""
    index += 1
    while index:
        index, rem = divmod(index - 1, 26)
        letters = string.ascii_uppercase[rem] + letters
    return DUMMY_PREFIX + letters


@dataclass(frozen=True)
class DeciderRequest:
    """One question put to a decider.

    ``purpose`` is ``"branch"`` when choosing among candidate successors and
    ``"arguments"`` when generating arguments for a branch already chosen
    through a dummy tool.  ``candidates`` and ``observations`` give
    programmatic deciders the structured context the prompt describes in text.
    """

    prompt: str
    tools: tuple[ToolSpec, ...]
    mode: BranchMode
    multi_select_allowed: bool = False
    purpose: str = "branch"
    candidates: tuple = ()
    observations: tuple[tuple[str, Observation], ...] = ()

    @property
    def tool_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tools)


@dataclass(frozen=True)
class DeciderResponse:
    selections: tuple[ToolCall, ...] = ()
    no_call: bool = False

    def __post_init__(self):
        if self.no_call and self.selections:
            raise ValueError("a no-call response cannot carry selections")


class Decider(Protocol):
    def decide(self, request: DeciderRequest) -> DeciderResponse: ...


Executor = Callable[[ToolCall], Observation]


class SopAgentError(Exception):
    pass


class DeciderError(SopAgentError):
    pass


class ContractViolation(DeciderError):
    def __init__(self, message: str, tool_name: str | None = None):
        super().__init__(message)
        self.tool_name = tool_name


class TransportError(DeciderError):
    pass


class MalformedResponse(DeciderError):
    pass


class ConditionError(DeciderError):
    pass


class MissingObservation(ConditionError):
    pass


class TypeMismatch(ConditionError):
    pass


class TextualNotEvaluable(ConditionError):
    pass


class RunError(SopAgentError):
    pass


class HallucinatedCall(RunError):
    def __init__(self, tool_name: str, allowed: tuple[str, ...]):
        super().__init__(f"decider called {tool_name!r}, which is not among {list(allowed)}")
        self.tool_name = tool_name
        self.allowed = allowed


class NoBranchSelected(RunError):
    pass


class StepLimitExceeded(RunError):
    pass


class ExecutorFailure(RunError):
    def __init__(self, call: ToolCall, attempts: int, last_error: BaseException):
        super().__init__(f"{call.name} failed after {attempts} attempt(s): {last_error!r}")
        self.call = call
        self.attempts = attempts
        self.last_error = last_error
