"""Decider backed by a chat-completions endpoint with function calling."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx

from .protocol import (
    BranchMode,
    ContractViolation,
    DeciderRequest,
    DeciderResponse,
    MalformedResponse,
    ToolCall,
    TransportError,
)
from .sop_format import ToolSpec

__all__ = ["LLMConfig", "LLMDecider", "llm_decider", "tool_schema", "build_payload", "parse_response", "TOKEN_ENV"]

log = logging.getLogger(__name__)

TOKEN_ENV = "SOP_AGENT_API_KEY"
ENDPOINT_ENV = "SOP_AGENT_ENDPOINT"
MODEL_ENV = "SOP_AGENT_MODEL"

SYSTEM_PROMPT = (
    "You are an agent that follows a standard operating procedure exactly. "
    "Answer only by calling the provided functions as instructed."
)

_JSON_TYPES = {"text": "string", "bool": "boolean", "number": "number"}
_RETRY_STATUS = {429, 500, 502, 503, 504}


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str
    model: str
    auth: str = field(repr=False)
    temperature: float = 0.0
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5

    @classmethod
    def from_env(cls, **overrides) -> "LLMConfig":
        """Fill unset fields from SOP_AGENT_ENDPOINT / SOP_AGENT_MODEL / SOP_AGENT_API_KEY."""
        values = {
            "endpoint": os.environ.get(ENDPOINT_ENV),
            "model": os.environ.get(MODEL_ENV),
            "auth": os.environ.get(TOKEN_ENV),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        missing = [k for k in ("endpoint", "model", "auth") if not values.get(k)]
        if missing:
            raise ValueError(f"LLM configuration incomplete: missing {', '.join(missing)}")
        return cls(**values)


def tool_schema(tool: ToolSpec) -> dict:
    return {
        "type": "function",
        "function": {
            "name": tool.name,
            "description": tool.description,
            "parameters": {
                "type": "object",
                "properties": {
                    p.name: {"type": _JSON_TYPES[p.type], "description": p.description} for p in tool.params
                },
                "required": [p.name for p in tool.params],
            },
        },
    }


def build_payload(request: DeciderRequest, config: LLMConfig) -> dict:
    payload = {
        "model": config.model,
        "temperature": config.temperature,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": request.prompt},
        ],
    }
    if request.tools:
        payload["tools"] = [tool_schema(t) for t in request.tools]
        payload["tool_choice"] = "auto"
        payload["parallel_tool_calls"] = request.multi_select_allowed
    return payload


def parse_response(body: dict, request: DeciderRequest) -> DeciderResponse:
    try:
        message = body["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse(f"response has no choices[0].message: {str(body)[:200]}") from None
    calls = message.get("tool_calls") or []
    if not calls:
        return DeciderResponse(no_call=True)

    allowed = set(request.tool_names)
    selections = []
    for call in calls:
        try:
            fn = call["function"]
            name = fn["name"]
            raw = fn.get("arguments") or "{}"
            args = json.loads(raw) if isinstance(raw, str) else dict(raw)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise MalformedResponse(f"unreadable tool call {call!r}: {exc}") from None
        if name not in allowed:
            raise ContractViolation(f"model called unknown function {name!r}", name)
        if not isinstance(args, dict):
            raise MalformedResponse(f"arguments of {name} are not an object")
        selections.append(ToolCall(name, args))
    if request.mode is BranchMode.DISTINGUISHABLE and len(selections) > 1 and not request.multi_select_allowed:
        raise ContractViolation(f"{len(selections)} calls returned where one was expected")
    return DeciderResponse(tuple(selections))


class LLMDecider:
    """Sends each request as one chat-completions call.

    Transport errors and retryable HTTP statuses (429, 5xx) are retried with
    exponential backoff; ``client`` may be injected (e.g. with an
    ``httpx.MockTransport``) for offline use.
    """

    def __init__(
        self,
        config: LLMConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)
        self.sleep = sleep
        self.attempts = 0

    def decide(self, request: DeciderRequest) -> DeciderResponse:
        payload = build_payload(request, self.config)
        headers = {"Authorization": f"Bearer {self.config.auth}", "Content-Type": "application/json"}
        last = None
        for attempt in range(1, self.config.max_attempts + 1):
            self.attempts += 1
            try:
                resp = self.client.post(
                    self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout
                )
            except httpx.HTTPError as exc:
                last = f"{type(exc).__name__}: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        body = resp.json()
                    except ValueError:
                        raise MalformedResponse("response body is not JSON") from None
                    return parse_response(body, request)
                if resp.status_code not in _RETRY_STATUS:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                last = f"HTTP {resp.status_code}"
            log.info("LLM request attempt %d failed: %s", attempt, last)
            if attempt < self.config.max_attempts:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
        raise TransportError(f"giving up after {self.config.max_attempts} attempts: {last}")

    def close(self):
        self.client.close()


def llm_decider(config: LLMConfig, client: httpx.Client | None = None) -> LLMDecider:
    return LLMDecider(config, client)
