"""Reading, checking and writing pseudocode-style SOP documents.

An SOP is an indentation-structured list of nodes.  Each node is a list item
whose key is the action text, followed by an indented block of fields::

    - authenticate customer's identity account details:
        condition: "always"
        API: {"name": "authenticate_customer", "description": "..."}
        Instructions:
        - if account authentication fails, ...:
            condition: {"API": "authenticate_customer", "variable": "authentication_status",
                        "condition_type": "is", "value": "failed"}

Two condition dialects are accepted and unified into one ``Condition`` type:
``condition:`` (``"always"``, a quoted text, or a structured brace mapping) and
``condition_type:`` (``always`` or ``if``; with ``if`` the node key is the
condition text).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Union

__all__ = [
    "Always",
    "Textual",
    "Structured",
    "Condition",
    "COMPARATORS",
    "ToolParam",
    "ToolSpec",
    "Categorical",
    "Boolean",
    "Numerical",
    "Freeform",
    "OutputSchema",
    "NodeSpec",
    "SopDocument",
    "Diagnostic",
    "SopSyntaxError",
    "parse_sop",
    "validate",
    "serialize",
    "condition_text",
    "iter_nodes",
]

COMPARATORS = ("is", "is_not", "gt", "ge", "lt", "le")
PARAM_TYPES = ("text", "bool", "number")
FIELDS = ("condition", "condition_type", "API", "Description", "Instructions", "label", "goto")

_IDENT = re.compile(r"[A-Za-z_][\w.\-]*\Z")
_STRUCTURED_KEYS = {"API", "variable", "condition_type", "value"}


# --------------------------------------------------------------------------
# Conditions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Always:
    pass


@dataclass(frozen=True)
class Textual:
    text: str


@dataclass(frozen=True)
class Structured:
    """Predicate on one variable of the most recent output of ``api``."""

    api: str
    variable: str
    comparator: str
    value: Union[str, bool, int, float]

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")


Condition = Union[Always, Textual, Structured]


def condition_text(cond: Condition) -> str:
    """Human-readable rendering used in prompts and listings."""
    if isinstance(cond, Always):
        return "always"
    if isinstance(cond, Textual):
        return cond.text
    return f"{cond.api}.{cond.variable} {cond.comparator} {json.dumps(cond.value)}"


# --------------------------------------------------------------------------
# Tools and output schemas
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Categorical:
    candidates: tuple
    variable: str = "result"

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("categorical schema needs at least one candidate")


@dataclass(frozen=True)
class Boolean:
    variable: str = "result"


@dataclass(frozen=True)
class Numerical:
    range: tuple[float, float] | None = None
    variable: str = "result"

    def __post_init__(self):
        if self.range is not None and self.range[0] > self.range[1]:
            raise ValueError(f"empty numerical range {self.range}")


@dataclass(frozen=True)
class Freeform:
    variable: str = "result"


OutputSchema = Union[Categorical, Boolean, Numerical, Freeform]


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str = "text"
    description: str = ""

    def __post_init__(self):
        if self.type not in PARAM_TYPES:
            raise ValueError(f"unknown parameter type {self.type!r}")


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str = ""
    params: tuple[ToolParam, ...] = ()
    output_schema: OutputSchema | None = None


# --------------------------------------------------------------------------
# Document tree
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeSpec:
    action_text: str
    condition: Condition = Always()
    tool: ToolSpec | None = None
    description: str | None = None
    label: str | None = None
    goto_labels: tuple[str, ...] = ()
    children: tuple["NodeSpec", ...] = ()
    # 1-based source line; not part of structural identity
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class SopDocument:
    roots: tuple[NodeSpec, ...]
    source_name: str = field(default="<string>", compare=False)


def iter_nodes(doc: SopDocument):
    """Yield ``(path, node)`` pairs in pre-order; paths are index tuples."""
    stack = [((i,), n) for i, n in reversed(list(enumerate(doc.roots)))]
    while stack:
        path, node = stack.pop()
        yield path, node
        for i in range(len(node.children) - 1, -1, -1):
            stack.append((path + (i,), node.children[i]))


class SopSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int, source: str = "<string>"):
        self.message = message
        self.line = line
        self.column = column
        self.source = source
        super().__init__(f"{source}:{line}:{column}: {message}")


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------


@dataclass
class _Line:
    number: int
    col: int
    text: str

    @property
    def is_item(self) -> bool:
        return self.text == "-" or self.text.startswith("- ")


def _tokenize(text: str, source: str) -> list[_Line]:
    out = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.rstrip()
        body = stripped.lstrip(" ")
        if not body or body.startswith("#"):
            continue
        indent = stripped[: len(stripped) - len(body)]
        if "\t" in body[:1] or "\t" in indent:
            raise SopSyntaxError("tab characters are not allowed in indentation", number, 1, source)
        out.append(_Line(number, len(indent) + 1, body))
    return out


class _Parser:
    def __init__(self, lines: list[_Line], source: str):
        self.lines = lines
        self.pos = 0
        self.source = source

    def error(self, message: str, line: _Line) -> SopSyntaxError:
        return SopSyntaxError(message, line.number, line.col, self.source)

    def peek(self) -> _Line | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def parse_list(self, col: int) -> list[NodeSpec]:
        items = []
        while True:
            line = self.peek()
            if line is None or line.col != col or not line.is_item:
                return items
            items.append(self.parse_item())

    def parse_item(self) -> NodeSpec:
        header = self.lines[self.pos]
        self.pos += 1
        key = _item_key(header, self)
        fields: dict[str, tuple[str, _Line]] = {}
        children: list[NodeSpec] = []

        first = self.peek()
        if first is None or first.is_item or first.col < header.col:
            return self.finish(header, key, fields, children)
        if first.col == header.col and first.text.split(":", 1)[0].strip() not in FIELDS:
            return self.finish(header, key, fields, children)
        field_col = first.col

        while True:
            line = self.peek()
            if line is None or line.col < field_col:
                break
            if line.is_item:
                if line.col == header.col:
                    break  # sibling of a node whose fields share its dash column
                raise self.error("list item must follow an 'Instructions:' field", line)
            if line.col > field_col:
                raise self.error("unexpected indentation", line)
            name, sep, value = line.text.partition(":")
            name = name.strip()
            if not sep:
                raise self.error(f"expected 'field: value', got {line.text!r}", line)
            if name not in FIELDS:
                raise self.error(f"unknown field {name!r}", line)
            if name in fields or (name == "Instructions" and children):
                raise self.error(f"duplicate field {name!r}", line)
            self.pos += 1
            if name == "Instructions":
                if value.strip():
                    raise self.error("'Instructions:' takes no inline value", line)
                fields[name] = ("", line)
                nxt = self.peek()
                if nxt is not None and nxt.is_item and nxt.col >= field_col:
                    children = self.parse_list(nxt.col)
                    after = self.peek()
                    if after is not None and after.col > field_col:
                        raise self.error("unexpected indentation", after)
            else:
                fields[name] = (value.strip(), line)
        return self.finish(header, key, fields, children)

    def finish(self, header: _Line, key: str, fields: dict, children: list) -> NodeSpec:
        if "condition" in fields and "condition_type" in fields:
            raise self.error("node has both 'condition' and 'condition_type'", fields["condition_type"][1])

        condition: Condition = Always()
        if "condition" in fields:
            condition = self.parse_condition(*fields["condition"])
        elif "condition_type" in fields:
            value, line = fields["condition_type"]
            kind = _unquote(value)
            if kind == "always":
                condition = Always()
            elif kind == "if":
                condition = Textual(key)
            else:
                raise self.error(f"condition_type must be 'always' or 'if', got {value!r}", line)

        tool = self.parse_api(*fields["API"]) if "API" in fields else None

        label = None
        if "label" in fields:
            value, line = fields["label"]
            label = _unquote(value)
            if not _IDENT.match(label):
                raise self.error(f"invalid label {value!r}", line)

        goto: tuple[str, ...] = ()
        if "goto" in fields:
            value, line = fields["goto"]
            parts = [p.strip() for p in value.split(",")]
            if not all(parts) or not all(_IDENT.match(p) for p in parts):
                raise self.error(f"malformed goto list {value!r}", line)
            if len(set(parts)) != len(parts):
                raise self.error(f"goto targets must be distinct: {value!r}", line)
            goto = tuple(parts)

        description = None
        if "Description" in fields:
            description = _unquote(fields["Description"][0])

        return NodeSpec(
            action_text=key,
            condition=condition,
            tool=tool,
            description=description,
            label=label,
            goto_labels=goto,
            children=tuple(children),
            line=header.number,
        )

    def parse_condition(self, value: str, line: _Line) -> Condition:
        if value.startswith("{"):
            mapping = self.load_mapping(value, line)
            missing = _STRUCTURED_KEYS - mapping.keys()
            extra = mapping.keys() - _STRUCTURED_KEYS
            if missing or extra:
                raise self.error(
                    f"malformed structured condition (missing {sorted(missing)}, unexpected {sorted(extra)})",
                    line,
                )
            comparator = mapping["condition_type"]
            if comparator not in COMPARATORS:
                raise self.error(f"unknown comparator {comparator!r}", line)
            val = mapping["value"]
            if not isinstance(val, (str, bool, int, float)):
                raise self.error(f"condition value must be text, bool or number, got {val!r}", line)
            if not isinstance(mapping["API"], str) or not isinstance(mapping["variable"], str):
                raise self.error("structured condition 'API' and 'variable' must be strings", line)
            return Structured(mapping["API"], mapping["variable"], comparator, val)
        text = _unquote(value)
        if not text:
            raise self.error("empty condition", line)
        if text == "always":
            return Always()
        return Textual(text)

    def parse_api(self, value: str, line: _Line) -> ToolSpec:
        if not value.startswith("{"):
            name = _unquote(value)
            if not _IDENT.match(name):
                raise self.error(f"invalid tool name {value!r}", line)
            return ToolSpec(name)
        mapping = self.load_mapping(value, line)
        extra = mapping.keys() - {"name", "description", "params"}
        if "name" not in mapping or extra:
            raise self.error("API mapping needs 'name' and allows only 'description' and 'params'", line)
        name = mapping["name"]
        if not isinstance(name, str) or not _IDENT.match(name):
            raise self.error(f"invalid tool name {name!r}", line)
        params = []
        for p in mapping.get("params", []):
            try:
                params.append(ToolParam(p["name"], p.get("type", "text"), p.get("description", "")))
            except (TypeError, KeyError, ValueError) as exc:
                raise self.error(f"malformed tool parameter {p!r}: {exc}", line) from None
        return ToolSpec(name, str(mapping.get("description", "")), tuple(params))

    def load_mapping(self, value: str, line: _Line) -> dict:
        try:
            mapping = json.loads(value)
        except json.JSONDecodeError as exc:
            raise SopSyntaxError(
                f"malformed inline mapping: {exc.msg}", line.number, line.col + exc.colno, self.source
            ) from None
        if not isinstance(mapping, dict):
            raise self.error("expected a brace mapping", line)
        return mapping


def _item_key(line: _Line, parser: _Parser) -> str:
    text = line.text[1:].strip()
    # "! ... !" highlight markers are presentation only
    if len(text) >= 2 and text.startswith("!") and text.endswith("!"):
        text = text[1:-1].strip()
    if not text:
        return ""
    if not text.endswith(":"):
        raise parser.error("node key must end with ':'", line)
    return text[:-1].strip()


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] == '"':
        try:
            return json.loads(value)
        except json.JSONDecodeError:
            return value[1:-1]
    return value


def parse_sop(text: str, source_name: str = "<string>") -> SopDocument:
    """Parse SOP source text into a document tree.

    Raises ``SopSyntaxError`` (with line and column) on malformed input,
    unknown field names and malformed structured conditions.
    """
    lines = _tokenize(text, source_name)
    if not lines:
        raise SopSyntaxError("document has no nodes", 1, 1, source_name)
    first = lines[0]
    if not first.is_item:
        raise SopSyntaxError("document must start with a list item", first.number, first.col, source_name)
    parser = _Parser(lines, source_name)
    roots = parser.parse_list(first.col)
    leftover = parser.peek()
    if leftover is not None:
        raise parser.error("unexpected line (inconsistent indentation?)", leftover)
    return SopDocument(tuple(roots), source_name)


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    subject: str
    path: str
    message: str

    def __str__(self):
        return f"{self.severity}: {self.code}({self.subject}) at node {self.path or '-'}: {self.message}"


def validate(doc: SopDocument) -> list[Diagnostic]:
    """Check document invariants; returns an empty list for a well-formed document."""
    diags: list[Diagnostic] = []
    if not doc.roots:
        diags.append(Diagnostic("error", "NoRoots", "", "", "document has no root node"))
        return diags

    nodes = list(iter_nodes(doc))
    labels: dict[str, str] = {}
    tool_names = {n.tool.name for _, n in nodes if n.tool is not None}

    for path, node in nodes:
        where = ".".join(map(str, path))
        if node.label is not None:
            if node.label in labels:
                diags.append(
                    Diagnostic(
                        "error", "DuplicateLabel", node.label, where,
                        f"label {node.label!r} already defined at node {labels[node.label]}",
                    )
                )
            else:
                labels[node.label] = where
        if not node.action_text and node.tool is None:
            diags.append(Diagnostic("error", "EmptyNode", "", where, "node has neither action text nor a tool"))
        cond = node.condition
        if isinstance(cond, Textual) and not cond.text.strip():
            diags.append(Diagnostic("error", "EmptyCondition", "", where, "conditional node has no condition text"))
        if isinstance(cond, Structured) and cond.api not in tool_names:
            diags.append(
                Diagnostic(
                    "error", "UnknownConditionTool", cond.api, where,
                    f"condition references tool {cond.api!r} that no node declares as API",
                )
            )

    for path, node in nodes:
        for target in node.goto_labels:
            if target not in labels:
                diags.append(
                    Diagnostic(
                        "error", "UnresolvedLabel", target, ".".join(map(str, path)),
                        f"goto target {target!r} is not defined",
                    )
                )
    return diags


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

_STEP = 4


def _dump(value) -> str:
    return json.dumps(value, ensure_ascii=False)


def _emit(node: NodeSpec, col: int, out: list[str]) -> None:
    pad = " " * col
    inner = " " * (col + _STEP)
    out.append(f"{pad}- {node.action_text}:" if node.action_text else f"{pad}-")

    cond = node.condition
    if isinstance(cond, Always):
        out.append(f'{inner}condition: "always"')
    elif isinstance(cond, Textual):
        if cond.text == node.action_text:
            out.append(f"{inner}condition_type: if")
        else:
            out.append(f"{inner}condition: {_dump(cond.text)}")
    else:
        mapping = {"API": cond.api, "variable": cond.variable, "condition_type": cond.comparator, "value": cond.value}
        out.append(f"{inner}condition: {_dump(mapping)}")

    if node.tool is not None:
        tool = node.tool
        if tool.description or tool.params:
            mapping = {"name": tool.name, "description": tool.description}
            if tool.params:
                mapping["params"] = [
                    {"name": p.name, "type": p.type, "description": p.description} for p in tool.params
                ]
            out.append(f"{inner}API: {_dump(mapping)}")
        else:
            out.append(f"{inner}API: {tool.name}")
    if node.description is not None:
        out.append(f"{inner}Description: {node.description}")
    if node.label is not None:
        out.append(f"{inner}label: {node.label}")
    if node.goto_labels:
        out.append(f"{inner}goto: {', '.join(node.goto_labels)}")
    if node.children:
        out.append(f"{inner}Instructions:")
        for child in node.children:
            _emit(child, col + _STEP, out)


def serialize(doc: SopDocument) -> str:
    """Canonical text for ``doc``; ``parse_sop(serialize(d)) == d``."""
    out: list[str] = []
    for root in doc.roots:
        _emit(root, 0, out)
    return "\n".join(out) + "\n"
