"""Executable decision graph built from a parsed SOP document."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from types import MappingProxyType
from typing import Mapping

from .sop_format import Condition, NodeSpec, SopDocument, Structured, ToolSpec

__all__ = [
    "DecisionNode",
    "DecisionGraph",
    "GraphStats",
    "GraphBuildError",
    "UnknownNode",
    "build_graph",
    "successors",
    "leaf_count_below",
    "compute_stats",
    "STAT_ROWS",
]


class GraphBuildError(ValueError):
    pass


class UnknownNode(KeyError):
    pass


@dataclass(frozen=True)
class DecisionNode:
    id: int
    action_text: str
    condition: Condition
    tool: str | None
    child_ids: tuple[int, ...]
    goto_ids: tuple[int, ...]
    is_workflow_root: bool = False
    label: str | None = None
    path: str = ""

    @property
    def executable_tool(self) -> str | None:
        """Tool actually called on entering the node (workflow identifiers are not called)."""
        return None if self.is_workflow_root else self.tool


@dataclass(frozen=True)
class DecisionGraph:
    nodes: tuple[DecisionNode, ...]
    roots: tuple[int, ...]
    labels: Mapping[str, int]
    tool_registry: Mapping[str, ToolSpec]
    leaf_counts: tuple[int, ...]
    name: str = "<graph>"

    def __getitem__(self, node_id: int) -> DecisionNode:
        if not isinstance(node_id, int) or not 0 <= node_id < len(self.nodes):
            raise UnknownNode(node_id)
        return self.nodes[node_id]

    def __len__(self):
        return len(self.nodes)

    @property
    def has_goto(self) -> bool:
        return any(n.goto_ids for n in self.nodes)


def _merge_tool(registry: dict[str, ToolSpec], tool: ToolSpec) -> None:
    have = registry.get(tool.name)
    if have is None:
        registry[tool.name] = tool
        return
    if tool.description and have.description and tool.description != have.description:
        raise GraphBuildError(
            f"tool {tool.name!r} declared with conflicting descriptions: "
            f"{have.description!r} vs {tool.description!r}"
        )
    if tool.params and have.params and tool.params != have.params:
        raise GraphBuildError(f"tool {tool.name!r} declared with conflicting parameters")
    registry[tool.name] = replace(
        have,
        description=have.description or tool.description,
        params=have.params or tool.params,
    )


def build_graph(doc: SopDocument) -> DecisionGraph:
    """Flatten ``doc`` into an immutable graph with resolved goto edges.

    Node ids are pre-order indices.  A root whose API carries a description
    (the brace-mapping form) names the workflow and is never executed.
    """
    specs: list[tuple[NodeSpec, str, list[int], bool]] = []
    labels: dict[str, int] = {}
    registry: dict[str, ToolSpec] = {}
    roots: list[int] = []

    def visit(spec: NodeSpec, path: str, is_root: bool) -> int:
        node_id = len(specs)
        entry = (spec, path, [], is_root)
        specs.append(entry)
        if spec.label is not None:
            if spec.label in labels:
                raise GraphBuildError(f"duplicate label {spec.label!r}")
            labels[spec.label] = node_id
        if spec.tool is not None:
            _merge_tool(registry, spec.tool)
        for i, child in enumerate(spec.children):
            entry[2].append(visit(child, f"{path}.{i}", False))
        return node_id

    for i, root in enumerate(doc.roots):
        roots.append(visit(root, str(i), True))
    if not roots:
        raise GraphBuildError("document has no root node")

    for spec, _, _, _ in specs:
        cond = spec.condition
        if isinstance(cond, Structured) and cond.api not in registry:
            registry[cond.api] = ToolSpec(cond.api)

    nodes = []
    for node_id, (spec, path, child_ids, is_root) in enumerate(specs):
        goto_ids = []
        for target in spec.goto_labels:
            if target not in labels:
                raise GraphBuildError(f"unresolved goto label {target!r} at node {path}")
            tid = labels[target]
            if tid in child_ids or tid in goto_ids:
                warnings.warn(f"node {path}: goto {target!r} duplicates an existing edge; dropped", stacklevel=2)
                continue
            goto_ids.append(tid)
        workflow = is_root and spec.tool is not None and bool(spec.tool.description)
        nodes.append(
            DecisionNode(
                id=node_id,
                action_text=spec.action_text,
                condition=spec.condition,
                tool=spec.tool.name if spec.tool is not None else None,
                child_ids=tuple(child_ids),
                goto_ids=tuple(goto_ids),
                is_workflow_root=workflow,
                label=spec.label,
                path=path,
            )
        )

    leaf_counts = [0] * len(nodes)
    # children always have larger pre-order ids than their parent
    for node in reversed(nodes):
        leaf_counts[node.id] = sum(leaf_counts[c] for c in node.child_ids) if node.child_ids else 1

    return DecisionGraph(
        nodes=tuple(nodes),
        roots=tuple(roots),
        labels=MappingProxyType(dict(labels)),
        tool_registry=MappingProxyType(dict(sorted(registry.items()))),
        leaf_counts=tuple(leaf_counts),
        name=doc.source_name,
    )


def successors(graph: DecisionGraph, node_id: int) -> list[DecisionNode]:
    """Child targets followed by goto targets, in listing order."""
    node = graph[node_id]
    return [graph.nodes[i] for i in node.child_ids + node.goto_ids]


def leaf_count_below(graph: DecisionGraph, node_id: int) -> int:
    """Leaves in the child-edge subtree of ``node_id`` (a leaf counts itself)."""
    graph[node_id]
    # walk rather than trusting the cache, so cycles in hand-made graphs are caught
    count = 0
    seen = set()
    stack = [node_id]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise GraphBuildError(f"cycle through child edges at node {nid}")
        seen.add(nid)
        node = graph.nodes[nid]
        if node.child_ids:
            stack.extend(node.child_ids)
        else:
            count += 1
    return count


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    leaf_count: int
    non_leaf_count: int
    max_depth: int
    avg_leaf_depth: float
    avg_children_per_non_leaf: float
    unique_tool_count: int


# row names as they appear in the dataset statistics table
STAT_ROWS = (
    ("Average Maximum Depth", "max_depth"),
    ("Number of Leaf Nodes", "leaf_count"),
    ("Number of Nodes", "node_count"),
    ("Number of Non-Leaf Nodes", "non_leaf_count"),
    ("Average Children per Node", "avg_children_per_non_leaf"),
    ("Average Leaf Depth", "avg_leaf_depth"),
    ("Number of Unique APIs", "unique_tool_count"),
)


def compute_stats(graph: DecisionGraph) -> GraphStats:
    """Tree statistics over child edges; roots have depth 0."""
    depth = {}
    for root in graph.roots:
        stack = [(root, 0)]
        while stack:
            nid, d = stack.pop()
            depth[nid] = d
            stack.extend((c, d + 1) for c in graph.nodes[nid].child_ids)

    leaves = [n for n in graph.nodes if not n.child_ids]
    non_leaves = [n for n in graph.nodes if n.child_ids]
    child_edges = sum(len(n.child_ids) for n in non_leaves)
    return GraphStats(
        node_count=len(graph.nodes),
        leaf_count=len(leaves),
        non_leaf_count=len(non_leaves),
        max_depth=max(depth.values()),
        avg_leaf_depth=sum(depth[n.id] for n in leaves) / len(leaves),
        avg_children_per_non_leaf=child_edges / len(non_leaves) if non_leaves else 0.0,
        unique_tool_count=len(graph.tool_registry),
    )
