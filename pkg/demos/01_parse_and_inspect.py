"""
Parsing an SOP and looking at its decision graph
=================================================

A standard operating procedure is written as an indented list.  Each item is
a step; its fields bind a tool, state when the step applies, and nest further
steps under ``Instructions``.  This walk-through parses the bundled customer
service procedure and prints what the engine will see.
"""

from sop_agent import corpus
from sop_agent.graph import STAT_ROWS, build_graph, compute_stats, leaf_count_below, successors
from sop_agent.sop_format import condition_text, parse_sop, serialize, validate

text = corpus.sop_text("service_interruption_refined")
print(text)

# %%
# Parsing gives a plain document tree.  ``validate`` returns an empty list
# when labels, conditions and tool references are consistent.

doc = parse_sop(text, "service_interruption_refined.sop")
print("diagnostics:", validate(doc))

# %%
# The text form is canonical: serializing and parsing again gives the same tree.

assert parse_sop(serialize(doc)) == doc

# %%
# The decision graph numbers the nodes in listing order.  The root names the
# workflow and is never called itself.

graph = build_graph(doc)
for node in graph.nodes:
    indent = "  " * node.path.count(".")
    tool = node.tool or "-"
    print(f"{node.id:2d} {indent}[{tool}] if {condition_text(node.condition)}")

# %%
# Successors are the candidate next steps.  Leaf counts drive the benchmark
# sampler: a branch with more leaves below it is visited more often.

root = graph.roots[0]
print("successors of the root:", [n.action_text[:40] for n in successors(graph, root)])
print("leaves below the root:", leaf_count_below(graph, root))

stats = compute_stats(graph)
for row, attr in STAT_ROWS:
    value = getattr(stats, attr)
    print(f"{row}: {value:.2f}" if isinstance(value, float) else f"{row}: {value}")

# %%
# Loops are written with labels and ``goto``.  The code generation procedure
# retries until its tests pass, which shows up as a cycle through the label.

loop = build_graph(corpus.load_sop("code_generation"))
start = loop.labels["retry_loop_start"]
jumper = next(n for n in loop.nodes if start in n.goto_ids)
print(f"node {jumper.id} jumps back to node {start}: {loop[start].action_text[:60]}...")
