import string

import pytest
from hypothesis import given, settings, strategies as st

from sop_agent import corpus
from sop_agent.sop_format import (
    Always,
    NodeSpec,
    SopDocument,
    SopSyntaxError,
    Structured,
    Textual,
    ToolParam,
    ToolSpec,
    iter_nodes,
    parse_sop,
    serialize,
    validate,
)

from oracles import goto_lists, scan_sop


@pytest.mark.parametrize("name", corpus.SOP_NAMES)
def test_corpus_parses_validates_and_round_trips(name):
    text = corpus.sop_text(name)
    doc = parse_sop(text, name)
    assert validate(doc) == []
    again = parse_sop(serialize(doc))
    assert again == doc
    assert serialize(again) == serialize(doc)

    items, tools = scan_sop(text)
    nodes = [n for _, n in iter_nodes(doc)]
    assert len(nodes) == len(items)
    assert {n.tool.name for n in nodes if n.tool} == tools
    assert [list(n.goto_labels) for n in nodes if n.goto_labels] == goto_lists(text)


def test_refined_listing_counts(refined_text):
    doc = parse_sop(refined_text)
    nodes = [n for _, n in iter_nodes(doc)]
    assert len(nodes) == 14
    assert sum(1 for n in nodes if not n.children) == 6
    assert len({n.tool.name for n in nodes if n.tool}) == 9


def test_minimal_document():
    doc = parse_sop('- greet:\n    condition: "always"')
    assert len(doc.roots) == 1
    root = doc.roots[0]
    assert root.action_text == "greet"
    assert root.condition == Always()
    assert root.tool is None
    assert serialize(doc) == '- greet:\n    condition: "always"\n'


def test_multi_target_goto():
    doc = corpus.load_sop("alfworld")
    gotos = [n.goto_labels for _, n in iter_nodes(doc) if n.goto_labels]
    assert ("l01", "l03", "l04") in gotos


def test_structured_condition_and_api_mapping(refined_text):
    doc = parse_sop(refined_text)
    auth = doc.roots[0].children[0]
    assert auth.tool == ToolSpec("authenticate_customer", "Confirm customer's identity and account details.")
    failed = auth.children[0]
    assert failed.condition == Structured("authenticate_customer", "authentication_status", "is", "failed")
    assert failed.tool is None


def test_bare_api_and_condition_type_if():
    doc = corpus.load_sop("alfworld")
    first = doc.roots[0].children[0]
    assert first.tool == ToolSpec("pick_and_place")
    assert first.condition == Textual(first.action_text)
    assert doc.roots[0].condition == Always()


def test_highlight_markers_are_stripped():
    doc = corpus.load_sop("service_interruption_crude")
    texts = [n.action_text for _, n in iter_nodes(doc)]
    assert any(t.startswith("if the line is operational") for t in texts)
    assert not any("!" in t for t in texts)


def test_root_fields_may_share_the_dash_column():
    text = "- a:\ncondition_type: always\nInstructions:\n- b:\n    API: x\n"
    doc = parse_sop(text)
    assert doc.roots[0].children[0].tool.name == "x"


def test_params_round_trip():
    text = (
        '- look up:\n'
        '    API: {"name": "search", "description": "Search", '
        '"params": [{"name": "q", "type": "text", "description": "query"}]}\n'
    )
    doc = parse_sop(text)
    assert doc.roots[0].tool.params == (ToolParam("q", "text", "query"),)
    assert parse_sop(serialize(doc)) == doc


@pytest.mark.parametrize(
    "text, fragment, line",
    [
        ("- a:\n    colour: red\n", "unknown field 'colour'", 2),
        ('- a:\n    condition: {"API": "x", "variable": "v", "value": 1}\n', "malformed structured condition", 2),
        ('- a:\n    condition: {"API": "x", "variable": "v", "condition_type": "near", "value": 1}\n', "comparator", 2),
        ("- a:\n    condition: {oops\n", "malformed inline mapping", 2),
        ("- a\n", "must end with ':'", 1),
        ("- a:\n\tAPI: x\n", "tab", 2),
        ("- a:\n    API: x\n        label: y\n", "unexpected indentation", 3),
        ("- a:\n    API: x\n    - b:\n", "Instructions", 3),
        ("- a:\n    goto: x, x\n", "distinct", 2),
        ("- a:\n    condition_type: maybe\n", "condition_type", 2),
        ("- a:\n    condition: always\n    condition_type: if\n", "both", 3),
        ("API: x\n", "list item", 1),
        ("", "no nodes", 1),
    ],
)
def test_syntax_errors_carry_position(text, fragment, line):
    with pytest.raises(SopSyntaxError) as info:
        parse_sop(text)
    assert fragment in info.value.message
    assert info.value.line == line
    assert info.value.column >= 1


def test_validate_unresolved_label():
    doc = parse_sop("- a:\n    goto: l99\n")
    diags = validate(doc)
    assert [(d.code, d.subject) for d in diags] == [("UnresolvedLabel", "l99")]


def test_validate_duplicate_label():
    doc = parse_sop("- a:\n    label: l03\n- b:\n    label: l03\n")
    assert [(d.code, d.subject) for d in validate(doc)] == [("DuplicateLabel", "l03")]


def test_validate_condition_tool_must_be_declared():
    doc = parse_sop('- a:\n    condition: {"API": "ghost", "variable": "v", "condition_type": "is", "value": 1}\n')
    assert [(d.code, d.subject) for d in validate(doc)] == [("UnknownConditionTool", "ghost")]


def test_validate_empty_node():
    doc = parse_sop("-\n    condition_type: always\n")
    assert [d.code for d in validate(doc)] == ["EmptyNode"]


def test_parse_is_deterministic(refined_text):
    assert parse_sop(refined_text) == parse_sop(refined_text)
    assert serialize(parse_sop(refined_text)) == serialize(parse_sop(refined_text))


# -- generated documents ----------------------------------------------------

_word = st.text(string.ascii_letters + string.digits + " ,.'()/_-", min_size=1, max_size=20).map(str.strip).filter(
    lambda s: s and not s.startswith(("!", "#", "-")) and not s.endswith("!")
)
_ident = st.from_regex(r"[a-z_][a-z0-9_]{0,8}", fullmatch=True)
_value = st.one_of(
    _word, st.booleans(), st.integers(-1000, 1000), st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
)
_tool = st.builds(
    ToolSpec,
    _ident,
    st.one_of(st.just(""), _word),
    st.lists(st.builds(ToolParam, _ident, st.sampled_from(["text", "bool", "number"]), _word), max_size=2).map(tuple),
)


@st.composite
def _node(draw, depth=0):
    action = draw(st.one_of(st.just(""), _word))
    kind = draw(st.sampled_from(["always", "if", "text", "structured"]))
    if kind == "always" or (kind == "if" and not action):
        cond = Always()
    elif kind == "if":
        cond = Textual(action)
    elif kind == "text":
        cond = Textual(draw(_word.filter(lambda s: s != "always")))
    else:
        cond = Structured(
            draw(_ident), draw(_ident), draw(st.sampled_from(["is", "is_not", "gt", "ge", "lt", "le"])), draw(_value)
        )
    children = ()
    if depth < 3:
        children = tuple(draw(st.lists(_node(depth + 1), max_size=3)))
    return NodeSpec(
        action_text=action,
        condition=cond,
        tool=draw(st.one_of(st.none(), _tool)),
        description=draw(st.one_of(st.none(), _word)),
        label=draw(st.one_of(st.none(), _ident)),
        goto_labels=tuple(draw(st.lists(_ident, max_size=3, unique=True))),
        children=children,
    )


@settings(max_examples=200, deadline=None)
@given(st.lists(_node(), min_size=1, max_size=3))
def test_round_trip_generated_documents(roots):
    doc = SopDocument(tuple(roots))
    assert parse_sop(serialize(doc)) == doc
