import pytest

from sop_agent import corpus
from sop_agent.graph import build_graph


@pytest.fixture(scope="session")
def refined_text():
    return corpus.sop_text("service_interruption_refined")


@pytest.fixture(scope="session")
def refined_graph():
    return build_graph(corpus.load_sop("service_interruption_refined"))


@pytest.fixture(scope="session")
def refined_case():
    return corpus.load_bundled_case("service_interruption_refined")


def node_by_text(graph, prefix):
    matches = [n for n in graph.nodes if n.action_text.startswith(prefix)]
    assert len(matches) == 1, (prefix, [m.action_text for m in matches])
    return matches[0]


def node_by_condition_value(graph, value):
    matches = [n for n in graph.nodes if getattr(n.condition, "value", None) == value]
    assert len(matches) == 1
    return matches[0]


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.VERDICTS:
            terminalreporter.write_line(line)
