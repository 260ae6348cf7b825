import json

import pytest

import expected as ex
from conftest import fixture_text
from fwsynth.analysis import HTTP, analyze
from fwsynth.ipspace import parse_ip_expr
from fwsynth.iptables import parse_save
from fwsynth.policy import Violation, graph_from_edges
from fwsynth.serializers import (
    Concrete,
    EntityBinding,
    SerializationError,
    to_dfwfw,
    to_dot,
    to_iptables,
)
from fwsynth.synthesis import make_stateful, synthesize_policy


def rule_lines(text: str) -> list[str]:
    return [line for line in text.splitlines() if line.startswith(("-A", "-I"))]


@pytest.fixture
def maximal_stateful(scenario):
    return make_stateful(synthesize_policy(scenario), scenario)


def test_variable_bindings(maximal_stateful, scenario_file):
    text = to_iptables(maximal_stateful, scenario_file.entity_binding(variables=True))
    assert rule_lines(text) == ex.VARIABLE_RULES
    assert text.startswith("*filter\n:INPUT ACCEPT [0:0]\n:FORWARD DROP [0:0]\n")
    assert text.endswith("COMMIT\n")


def test_concrete_bindings(maximal_stateful, scenario_file):
    text = to_iptables(maximal_stateful, scenario_file.entity_binding(), scenario_file.universe())
    lines = rule_lines(text)
    assert lines[3] == ex.IPRANGE_RULE
    assert ex.EXTERNAL_SELF_RULE in lines
    assert text == fixture_text("fresh.save")
    # every emitted rule loads again
    parse_save(text)


def test_concrete_output_analyzes_to_scaled_matrix(maximal_stateful, scenario_file, ipassmt):
    rs = parse_save(to_iptables(maximal_stateful, scenario_file.entity_binding(), scenario_file.universe()))
    m = analyze(rs, "FORWARD", ipassmt, HTTP)
    assert m.labelled_edges() == ex.FRESH_HTTP


def test_binding_errors(maximal_stateful, scenario_file):
    partial = EntityBinding({"WebFrnt": Concrete(parse_ip_expr("10.0.0.1"), "dockerbr")}, "INET")
    with pytest.raises(SerializationError, match="no binding"):
        to_iptables(maximal_stateful, partial, parse_ip_expr("10.0.0.0/8"))
    with pytest.raises(SerializationError, match="universe"):
        to_iptables(maximal_stateful, scenario_file.entity_binding(), None)


def test_dfwfw(scenario, scenario_file):
    g = synthesize_policy(scenario)
    with pytest.warns(UserWarning, match="external"):
        doc = json.loads(to_dfwfw(g, scenario_file.dfwfw_binding()))
    rules = doc["container_to_container"]["rules"]
    assert rules[:2] == ex.DFWFW_HEAD
    internal = [e for e in g.sorted_edges() if "INET" not in e]
    assert len(rules) == len(internal)


def test_dot_policy_and_matrix(scenario, edges_of, ruleset, ipassmt):
    g = edges_of("log_to_frontend.edges")
    dot = to_dot(g, highlight=[Violation(2, ("Log", "WebFrnt"))])
    assert '"Log" -> "WebFrnt" [style=dotted, color=red];' in dot
    assert dot.startswith("digraph policy {")
    sp = make_stateful(edges_of("refined.edges"), scenario)
    dot = to_dot(sp)
    assert '"INET" -> "WebApp" [style=dashed, color=orange];' in dot
    m = analyze(ruleset("docker_initial.save"), "FORWARD", ipassmt, HTTP)
    dot = to_dot(m)
    assert dot.count("->") == 19
    assert '"{10.0.0.4}"' in dot
    assert to_dot(m) == dot
    with pytest.raises(TypeError):
        to_dot(42)


def test_dot_quotes_names():
    g = graph_from_edges(['a"b'], [('a"b', 'a"b')])
    assert '"a\\"b" -> "a\\"b";' in to_dot(g)
