"""Security policy synthesis and iptables analysis for container networks."""
from .analysis import (
    HTTP,
    SSH,
    Service,
    ServiceMatrix,
    analyze,
    matrix_diff,
    matrix_policy_compare,
    service_matrix,
    simple_firewall,
    stateful_overview,
)
from .formats import load_scenario, parse_edges, parse_ipassmt
from .invariants import InvariantInstance, Kind
from .ipspace import IpIntervalSet, parse_ip_expr
from .iptables import parse_save, render_save
from .policy import PolicyGraph, StatefulPolicy, Violation, graph_from_edges
from .serializers import EntityBinding, to_dfwfw, to_dot, to_iptables
from .synthesis import Scenario, make_stateful, synthesize_policy, verify_policy

__all__ = [
    "HTTP",
    "SSH",
    "EntityBinding",
    "InvariantInstance",
    "IpIntervalSet",
    "Kind",
    "PolicyGraph",
    "Scenario",
    "Service",
    "ServiceMatrix",
    "StatefulPolicy",
    "Violation",
    "analyze",
    "graph_from_edges",
    "load_scenario",
    "make_stateful",
    "matrix_diff",
    "matrix_policy_compare",
    "parse_edges",
    "parse_ip_expr",
    "parse_ipassmt",
    "parse_save",
    "render_save",
    "service_matrix",
    "simple_firewall",
    "stateful_overview",
    "synthesize_policy",
    "to_dfwfw",
    "to_dot",
    "to_iptables",
    "verify_policy",
]
