"""Readers for the scenario, policy-edge and ipassmt files.

Scenario (JSON)::

    {
      "entities": ["WebFrnt", "DB", "Log", "WebApp", "INET"],
      "invariants": [
        {"template": "subnets", "attrs": {"DB": "internal", "WebFrnt": "DMZ"}},
        {"template": "sink", "attrs": {"Log": "sink"}},
        {"template": "blp", "attrs": {"DB": "confidential", "WebApp": "declassify"}},
        {"template": "acl", "attrs": {"DB": ["WebApp"]}}
      ],
      "bindings": {
        "external": "INET", "bridge": "dockerbr", "internal_universe": "10.0.0.0/8",
        "entities": {"WebFrnt": "10.0.0.1,10.0.0.42", "DB": "10.0.0.3"}
      },
      "dfwfw": {"network": "appnet", "patterns": {"WebFrnt": "^webfrnt-?\\\\d*$"}}
    }

Policy edge files hold one ``src -> dst`` per line.  Ipassmt files hold one
``iface = ip-expr`` per line.  ``#`` starts a comment in both.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Mapping

from .invariants import InvariantInstance, Kind
from .ipspace import IpIntervalSet, parse_ip_expr
from .policy import Edge, PolicyGraph, graph_from_edges
from .serializers import Concrete, DfwfwBinding, EntityBinding, Variable
from .synthesis import Scenario

__all__ = [
    "FormatError",
    "ScenarioFile",
    "load_scenario",
    "parse_scenario",
    "parse_edges",
    "format_edges",
    "parse_ipassmt",
]


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioFile:
    scenario: Scenario
    bindings: Mapping[str, Any] | None = None
    dfwfw: Mapping[str, Any] | None = None

    def universe(self) -> IpIntervalSet | None:
        text = (self.bindings or {}).get("internal_universe")
        return parse_ip_expr(text) if text else None

    def entity_binding(self, variables: bool = False) -> EntityBinding:
        b = self.bindings or {}
        external = b.get("external")
        bridge = b.get("bridge", "dockerbr")
        if variables:
            return EntityBinding.variables(self.scenario.entities, external, bridge)
        out: dict[str, Concrete | Variable] = {}
        for name, value in (b.get("entities") or {}).items():
            if name not in self.scenario.entities:
                raise FormatError(f"binding for unknown entity {name!r}")
            if isinstance(value, str):
                out[name] = Concrete(parse_ip_expr(value), bridge)
            elif isinstance(value, Mapping) and "ip_var" in value:
                out[name] = Variable(value["ip_var"], value.get("iface_var", bridge))
            elif isinstance(value, Mapping) and "ips" in value:
                out[name] = Concrete(parse_ip_expr(value["ips"]), value.get("iface", bridge))
            else:
                raise FormatError(f"bad binding for {name!r}: {value!r}")
        return EntityBinding(out, external, bridge)

    def dfwfw_binding(self) -> DfwfwBinding:
        if not self.dfwfw:
            raise FormatError("scenario has no 'dfwfw' section")
        ext = (self.bindings or {}).get("external")
        try:
            return DfwfwBinding(self.dfwfw["network"], dict(self.dfwfw["patterns"]), ext)
        except KeyError as exc:
            raise FormatError(f"dfwfw section lacks {exc}") from None


def parse_scenario(doc: Mapping[str, Any]) -> ScenarioFile:
    if not isinstance(doc, Mapping) or "entities" not in doc:
        raise FormatError("scenario must be an object with an 'entities' list")
    entities = doc["entities"]
    if not isinstance(entities, list) or not all(isinstance(e, str) for e in entities):
        raise FormatError("'entities' must be a list of names")
    invariants = []
    for i, entry in enumerate(doc.get("invariants", []), 1):
        if not isinstance(entry, Mapping) or "template" not in entry:
            raise FormatError(f"invariant {i} needs a 'template'")
        try:
            kind = Kind(str(entry["template"]).lower())
        except ValueError:
            names = ", ".join(k.value for k in Kind)
            raise FormatError(f"invariant {i}: unknown template {entry['template']!r} (known: {names})") from None
        try:
            invariants.append(InvariantInstance(kind, entry.get("attrs", {})))
        except ValueError as exc:
            raise FormatError(f"invariant {i}: {exc}") from None
    try:
        scenario = Scenario(tuple(entities), tuple(invariants))
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return ScenarioFile(scenario, doc.get("bindings"), doc.get("dfwfw"))


def load_scenario(text: str) -> ScenarioFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"scenario is not valid JSON: {exc}") from None
    return parse_scenario(doc)


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_edges(text: str, nodes) -> PolicyGraph:
    edges: list[Edge] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line:
            continue
        src, sep, dst = line.partition("->")
        if not sep or not src.strip() or not dst.strip():
            raise FormatError(f"line {lineno}: expected 'src -> dst', got {raw!r}")
        edges.append((src.strip(), dst.strip()))
    return graph_from_edges(nodes, edges)


def format_edges(g: PolicyGraph, edges=None) -> str:
    return "".join(f"{s} -> {d}\n" for s, d in g.sorted_edges(edges))


def parse_ipassmt(text: str) -> dict[str, IpIntervalSet]:
    out: dict[str, IpIntervalSet] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line:
            continue
        iface, sep, expr = line.partition("=")
        if not sep or not iface.strip():
            raise FormatError(f"line {lineno}: expected 'iface = ip-expr'")
        try:
            ips = parse_ip_expr(expr.strip())
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        name = iface.strip()
        out[name] = out[name] | ips if name in out else ips
    return out
