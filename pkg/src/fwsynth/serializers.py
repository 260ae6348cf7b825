"""Backends: iptables rules, DFWFW configuration and Graphviz DOT."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .analysis import ServiceMatrix
from .ipspace import IpIntervalSet, ip_to_str
from .policy import PolicyGraph, StatefulPolicy, Violation

__all__ = [
    "Concrete",
    "Variable",
    "EntityBinding",
    "DfwfwBinding",
    "SerializationError",
    "to_iptables",
    "to_dfwfw",
    "to_dot",
]


class SerializationError(ValueError):
    pass


@dataclass(frozen=True)
class Concrete:
    ips: IpIntervalSet
    iface: str


@dataclass(frozen=True)
class Variable:
    """Placeholders filled in by the operator, e.g. ``$WebFrnt_ip``."""

    ip_var: str
    iface_var: str


@dataclass(frozen=True)
class EntityBinding:
    """Where each entity lives.

    The ``external`` entity stands for everything outside the internal
    network.  With a concrete binding it needs no entry of its own: it is
    written as the negation of the bridge interface and the internal address
    universe.
    """

    entities: Mapping[str, Union[Concrete, Variable]] = field(default_factory=dict)
    external: str | None = None
    bridge: str = "dockerbr"

    @classmethod
    def variables(cls, entities: Iterable[str], external: str | None, bridge: str = "dockerbr") -> EntityBinding:
        out = {}
        for e in entities:
            iface = f"${e}_iface" if e == external else bridge
            out[e] = Variable(f"${e}_ip", iface)
        return cls(out, external, bridge)

    def addresses(self, universe: IpIntervalSet) -> dict[str, IpIntervalSet]:
        """Address set per entity, the external one being the complement of ``universe``."""
        out = {}
        for e, b in self.entities.items():
            if isinstance(b, Concrete) and e != self.external:
                out[e] = b.ips
        if self.external is not None:
            out[self.external] = ~universe
        return out


@dataclass(frozen=True)
class DfwfwBinding:
    network: str
    patterns: Mapping[str, str]
    external: str | None = None


def _single_range(universe: IpIntervalSet) -> tuple[str, str]:
    if len(universe.intervals) != 1:
        raise SerializationError("the internal universe must be one contiguous range")
    lo, hi = universe.intervals[0]
    return ip_to_str(lo), ip_to_str(hi)


@dataclass
class _Endpoint:
    iface: str
    addr: str | None  # None: negated universe
    multi: bool = False


def _endpoint(entity: str, b: EntityBinding, universe: IpIntervalSet | None) -> _Endpoint:
    if entity == b.external and not isinstance(b.entities.get(entity), Variable):
        if universe is None:
            raise SerializationError("an internal universe is needed to express the external entity")
        return _Endpoint(f"! {b.bridge}", None)
    if entity not in b.entities:
        raise SerializationError(f"entity {entity!r} has no binding")
    binding = b.entities[entity]
    if isinstance(binding, Variable):
        return _Endpoint(binding.iface_var, binding.ip_var)
    if binding.ips.is_empty():
        raise SerializationError(f"entity {entity!r} is bound to no address")
    addr = binding.ips.iptables_list()
    return _Endpoint(binding.iface, addr, "," in addr)


def _negated_universe(flag: str, range_flag: str, universe: IpIntervalSet, use_range: bool) -> str:
    cidrs = universe.cidrs()
    if not use_range and len(cidrs) == 1:
        return f"! {flag} {universe.iptables_list()}"
    lo, hi = _single_range(universe)
    return f"-m iprange ! {range_flag} {lo}-{hi}"


def _rule_body(src: _Endpoint, dst: _Endpoint, universe: IpIntervalSet | None) -> str:
    # iptables rejects "! -s/-d" next to a multi-address list: use iprange then
    multi = src.multi or dst.multi
    parts = [f"-i {src.iface}" if not src.iface.startswith("! ") else f"! -i {src.iface[2:]}"]
    parts.append(f"-s {src.addr}" if src.addr is not None else _negated_universe("-s", "--src-range", universe, multi))
    parts.append(f"-o {dst.iface}" if not dst.iface.startswith("! ") else f"! -o {dst.iface[2:]}")
    parts.append(f"-d {dst.addr}" if dst.addr is not None else _negated_universe("-d", "--dst-range", universe, multi))
    return " ".join(parts)


def to_iptables(sp: StatefulPolicy, b: EntityBinding, internal_universe: IpIntervalSet | None = None) -> str:
    """Whitelisting FORWARD chain: one ACCEPT per policy edge, one ESTABLISHED rule per answer edge."""
    g = sp.base
    for e in g.nodes:
        if e != b.external and e not in b.entities:
            raise SerializationError(f"entity {e!r} has no binding")
        binding = b.entities.get(e)
        if e != b.external and isinstance(binding, Concrete) and binding.iface != b.bridge:
            raise SerializationError(f"entity {e!r} must sit on the bridge {b.bridge!r}")
    ends = {e: _endpoint(e, b, internal_universe) for e in g.nodes}
    lines = ["*filter", ":INPUT ACCEPT [0:0]", ":FORWARD DROP [0:0]", ":OUTPUT ACCEPT [0:0]"]
    for s, d in g.sorted_edges():
        lines.append(f"-A FORWARD {_rule_body(ends[s], ends[d], internal_universe)} -j ACCEPT")
    for s, d in g.sorted_edges(sp.answer_edges):
        # reply packets travel from the destination back to the initiator
        body = _rule_body(ends[d], ends[s], internal_universe)
        lines.append(f"-I FORWARD -m state --state ESTABLISHED {body} -j ACCEPT")
    lines.append("COMMIT")
    return "\n".join(lines) + "\n"


def to_dfwfw(g: PolicyGraph, b: DfwfwBinding) -> str:
    rules = []
    for s, d in g.sorted_edges():
        if b.external is not None and b.external in (s, d):
            warnings.warn(f"edge {s} -> {d} involves the external entity; not expressible in DFWFW", stacklevel=2)
            continue
        for e in (s, d):
            if e not in b.patterns:
                raise SerializationError(f"entity {e!r} has no container name pattern")
        rules.append(
            {
                "network": b.network,
                "src_container": f"Name =~ {b.patterns[s]}",
                "dst_container": f"Name =~ {b.patterns[d]}",
                "filter": "",
                "action": "ACCEPT",
            }
        )
    return json.dumps({"container_to_container": {"rules": rules}}, indent=2) + "\n"


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(obj, highlight: Iterable[Violation] = (), name: str = "policy") -> str:
    """Render a policy, stateful policy or service matrix.

    Answer edges are dashed; highlighted violations are dotted and red.
    """
    flagged = {v.edge if isinstance(v, Violation) else tuple(v) for v in highlight}
    lines = [f"digraph {name} {{", "  node [shape=box];"]
    if isinstance(obj, ServiceMatrix):
        for i, label in enumerate(obj.labels()):
            lines.append(f"  c{i} [label={_quote(label)}];")
        for a, b in obj.sorted_edges():
            style = ' [style=dotted, color=red]' if (a, b) in flagged else ""
            lines.append(f"  c{a} -> c{b}{style};")
        for a, b in obj.sorted_edges(obj.answer_edges):
            lines.append(f"  c{a} -> c{b} [style=dashed, color=orange];")
    else:
        if isinstance(obj, StatefulPolicy):
            g, answers = obj.base, obj.answer_edges
        elif isinstance(obj, PolicyGraph):
            g, answers = obj, frozenset()
        else:
            raise TypeError(f"cannot render {type(obj).__name__} as DOT")
        for n in g.nodes:
            lines.append(f"  {_quote(n)};")
        for s, d in g.sorted_edges():
            style = " [style=dotted, color=red]" if (s, d) in flagged else ""
            lines.append(f"  {_quote(s)} -> {_quote(d)}{style};")
        for s, d in g.sorted_edges(answers):
            lines.append(f"  {_quote(d)} -> {_quote(s)} [style=dashed, color=orange];")
    lines.append("}")
    return "\n".join(lines) + "\n"
