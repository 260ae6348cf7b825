"""Policy graphs over symbolic entities, stateful policies and violation records."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable

Edge = tuple[str, str]

__all__ = [
    "Edge",
    "PolicyError",
    "PolicyGraph",
    "StatefulPolicy",
    "Violation",
    "graph_from_edges",
    "remove_edge",
    "add_edge",
]


class PolicyError(ValueError):
    pass


def _ordered_nodes(nodes: Iterable[str]) -> tuple[str, ...]:
    # unordered containers get lexicographic order, sequences keep declaration order
    if isinstance(nodes, (set, frozenset)):
        seq = sorted(nodes)
    else:
        seq = list(nodes)
    seen: dict[str, None] = {}
    for n in seq:
        if not isinstance(n, str) or not n.strip() or n != n.strip() or " " in n:
            raise PolicyError(f"invalid entity name {n!r}")
        seen.setdefault(n, None)
    return tuple(seen)


@dataclass(frozen=True, eq=False)
class PolicyGraph:
    """Directed graph; an edge ``(s, d)`` means *s may initiate communication with d*.

    ``nodes`` keeps a display order which every listing and serializer follows.
    Equality ignores that order.
    """

    nodes: tuple[str, ...]
    edges: frozenset[Edge]

    def __post_init__(self):
        known = set(self.nodes)
        for s, d in self.edges:
            for end in (s, d):
                if end not in known:
                    raise PolicyError(f"unknown entity {end!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyGraph):
            return NotImplemented
        return set(self.nodes) == set(other.nodes) and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((frozenset(self.nodes), self.edges))

    def rank(self, entity: str) -> int:
        return self.nodes.index(entity)

    def sorted_edges(self, edges: Iterable[Edge] | None = None) -> list[Edge]:
        order = {n: i for i, n in enumerate(self.nodes)}
        return sorted(self.edges if edges is None else edges, key=lambda e: (order[e[0]], order[e[1]]))

    def has_edge(self, s: str, d: str) -> bool:
        return (s, d) in self.edges


def graph_from_edges(nodes: Iterable[str], edges: Iterable[Edge]) -> PolicyGraph:
    ordered = _ordered_nodes(nodes)
    return PolicyGraph(ordered, frozenset((s, d) for s, d in edges))


def remove_edge(g: PolicyGraph, e: Edge) -> PolicyGraph:
    """Drop one edge; an absent edge leaves the graph unchanged and warns."""
    if e not in g.edges:
        warnings.warn(f"edge {e[0]} -> {e[1]} not in policy; nothing removed", stacklevel=2)
        return g
    return PolicyGraph(g.nodes, g.edges - {e})


def add_edge(g: PolicyGraph, e: Edge) -> PolicyGraph:
    return PolicyGraph(g.nodes, g.edges | {e})


@dataclass(frozen=True)
class StatefulPolicy:
    """A policy plus *answer edges*: base edges whose reply packets may flow back."""

    base: PolicyGraph
    answer_edges: frozenset[Edge] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "answer_edges", frozenset(self.answer_edges))
        for s, d in self.answer_edges:
            if (s, d) not in self.base.edges:
                raise PolicyError(f"answer edge {s} -> {d} has no base edge")
            if (d, s) in self.base.edges:
                raise PolicyError(f"answer edge {s} -> {d} is already bidirectional in the base policy")


@dataclass(frozen=True, order=True)
class Violation:
    invariant_index: int  # 1-based position in the scenario
    edge: Edge

    def __str__(self) -> str:
        return f"invariant {self.invariant_index}: {self.edge[0]} -> {self.edge[1]}"
