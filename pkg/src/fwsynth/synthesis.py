"""Policy construction, re-verification and stateful policy computation."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

from .invariants import Category, InvariantInstance, eval_edge, offenders
from .policy import PolicyError, PolicyGraph, StatefulPolicy, Violation, _ordered_nodes

__all__ = [
    "Scenario",
    "ScenarioMismatch",
    "NotCompliant",
    "synthesize_policy",
    "verify_policy",
    "make_stateful",
]


class ScenarioMismatch(PolicyError):
    def __init__(self, missing: set[str], extra: set[str]):
        parts = []
        if missing:
            parts.append("missing entities: " + ", ".join(sorted(missing)))
        if extra:
            parts.append("extra entities: " + ", ".join(sorted(extra)))
        super().__init__("policy does not match scenario (" + "; ".join(parts) + ")")
        self.missing = missing
        self.extra = extra


class NotCompliant(PolicyError):
    def __init__(self, violations: Iterable[Violation]):
        self.violations = sorted(violations)
        super().__init__(
            "policy violates the security invariants: " + "; ".join(str(v) for v in self.violations)
        )


@dataclass(frozen=True)
class Scenario:
    entities: tuple[str, ...]
    invariants: tuple[InvariantInstance, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entities", _ordered_nodes(self.entities))
        object.__setattr__(self, "invariants", tuple(self.invariants))
        known = set(self.entities)
        for i, inv in enumerate(self.invariants, 1):
            unknown = inv.entities() - known
            if unknown:
                raise PolicyError(f"invariant {i} ({inv.kind.value}) names unknown entities: {sorted(unknown)}")

    def allowed(self, s: str, d: str, categories: Sequence[Category] | None = None) -> bool:
        return all(
            eval_edge(inv, s, d)
            for inv in self.invariants
            if categories is None or inv.category in categories
        )


def synthesize_policy(sc: Scenario) -> PolicyGraph:
    """The maximal policy: every self-loop plus every edge no invariant forbids."""
    edges = {
        (s, d)
        for s, d in product(sc.entities, repeat=2)
        if s == d or sc.allowed(s, d)
    }
    return PolicyGraph(sc.entities, frozenset(edges))


def verify_policy(g: PolicyGraph, sc: Scenario) -> frozenset[Violation]:
    nodes, wanted = set(g.nodes), set(sc.entities)
    if nodes != wanted:
        raise ScenarioMismatch(wanted - nodes, nodes - wanted)
    found: set[Violation] = set()
    for i, inv in enumerate(sc.invariants, 1):
        found |= offenders(inv, g, i)
    return frozenset(found)


def make_stateful(g: PolicyGraph, sc: Scenario) -> StatefulPolicy:
    """Mark the edges whose reply traffic may flow back.

    Only edges without a reverse edge qualify.  Reply traffic must satisfy the
    information-flow invariants in the reverse direction; access-control
    invariants are not consulted since the connection is still initiated by
    the permitted side.
    """
    violations = verify_policy(g, sc)
    if violations:
        raise NotCompliant(violations)
    answers = {
        (s, d)
        for s, d in g.edges
        if s != d and (d, s) not in g.edges and sc.allowed(d, s, [Category.IFS])
    }
    return StatefulPolicy(g, frozenset(answers))
