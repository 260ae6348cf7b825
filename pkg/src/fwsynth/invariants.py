"""Security invariant templates.

Each template assigns attributes to entities and judges single edges.  Entities
without an attribute get the template's secure default.  Self-loops are never
judged.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .policy import PolicyGraph, Violation

__all__ = [
    "Category",
    "Kind",
    "Member",
    "SubnetRole",
    "SinkAttr",
    "Level",
    "BlpAttr",
    "AclAttr",
    "Template",
    "TEMPLATES",
    "InvariantInstance",
    "default_attr",
    "eval_edge",
    "offenders",
    "parse_attr",
]


class Category(enum.Enum):
    ACS = "access control"
    IFS = "information flow"


class Kind(enum.Enum):
    SUBNETS = "subnets"
    SINK = "sink"
    BLP = "blp"
    ACL = "acl"


@dataclass(frozen=True)
class Member:
    group: str


class SubnetRole(enum.Enum):
    DMZ = "DMZ"
    UNASSIGNED = "unassigned"


class SinkAttr(enum.Enum):
    SINK = "sink"
    UNCONSTRAINED = "unconstrained"


class Level(enum.IntEnum):
    UNCLASSIFIED = 0
    CONFIDENTIAL = 1


@dataclass(frozen=True)
class BlpAttr:
    level: Level = Level.UNCLASSIFIED
    trusted: bool = False

    @property
    def sending_level(self) -> Level:
        return Level.UNCLASSIFIED if self.trusted else self.level


@dataclass(frozen=True)
class AclAttr:
    allowed_sources: frozenset[str]


def _subnets_allows(a_s, a_d) -> bool:
    if a_d is SubnetRole.UNASSIGNED or a_d is SubnetRole.DMZ:
        return True
    return a_s == a_d or a_s is SubnetRole.DMZ


def _sink_allows(a_s, a_d) -> bool:
    return a_s is not SinkAttr.SINK


def _blp_allows(a_s: BlpAttr, a_d: BlpAttr) -> bool:
    return a_d.trusted or a_s.sending_level <= a_d.level


def _acl_allows_attrs(s: str, a_d: AclAttr | None) -> bool:
    return a_d is None or s in a_d.allowed_sources


def _parse_subnets(value: Any):
    if isinstance(value, (Member, SubnetRole)):
        return value
    if not isinstance(value, str) or not value:
        raise ValueError(f"subnets attribute must be a group name, 'DMZ' or 'unassigned', got {value!r}")
    if value.lower() == "dmz":
        return SubnetRole.DMZ
    if value.lower() == "unassigned":
        return SubnetRole.UNASSIGNED
    return Member(value)


def _parse_sink(value: Any):
    if isinstance(value, SinkAttr):
        return value
    try:
        return SinkAttr(str(value).lower())
    except ValueError:
        raise ValueError(f"sink attribute must be 'sink' or 'unconstrained', got {value!r}") from None


_BLP_WORDS = {
    "unclassified": BlpAttr(),
    "confidential": BlpAttr(Level.CONFIDENTIAL),
    "declassify": BlpAttr(Level.UNCLASSIFIED, trusted=True),
    "trusted": BlpAttr(Level.UNCLASSIFIED, trusted=True),
}


def _parse_blp(value: Any) -> BlpAttr:
    if isinstance(value, BlpAttr):
        return value
    if isinstance(value, str) and value.lower() in _BLP_WORDS:
        return _BLP_WORDS[value.lower()]
    if isinstance(value, Mapping):
        level = str(value.get("level", "unclassified")).upper()
        if level not in Level.__members__:
            raise ValueError(f"unknown Bell-LaPadula level {value.get('level')!r}")
        return BlpAttr(Level[level], bool(value.get("trusted", False)))
    raise ValueError(f"bad Bell-LaPadula attribute {value!r}")


def _parse_acl(value: Any) -> AclAttr:
    if isinstance(value, AclAttr):
        return value
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, (list, tuple, set, frozenset)) or not all(isinstance(v, str) for v in value):
        raise ValueError(f"ACL attribute must be a list of entity names, got {value!r}")
    return AclAttr(frozenset(value))


@dataclass(frozen=True)
class Template:
    kind: Kind
    category: Category
    default: Any
    parse: Callable[[Any], Any]
    allows: Callable[[str, Any, str, Any], bool]


TEMPLATES: dict[Kind, Template] = {
    Kind.SUBNETS: Template(
        Kind.SUBNETS, Category.ACS, SubnetRole.UNASSIGNED, _parse_subnets,
        lambda s, a_s, d, a_d: _subnets_allows(a_s, a_d),
    ),
    Kind.SINK: Template(
        Kind.SINK, Category.IFS, SinkAttr.UNCONSTRAINED, _parse_sink,
        lambda s, a_s, d, a_d: _sink_allows(a_s, a_d),
    ),
    Kind.BLP: Template(
        Kind.BLP, Category.IFS, BlpAttr(), _parse_blp,
        lambda s, a_s, d, a_d: _blp_allows(a_s, a_d),
    ),
    Kind.ACL: Template(
        Kind.ACL, Category.ACS, None, _parse_acl,
        lambda s, a_s, d, a_d: _acl_allows_attrs(s, a_d),
    ),
}


def default_attr(kind: Kind):
    return TEMPLATES[kind].default


def parse_attr(kind: Kind, value: Any):
    return TEMPLATES[kind].parse(value)


@dataclass(frozen=True)
class InvariantInstance:
    kind: Kind
    attrs: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        parsed = {e: TEMPLATES[kind].parse(v) for e, v in dict(self.attrs).items()}
        object.__setattr__(self, "attrs", parsed)

    def __hash__(self) -> int:
        return hash((self.kind, tuple(sorted((k, repr(v)) for k, v in self.attrs.items()))))

    @property
    def category(self) -> Category:
        return TEMPLATES[self.kind].category

    def attr(self, entity: str):
        return self.attrs.get(entity, TEMPLATES[self.kind].default)

    def entities(self) -> set[str]:
        names = set(self.attrs)
        if self.kind is Kind.ACL:
            for a in self.attrs.values():
                names |= a.allowed_sources
        return names


def eval_edge(inv: InvariantInstance, s: str, d: str) -> bool:
    if s == d:
        raise ValueError("self-loops are exempt from invariant checks")
    return TEMPLATES[inv.kind].allows(s, inv.attr(s), d, inv.attr(d))


def offenders(inv: InvariantInstance, g: PolicyGraph, index: int = 1) -> frozenset[Violation]:
    """All non-reflexive edges of ``g`` that ``inv`` forbids, tagged with ``index``."""
    return frozenset(
        Violation(index, (s, d)) for s, d in g.edges if s != d and not eval_edge(inv, s, d)
    )
