"""Turn an iptables ruleset into per-service access matrices.

The pipeline is::

    unfold -> rewrite_ifaces -> specialize -> closure -> service_matrix

``unfold`` inlines user chains into one first-match list, ``rewrite_ifaces``
replaces input interfaces by the source ranges behind them, ``specialize``
fixes protocol, ports and connection state to one service packet, and
``closure`` removes whatever is still not understood, erring towards allowing
(``"allow"``) or towards denying (``"deny"``).  The resulting simple firewall
only matches on addresses, so its behaviour is captured by a small partition
of the address space.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from .ipspace import IpIntervalSet, PortSet, atomize, ip_to_str
from .iptables import (
    Action,
    BothPorts,
    CtState,
    Dst,
    DstPorts,
    IIface,
    Jump,
    OIface,
    Protocol,
    Rule,
    Ruleset,
    Src,
    SrcPorts,
    Unknown,
)
from .policy import StatefulPolicy

__all__ = [
    "AnalysisError",
    "Packet",
    "Service",
    "SSH",
    "HTTP",
    "Ipassmt",
    "SimpleRule",
    "ServiceMatrix",
    "MatrixDiff",
    "Comparison",
    "unfold",
    "eval_rules",
    "eval_packet",
    "rewrite_ifaces",
    "specialize",
    "closure",
    "simple_eval",
    "simple_firewall",
    "service_matrix",
    "analyze",
    "stateful_overview",
    "matrix_diff",
    "matrix_policy_compare",
]

NEW = "NEW"
ESTABLISHED = "ESTABLISHED"
ALLOW = "allow"
DENY = "deny"


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class Packet:
    src: int
    dst: int
    protocol: str = "tcp"
    sport: int = 10000
    dport: int = 80
    state: str = NEW
    iface_in: str | None = None
    iface_out: str | None = None


@dataclass(frozen=True)
class Service:
    """One fixed kind of connection.

    ``sport`` is the client's (ephemeral) source port of the service packet.
    """

    protocol: str = "tcp"
    dport: int = 80
    sport: int = 10000

    @classmethod
    def parse(cls, text: str) -> Service:
        names = {"ssh": SSH, "http": HTTP}
        if text.lower() in names:
            return names[text.lower()]
        proto, sep, port = text.partition(":")
        if not sep or proto.lower() not in ("tcp", "udp") or not port.isdigit() or int(port) > 65535:
            raise ValueError(f"service must look like tcp:80, got {text!r}")
        return cls(proto.lower(), int(port))

    def packet(self, src: int, dst: int, state: str = NEW) -> Packet:
        return Packet(src, dst, self.protocol, self.sport, self.dport, state)

    def __str__(self) -> str:
        return f"{self.protocol}:{self.dport}"


SSH = Service("tcp", 22)
HTTP = Service("tcp", 80)

Ipassmt = Mapping[str, IpIntervalSet]


# -- evaluation ------------------------------------------------------------

def _iface_matches(pattern: str, name: str) -> bool:
    if pattern.endswith("+"):
        return name.startswith(pattern[:-1])
    return name == pattern


def _atom_holds(atom, p: Packet, unknown: bool) -> bool:
    if isinstance(atom, Src):
        return p.src in atom.ips
    if isinstance(atom, Dst):
        return p.dst in atom.ips
    if isinstance(atom, (IIface, OIface)):
        name = p.iface_in if isinstance(atom, IIface) else p.iface_out
        if name is None:
            return unknown
        return _iface_matches(atom.name, name) != atom.negated
    if isinstance(atom, Protocol):
        return (atom.name == "all" or atom.name == p.protocol) != atom.negated
    if isinstance(atom, SrcPorts):
        return p.sport in atom.ports
    if isinstance(atom, DstPorts):
        return p.dport in atom.ports
    if isinstance(atom, BothPorts):
        return p.sport in atom.ports or p.dport in atom.ports
    if isinstance(atom, CtState):
        return p.state in atom.states
    if isinstance(atom, Unknown):
        return unknown
    raise TypeError(f"not a match atom: {atom!r}")


def _rule_matches(rule: Rule, p: Packet, unknown: bool) -> bool:
    return all(_atom_holds(a, p, unknown) for a in rule.matches)


def _unknown_flag(unknown_verdict: str) -> bool:
    if unknown_verdict not in ("match", "no-match"):
        raise ValueError("unknown_verdict must be 'match' or 'no-match'")
    return unknown_verdict == "match"


def eval_rules(rules: Sequence[Rule], p: Packet, unknown_verdict: str = "no-match") -> Action:
    """First-match verdict of a linear rule list; falling off the end is an error."""
    unknown = _unknown_flag(unknown_verdict)
    for r in rules:
        if isinstance(r.target, Jump) or r.target is Action.RETURN:
            raise AnalysisError("eval_rules needs an unfolded rule list")
        if r.target is Action.NOOP or not _rule_matches(r, p, unknown):
            continue
        return Action.ACCEPT if r.target is Action.ACCEPT else Action.DROP
    raise AnalysisError("no rule matched; the list lacks a final catch-all rule")


def eval_packet(rs: Ruleset, start: str, p: Packet, unknown_verdict: str = "no-match") -> Action:
    """Walk the chains like the kernel does, with an explicit call stack."""
    unknown = _unknown_flag(unknown_verdict)
    policy = rs[start].policy
    if policy is None:
        raise AnalysisError(f"chain {start!r} has no default policy")
    stack = [(start, 0)]
    while stack:
        name, pos = stack.pop()
        rules = rs[name].rules
        while pos < len(rules):
            r = rules[pos]
            pos += 1
            if not _rule_matches(r, p, unknown):
                continue
            if isinstance(r.target, Jump):
                if len(stack) > 64:
                    raise AnalysisError("chain nesting too deep (jump cycle?)")
                stack.append((name, pos))
                name, pos, rules = r.target.chain, 0, rs[r.target.chain].rules
            elif r.target is Action.RETURN:
                break
            elif r.target is Action.ACCEPT:
                return Action.ACCEPT
            elif r.target in (Action.DROP, Action.REJECT):
                return Action.DROP
    return Action.ACCEPT if policy is Action.ACCEPT else Action.DROP


# -- unfolding -------------------------------------------------------------

def unfold(rs: Ruleset, start: str = "FORWARD") -> list[Rule]:
    """Inline every jump reachable from ``start`` and append its policy.

    A callee's rules get the jumping rule's matches prepended.  RETURN is only
    understood as the unconditional last rule of a chain.
    """
    chain = rs[start]
    if chain.policy is None:
        raise AnalysisError(f"chain {start!r} has no default policy")
    out = list(_inline(rs, start, (), (start,)))
    out.append(Rule((), chain.policy))
    return out


def _inline(rs: Ruleset, name: str, prefix: tuple, stack: tuple[str, ...]):
    rules = rs[name].rules
    for idx, r in enumerate(rules):
        if r.target is Action.RETURN:
            if r.matches or idx != len(rules) - 1:
                raise AnalysisError(f"unsupported RETURN placement in chain {name!r}")
            continue
        if isinstance(r.target, Jump):
            callee = r.target.chain
            if callee in stack:
                raise AnalysisError(f"jump cycle through chain {callee!r}")
            yield from _inline(rs, callee, prefix + r.matches, stack + (callee,))
        else:
            yield Rule(prefix + r.matches, r.target, r.target_args)


# -- rewriting -------------------------------------------------------------

def rewrite_ifaces(rules: Iterable[Rule], assmt: Ipassmt) -> list[Rule]:
    """Input interfaces become source constraints; output interfaces become unknown."""
    out = []
    for r in rules:
        atoms = []
        for a in r.matches:
            if isinstance(a, IIface):
                if a.name in assmt:
                    ips = assmt[a.name]
                    atoms.append(Src(~ips if a.negated else ips))
                else:
                    atoms.append(Unknown(("! " if a.negated else "") + f"-i {a.name}"))
            elif isinstance(a, OIface):
                atoms.append(Unknown(("! " if a.negated else "") + f"-o {a.name}"))
            else:
                atoms.append(a)
        out.append(Rule(tuple(atoms), r.target, r.target_args))
    return out


def check_ipassmt(assmt: Ipassmt) -> None:
    for (a, sa), (b, sb) in combinations(sorted(assmt.items()), 2):
        if not sa.isdisjoint(sb):
            warnings.warn(f"interfaces {a} and {b} have overlapping address ranges", stacklevel=2)


def specialize(rules: Iterable[Rule], svc: Service, state: str = NEW) -> list[Rule]:
    """Decide every protocol, port and state match for the service packet."""
    probe = svc.packet(0, 0, state)
    decidable = (Protocol, SrcPorts, DstPorts, BothPorts, CtState)
    out = []
    for r in rules:
        keep = True
        atoms = []
        for a in r.matches:
            if isinstance(a, decidable):
                if not _atom_holds(a, probe, False):
                    keep = False
                    break
            else:
                atoms.append(a)
        if keep:
            out.append(Rule(tuple(atoms), r.target, r.target_args))
    return out


# -- simple firewall -------------------------------------------------------

@dataclass(frozen=True)
class SimpleRule:
    src: IpIntervalSet = field(default_factory=IpIntervalSet.full)
    dst: IpIntervalSet = field(default_factory=IpIntervalSet.full)
    action: Action = Action.ACCEPT
    protocol: str | None = None
    sports: PortSet = field(default_factory=PortSet.full)
    dports: PortSet = field(default_factory=PortSet.full)
    states: frozenset[str] | None = None

    def only_addresses(self) -> bool:
        return (
            self.protocol is None
            and self.sports.is_full()
            and self.dports.is_full()
            and self.states is None
        )

    def matches(self, p: Packet) -> bool:
        return (
            p.src in self.src
            and p.dst in self.dst
            and (self.protocol is None or self.protocol == p.protocol)
            and p.sport in self.sports
            and p.dport in self.dports
            and (self.states is None or p.state in self.states)
        )

    def __str__(self) -> str:
        return f"{self.src.label()} -> {self.dst.label()} : {self.action.value}"


def _to_simple(atoms: list, action: Action) -> SimpleRule | None:
    src = IpIntervalSet.full()
    dst = IpIntervalSet.full()
    protocol = None
    sports = PortSet.full()
    dports = PortSet.full()
    states = None
    for a in atoms:
        if isinstance(a, Src):
            src &= a.ips
        elif isinstance(a, Dst):
            dst &= a.ips
        elif isinstance(a, Protocol):
            if a.name == "all":
                continue
            if protocol is not None and protocol != a.name:
                return None
            protocol = a.name
        elif isinstance(a, SrcPorts):
            sports &= a.ports
        elif isinstance(a, DstPorts):
            dports &= a.ports
        elif isinstance(a, CtState):
            states = a.states if states is None else states & a.states
    return SimpleRule(src, dst, action, protocol, sports, dports, states)


def _representable(atom) -> bool:
    if isinstance(atom, Protocol):
        return not atom.negated
    return isinstance(atom, (Src, Dst, SrcPorts, DstPorts, CtState))


def closure(rules: Iterable[Rule], mode: str = ALLOW) -> list[SimpleRule]:
    """Remove every match the simple firewall cannot express.

    ``allow`` widens accepting rules and deletes dropping rules that contain
    such matches, so it permits at least what the ruleset permits; ``deny``
    does the opposite.
    """
    if mode not in (ALLOW, DENY):
        raise ValueError("closure mode must be 'allow' or 'deny'")
    out = []
    for r in rules:
        if isinstance(r.target, Jump) or r.target is Action.RETURN:
            raise AnalysisError("closure needs an unfolded rule list")
        if r.target is Action.NOOP:
            continue
        action = Action.ACCEPT if r.target is Action.ACCEPT else Action.DROP
        known = [a for a in r.matches if _representable(a)]
        doubtful = len(known) != len(r.matches)
        if doubtful and (action is Action.ACCEPT) != (mode == ALLOW):
            continue
        simple = _to_simple(known, action)
        if simple is not None:
            out.append(simple)
    return out


def simple_eval(fw: Sequence[SimpleRule], p: Packet) -> Action:
    for r in fw:
        if r.matches(p):
            return r.action
    raise AnalysisError("no rule matched; the simple firewall lacks a final catch-all rule")


def simple_firewall(
    rs: Ruleset,
    chain: str = "FORWARD",
    ipassmt: Ipassmt | None = None,
    service: Service = HTTP,
    state: str = NEW,
    mode: str = ALLOW,
) -> list[SimpleRule]:
    rules = unfold(rs, chain)
    rules = rewrite_ifaces(rules, ipassmt or {})
    rules = specialize(rules, service, state)
    return closure(rules, mode)


# -- matrices --------------------------------------------------------------

@dataclass(frozen=True)
class ServiceMatrix:
    """Address classes with identical behaviour and the allowed class pairs.

    ``answer_edges`` is only filled by :func:`stateful_overview`: pairs that
    are allowed for established connections but not for new ones.
    """

    classes: tuple[IpIntervalSet, ...]
    edges: frozenset[tuple[int, int]]
    answer_edges: frozenset[tuple[int, int]] = frozenset()

    @property
    def representatives(self) -> tuple[int, ...]:
        return tuple(c.lowest() for c in self.classes)

    def labels(self) -> list[str]:
        return [c.label() for c in self.classes]

    def class_of(self, ip: int) -> int:
        for i, c in enumerate(self.classes):
            if ip in c:
                return i
        raise ValueError(f"address {ip_to_str(ip)} not covered")

    def allows(self, src: int, dst: int) -> bool:
        return (self.class_of(src), self.class_of(dst)) in self.edges

    def sorted_edges(self, edges: Iterable[tuple[int, int]] | None = None) -> list[tuple[int, int]]:
        return sorted(self.edges if edges is None else edges)

    def labelled_edges(self, edges: Iterable[tuple[int, int]] | None = None) -> set[tuple[str, str]]:
        labels = self.labels()
        return {(labels[a], labels[b]) for a, b in (self.edges if edges is None else edges)}

    def describe(self) -> str:
        labels = self.labels()
        lines = [f"classes: {len(self.classes)}"]
        lines += [f"  [{i}] {label}" for i, label in enumerate(labels)]
        lines.append(f"edges: {len(self.edges)}")
        lines += [f"  [{a}] -> [{b}]" for a, b in self.sorted_edges()]
        if self.answer_edges:
            lines.append(f"answer edges: {len(self.answer_edges)}")
            lines += [f"  [{a}] -> [{b}]" for a, b in self.sorted_edges(self.answer_edges)]
        return "\n".join(lines)


def _atom_relation(fw: Sequence[SimpleRule], atoms: Sequence[IpIntervalSet]) -> set[tuple[int, int]]:
    """Accepted (src atom, dst atom) pairs, judged on one representative each."""
    reps = [a.lowest() for a in atoms]
    n = len(atoms)
    masks = []
    for r in fw:
        smask = sum(1 << i for i in range(n) if reps[i] in r.src)
        dmask = sum(1 << j for j in range(n) if reps[j] in r.dst)
        masks.append((smask, dmask, r.action is Action.ACCEPT))
    allowed = set()
    for i in range(n):
        bit_i = 1 << i
        rules_i = [(d, acc) for s, d, acc in masks if s & bit_i]
        for j in range(n):
            bit_j = 1 << j
            for d, acc in rules_i:
                if d & bit_j:
                    if acc:
                        allowed.add((i, j))
                    break
            else:
                raise AnalysisError("simple firewall lacks a final catch-all rule")
    return allowed


def _merge_classes(n: int, relations: Sequence[set[tuple[int, int]]]) -> list[list[int]]:
    """Group atoms that agree on every row and column of every relation, to a fixpoint."""
    groups = [[i] for i in range(n)]
    while True:
        rep = [g[0] for g in groups]

        def signature(i: int):
            sig = []
            for rel in relations:
                sig.append(tuple((i, r) in rel for r in rep))
                sig.append(tuple((r, i) in rel for r in rep))
            return tuple(sig)

        buckets: dict[tuple, list[int]] = {}
        for g in groups:
            buckets.setdefault(signature(g[0]), []).extend(g)
        merged = sorted((sorted(b) for b in buckets.values()), key=lambda b: b[0])
        if len(merged) == len(groups):
            return merged
        groups = merged


def _matrix_from(atoms, groups, relation, extra=None) -> ServiceMatrix:
    classes = []
    owner = {}
    for gi, g in enumerate(groups):
        s = atoms[g[0]]
        for a in g[1:]:
            s = s | atoms[a]
        classes.append(s)
        for a in g:
            owner[a] = gi
    order = sorted(range(len(classes)), key=lambda k: classes[k].lowest())
    remap = {old: new for new, old in enumerate(order)}
    classes = tuple(classes[k] for k in order)

    def lift(rel):
        return frozenset((remap[owner[a]], remap[owner[b]]) for a, b in rel)

    return ServiceMatrix(classes, lift(relation), lift(extra) if extra else frozenset())


def _check_simple(fw: Sequence[SimpleRule]) -> None:
    if not fw:
        raise AnalysisError("empty firewall")
    for r in fw:
        if not r.only_addresses():
            raise AnalysisError(f"rule {r} still constrains protocol, ports or state; specialize first")
    last = fw[-1]
    if not (last.src.is_full() and last.dst.is_full()):
        raise AnalysisError("simple firewall must end in an unconditional rule")


def service_matrix(fw: Sequence[SimpleRule]) -> ServiceMatrix:
    _check_simple(fw)
    atoms = atomize([r.src for r in fw] + [r.dst for r in fw])
    relation = _atom_relation(fw, atoms)
    groups = _merge_classes(len(atoms), [relation])
    return _matrix_from(atoms, groups, relation)


def analyze(
    rs: Ruleset,
    chain: str = "FORWARD",
    ipassmt: Ipassmt | None = None,
    service: Service = HTTP,
    state: str = NEW,
    mode: str = ALLOW,
) -> ServiceMatrix:
    return service_matrix(simple_firewall(rs, chain, ipassmt, service, state, mode))


def stateful_overview(
    rs: Ruleset,
    start: str = "FORWARD",
    assmt: Ipassmt | None = None,
    svc: Service = HTTP,
    mode: str = ALLOW,
) -> tuple[ServiceMatrix, frozenset[tuple[int, int]]]:
    """Matrix for new connections plus the pairs only established traffic may use.

    Both states are evaluated on a common partition; classes are split
    further than the new-connection matrix alone would need only where the
    established behaviour differs.
    """
    fw_new = simple_firewall(rs, start, assmt, svc, NEW, mode)
    fw_est = simple_firewall(rs, start, assmt, svc, ESTABLISHED, mode)
    _check_simple(fw_new)
    _check_simple(fw_est)
    atoms = atomize([r.src for r in fw_new + fw_est] + [r.dst for r in fw_new + fw_est])
    rel_new = _atom_relation(fw_new, atoms)
    rel_est = _atom_relation(fw_est, atoms)
    groups = _merge_classes(len(atoms), [rel_new, rel_est])
    matrix = _matrix_from(atoms, groups, rel_new, rel_est - rel_new)
    return matrix, matrix.answer_edges


# -- comparisons -----------------------------------------------------------

@dataclass(frozen=True)
class MatrixDiff:
    only_a: tuple[tuple[IpIntervalSet, IpIntervalSet], ...]
    only_b: tuple[tuple[IpIntervalSet, IpIntervalSet], ...]

    def __bool__(self) -> bool:
        return bool(self.only_a or self.only_b)

    def report(self) -> str:
        lines = [f"- {s.label()} -> {d.label()}" for s, d in self.only_a]
        lines += [f"+ {s.label()} -> {d.label()}" for s, d in self.only_b]
        return "\n".join(lines)


def _common_pairs(m: ServiceMatrix, atoms, edges) -> set[tuple[int, int]]:
    owner = [m.class_of(a.lowest()) for a in atoms]
    by_class: dict[int, list[int]] = {}
    for i, c in enumerate(owner):
        by_class.setdefault(c, []).append(i)
    return {(i, j) for a, b in edges for i in by_class.get(a, ()) for j in by_class.get(b, ())}


def matrix_diff(a: ServiceMatrix, b: ServiceMatrix) -> MatrixDiff:
    """Edges present in only one matrix, on the common refinement of both partitions."""
    atoms = atomize(list(a.classes) + list(b.classes))
    ea = _common_pairs(a, atoms, a.edges)
    eb = _common_pairs(b, atoms, b.edges)
    return MatrixDiff(
        tuple((atoms[i], atoms[j]) for i, j in sorted(ea - eb)),
        tuple((atoms[i], atoms[j]) for i, j in sorted(eb - ea)),
    )


@dataclass(frozen=True)
class Comparison:
    isomorphic: bool
    mismatches: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.isomorphic


def matrix_policy_compare(
    m: ServiceMatrix,
    sp: StatefulPolicy,
    binding: Mapping[str, IpIntervalSet],
    with_answers: bool = True,
) -> Comparison:
    """Check that the matrix is the policy under the entity-to-address binding.

    Answer edges are compared without orientation: a reply flow is the same
    connection whichever end is drawn as its source.  ``with_answers=False``
    compares the new-connection edges only.
    """
    names = list(binding)
    for x, y in combinations(names, 2):
        if not binding[x].isdisjoint(binding[y]):
            raise ValueError(f"bindings of {x} and {y} overlap")
    problems: list[str] = []
    cls: dict[str, int] = {}
    for e in sp.base.nodes:
        if e not in binding:
            problems.append(f"entity {e} has no address binding")
    for e in names:
        hit = [i for i, c in enumerate(m.classes) if not c.isdisjoint(binding[e])]
        if len(hit) != 1:
            problems.append(
                f"entity {e} ({binding[e].label()}) spans {len(hit)} firewall classes"
            )
            continue
        cls[e] = hit[0]
    owners: dict[int, list[str]] = {}
    for e, c in cls.items():
        owners.setdefault(c, []).append(e)
    for c, es in sorted(owners.items()):
        if len(es) > 1:
            problems.append(f"entities {', '.join(sorted(es))} fall into one firewall class {m.classes[c].label()}")
    bound = set(owners)
    answers = m.answer_edges if with_answers else frozenset()
    for a, b in sorted(m.edges | answers):
        if a not in bound or b not in bound:
            problems.append(
                f"firewall allows {m.classes[a].label()} -> {m.classes[b].label()} outside the bound entities"
            )
    if problems:
        return Comparison(False, tuple(problems))

    policy_nodes = [e for e in sp.base.nodes if e in cls]
    for s in policy_nodes:
        for d in policy_nodes:
            in_policy = (s, d) in sp.base.edges
            in_fw = (cls[s], cls[d]) in m.edges
            if in_fw and not in_policy:
                problems.append(f"firewall allows {s} -> {d}, policy does not")
            elif in_policy and not in_fw:
                problems.append(f"policy allows {s} -> {d}, firewall does not")
    if not with_answers:
        return Comparison(not problems, tuple(problems))
    inverse = {c: e for e, c in cls.items()}
    fw_answers = {frozenset((inverse[a], inverse[b])) for a, b in m.answer_edges}
    policy_answers = {frozenset(e) for e in sp.answer_edges}
    for pair in sorted(fw_answers - policy_answers, key=sorted):
        problems.append("firewall lets replies flow between " + " and ".join(sorted(pair)) + ", policy does not")
    for pair in sorted(policy_answers - fw_answers, key=sorted):
        problems.append("policy lets replies flow between " + " and ".join(sorted(pair)) + ", firewall does not")
    return Comparison(not problems, tuple(problems))
