"""Typed model of the iptables-save filter table.

Supported: ``-i/-o`` (with ``!``), ``-s/-d`` incl. comma lists, ``-p``,
``--sport/--dport`` (tcp/udp), ``-m multiport``, ``-m state``,
``-m conntrack --ctstate``, ``-m iprange`` and the targets ACCEPT, DROP,
REJECT, RETURN and user chains.  Everything else that is syntactically a
match module is kept verbatim as an :class:`Unknown` atom.
"""
from __future__ import annotations

import enum
import shlex
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Union

from .ipspace import IpIntervalSet, IpParseError, PortSet, ip_to_str, parse_ip_expr

__all__ = [
    "IptablesParseError",
    "Action",
    "Jump",
    "IIface",
    "OIface",
    "Src",
    "Dst",
    "Protocol",
    "SrcPorts",
    "DstPorts",
    "BothPorts",
    "CtState",
    "Unknown",
    "MatchAtom",
    "Rule",
    "Chain",
    "Ruleset",
    "BUILTIN_CHAINS",
    "CT_STATES",
    "parse_save",
    "render_save",
    "render_rule",
]

BUILTIN_CHAINS = ("INPUT", "FORWARD", "OUTPUT")
CT_STATES = frozenset({"NEW", "ESTABLISHED", "RELATED", "INVALID"})
PROTOCOL_NUMBERS = {"6": "tcp", "17": "udp", "1": "icmp", "0": "all"}


class IptablesParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Action(enum.Enum):
    ACCEPT = "ACCEPT"
    DROP = "DROP"
    REJECT = "REJECT"
    RETURN = "RETURN"
    NOOP = "NOOP"


@dataclass(frozen=True)
class Jump:
    chain: str


Target = Union[Action, Jump]


@dataclass(frozen=True)
class IIface:
    name: str
    negated: bool = False


@dataclass(frozen=True)
class OIface:
    name: str
    negated: bool = False


@dataclass(frozen=True)
class Src:
    ips: IpIntervalSet


@dataclass(frozen=True)
class Dst:
    ips: IpIntervalSet


@dataclass(frozen=True)
class Protocol:
    name: str  # tcp | udp | icmp | all
    negated: bool = False


@dataclass(frozen=True)
class SrcPorts:
    ports: PortSet


@dataclass(frozen=True)
class DstPorts:
    ports: PortSet


@dataclass(frozen=True)
class BothPorts:
    """``multiport --ports``: matches when either port is in the set."""

    ports: PortSet


@dataclass(frozen=True)
class CtState:
    states: frozenset[str]


@dataclass(frozen=True)
class Unknown:
    text: str


MatchAtom = Union[IIface, OIface, Src, Dst, Protocol, SrcPorts, DstPorts, BothPorts, CtState, Unknown]


@dataclass(frozen=True)
class Rule:
    matches: tuple = ()
    target: Target = Action.NOOP
    target_args: tuple[str, ...] = ()

    @property
    def action(self) -> Action | None:
        return self.target if isinstance(self.target, Action) else None


@dataclass(frozen=True)
class Chain:
    name: str
    policy: Action | None = None
    rules: tuple[Rule, ...] = ()


@dataclass(frozen=True)
class Ruleset:
    chains: tuple[Chain, ...] = field(default_factory=tuple)

    def __getitem__(self, name: str) -> Chain:
        for c in self.chains:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.chains)

    def names(self) -> list[str]:
        return [c.name for c in self.chains]

    @classmethod
    def empty(cls) -> Ruleset:
        return cls(tuple(Chain(n, Action.ACCEPT) for n in BUILTIN_CHAINS))


# -- parsing ---------------------------------------------------------------

_TOP_LEVEL = {
    "-i", "--in-interface", "-o", "--out-interface", "-s", "--source", "--src",
    "-d", "--destination", "--dst", "-p", "--protocol", "-j", "--jump", "-g",
    "--goto", "-m", "--match", "--dport", "--destination-port", "--sport",
    "--source-port", "-f", "--fragment",
}


def _is_top(tokens: list[str], i: int) -> bool:
    if i >= len(tokens):
        return True
    if tokens[i] == "!":
        return i + 1 < len(tokens) and tokens[i + 1] in _TOP_LEVEL
    return tokens[i] in _TOP_LEVEL


class _RuleParser:
    def __init__(self, tokens: list[str], lineno: int):
        self.tokens = tokens
        self.i = 0
        self.line = lineno
        self.matches: list = []
        self.target: Target = Action.NOOP
        self.target_name: str | None = None
        self.target_args: list[str] = []
        self.negated_addr = False
        self.multi_addr = False

    def error(self, msg: str) -> IptablesParseError:
        return IptablesParseError(msg, self.line)

    def take(self) -> str:
        if self.i >= len(self.tokens):
            raise self.error(f"option {self.tokens[self.i - 1]!r} requires an argument")
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def addresses(self, text: str, negated: bool, is_range: bool = False) -> IpIntervalSet:
        try:
            ips = parse_ip_expr(text)
        except IpParseError as exc:
            raise self.error(str(exc)) from None
        if not is_range:
            if "," in text:
                self.multi_addr = True
            if negated:
                self.negated_addr = True
        return ~ips if negated else ips

    def ports(self, text: str, negated: bool) -> PortSet:
        try:
            ports = PortSet.parse(text)
        except ValueError as exc:
            raise self.error(str(exc)) from None
        return ~ports if negated else ports

    def states(self, text: str, negated: bool) -> CtState:
        names = frozenset(s.strip().upper() for s in text.split(","))
        bad = names - CT_STATES
        if bad:
            raise self.error(f"unsupported connection state(s) {sorted(bad)}")
        return CtState(CT_STATES - names if negated else names)

    def parse(self) -> Rule:
        toks = self.tokens
        while self.i < len(toks):
            negated = False
            if toks[self.i] == "!":
                negated = True
                self.i += 1
            opt = self.take()
            if opt in ("-i", "--in-interface"):
                self.matches.append(IIface(self.take(), negated))
            elif opt in ("-o", "--out-interface"):
                self.matches.append(OIface(self.take(), negated))
            elif opt in ("-s", "--source", "--src"):
                self.matches.append(Src(self.addresses(self.take(), negated)))
            elif opt in ("-d", "--destination", "--dst"):
                self.matches.append(Dst(self.addresses(self.take(), negated)))
            elif opt in ("-p", "--protocol"):
                name = self.take().lower()
                name = PROTOCOL_NUMBERS.get(name, name)
                if name not in ("tcp", "udp", "icmp", "all"):
                    raise self.error(f"unsupported protocol {name!r}")
                self.matches.append(Protocol(name, negated))
            elif opt in ("--dport", "--destination-port"):
                self.matches.append(DstPorts(self.ports(self.take(), negated)))
            elif opt in ("--sport", "--source-port"):
                self.matches.append(SrcPorts(self.ports(self.take(), negated)))
            elif opt in ("-j", "--jump"):
                if negated:
                    raise self.error("cannot negate a target")
                self.target_name = self.take()
                while self.i < len(toks) and not _is_top(toks, self.i):
                    self.target_args.append(self.take())
            elif opt in ("-g", "--goto"):
                raise self.error("GOTO targets are not supported")
            elif opt in ("-m", "--match"):
                if negated:
                    raise self.error("cannot negate a match module")
                self.module(self.take())
            else:
                raise self.error(f"unexpected token {opt!r}")
        if self.negated_addr and self.multi_addr:
            raise self.error("negation is not allowed with multiple source or destination IP addresses")
        return Rule(tuple(self.matches), Action.NOOP, tuple(self.target_args))

    def module(self, name: str) -> None:
        toks = self.tokens
        handlers = {
            "tcp": self.opt_tcpudp,
            "udp": self.opt_tcpudp,
            "state": self.opt_state,
            "conntrack": self.opt_conntrack,
            "multiport": self.opt_multiport,
            "iprange": self.opt_iprange,
        }
        handler = handlers.get(name)
        if handler is None:
            raw = ["-m", name]
            while self.i < len(toks) and not _is_top(toks, self.i):
                raw.append(self.take())
            self.matches.append(Unknown(shlex.join(raw)))
            return
        while self.i < len(toks) and not _is_top(toks, self.i):
            start = self.i
            negated = False
            if toks[self.i] == "!":
                negated = True
                self.i += 1
            opt = self.take()
            if not handler(opt, negated):
                # option this model does not interpret: keep it verbatim
                raw = ["-m", name] + toks[start:self.i]
                while self.i < len(toks) and not toks[self.i].startswith("-") and toks[self.i] != "!":
                    raw.append(self.take())
                self.matches.append(Unknown(shlex.join(raw)))

    def opt_tcpudp(self, opt: str, negated: bool) -> bool:
        if opt in ("--dport", "--destination-port"):
            self.matches.append(DstPorts(self.ports(self.take(), negated)))
        elif opt in ("--sport", "--source-port"):
            self.matches.append(SrcPorts(self.ports(self.take(), negated)))
        else:
            return False
        return True

    def opt_state(self, opt: str, negated: bool) -> bool:
        if opt != "--state":
            return False
        self.matches.append(self.states(self.take(), negated))
        return True

    def opt_conntrack(self, opt: str, negated: bool) -> bool:
        if opt != "--ctstate":
            return False
        self.matches.append(self.states(self.take(), negated))
        return True

    def opt_multiport(self, opt: str, negated: bool) -> bool:
        kinds = {
            "--dports": DstPorts, "--destination-ports": DstPorts,
            "--sports": SrcPorts, "--source-ports": SrcPorts,
            "--ports": BothPorts,
        }
        if opt not in kinds:
            return False
        ports = self.ports(self.take(), False)
        if negated and kinds[opt] is BothPorts:
            raise self.error("negated --ports is not supported")
        self.matches.append(kinds[opt](~ports if negated else ports))
        return True

    def opt_iprange(self, opt: str, negated: bool) -> bool:
        if opt == "--src-range":
            self.matches.append(Src(self.addresses(self.take(), negated, is_range=True)))
        elif opt == "--dst-range":
            self.matches.append(Dst(self.addresses(self.take(), negated, is_range=True)))
        else:
            return False
        return True


@dataclass
class _ChainBuilder:
    name: str
    policy: Action | None
    rules: list = field(default_factory=list)


def _parse_policy(word: str, lineno: int, builtin: bool) -> Action | None:
    if word == "-":
        if builtin:
            raise IptablesParseError("built-in chain needs a policy", lineno)
        return None
    if word not in ("ACCEPT", "DROP"):
        raise IptablesParseError(f"unsupported chain policy {word!r}", lineno)
    return Action(word)


def parse_save(text: str) -> Ruleset:
    """Parse the ``*filter`` table of an iptables-save dump.

    Input without any ``*table`` header is read as a filter table.
    """
    chains: dict[str, _ChainBuilder] = {}
    table: str | None = None
    saw_table = any(line.strip().startswith("*") for line in text.splitlines())
    if not saw_table:
        table = "filter"
    saw_filter = False
    skipped: set[str] = set()

    def chain_for(name: str, lineno: int) -> _ChainBuilder:
        if name not in chains:
            raise IptablesParseError(f"chain {name!r} is not declared", lineno)
        return chains[name]

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("*"):
            table = line[1:].strip()
            if table == "filter":
                saw_filter = True
            continue
        if line == "COMMIT":
            table = None if saw_table else "filter"
            continue
        if table != "filter":
            if table is not None and table not in skipped:
                skipped.add(table)
                warnings.warn(f"ignoring table {table!r}; only the filter table is analyzed", stacklevel=2)
            continue
        if line.startswith(":"):
            parts = line[1:].split()
            if len(parts) < 2:
                raise IptablesParseError(f"malformed chain header {line!r}", lineno)
            name = parts[0]
            chains[name] = _ChainBuilder(name, _parse_policy(parts[1], lineno, name in BUILTIN_CHAINS))
            continue
        if line.startswith("["):
            # packet/byte counters from iptables-save -c
            line = line.split("]", 1)[1].strip() if "]" in line else line
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            raise IptablesParseError(f"cannot tokenize: {exc}", lineno) from None
        cmd = tokens[0]
        if cmd in ("-N", "--new-chain"):
            if len(tokens) != 2:
                raise IptablesParseError("malformed -N line", lineno)
            chains.setdefault(tokens[1], _ChainBuilder(tokens[1], None))
        elif cmd in ("-P", "--policy"):
            if len(tokens) != 3:
                raise IptablesParseError("malformed -P line", lineno)
            chain_for(tokens[1], lineno).policy = _parse_policy(tokens[2], lineno, True)
        elif cmd in ("-A", "--append", "-I", "--insert"):
            if len(tokens) < 2:
                raise IptablesParseError(f"{cmd} needs a chain name", lineno)
            chain = chain_for(tokens[1], lineno)
            rest = tokens[2:]
            position = None
            if cmd in ("-I", "--insert"):
                position = 1
                if rest and rest[0].isdigit():
                    position = int(rest[0])
                    rest = rest[1:]
            parser = _RuleParser(rest, lineno)
            rule = parser.parse()
            item = (rule, parser.target_name, lineno)
            if position is None:
                chain.rules.append(item)
            else:
                if not 1 <= position <= len(chain.rules) + 1:
                    raise IptablesParseError(f"insert position {position} out of range", lineno)
                chain.rules.insert(position - 1, item)
        else:
            raise IptablesParseError(f"unrecognized line {line!r}", lineno)

    if saw_table and not saw_filter:
        raise IptablesParseError("no *filter table found")
    for name in BUILTIN_CHAINS:
        if name not in chains:
            chains[name] = _ChainBuilder(name, Action.ACCEPT)

    builtin = [chains[n] for n in BUILTIN_CHAINS]
    user = [c for n, c in chains.items() if n not in BUILTIN_CHAINS]
    out = []
    for c in builtin + user:
        rules = []
        for rule, target_name, lineno in c.rules:
            rules.append(_resolve_target(rule, target_name, chains, lineno))
        out.append(Chain(c.name, c.policy, tuple(rules)))
    return Ruleset(tuple(out))


def _resolve_target(rule: Rule, name: str | None, chains: dict, lineno: int) -> Rule:
    if name is None:
        return rule
    if name in ("ACCEPT", "DROP", "REJECT", "RETURN"):
        target: Target = Action(name)
    elif name in chains and name not in BUILTIN_CHAINS:
        target = Jump(name)
    else:
        raise IptablesParseError(f"unknown chain or unsupported target {name!r}", lineno)
    if rule.target_args and target is not Action.REJECT:
        raise IptablesParseError(f"target {name} takes no options", lineno)
    return Rule(rule.matches, target, rule.target_args)


# -- rendering -------------------------------------------------------------

def _addr_is_list(ips: IpIntervalSet) -> bool:
    """True when ``ips`` can only be written as a comma list."""
    return len(ips.intervals) > 1 and len((~ips).intervals) > 1


def _render_addr(flag: str, range_flag: str, ips: IpIntervalSet, avoid_negation: bool) -> str:
    if ips.is_full():
        return f"{flag} 0.0.0.0/0"
    inverse = ~ips
    if ips.is_empty():
        if avoid_negation:
            return f"-m iprange ! {range_flag} 0.0.0.0-255.255.255.255"
        return f"! {flag} 0.0.0.0/0"
    if len(ips.cidrs()) == 1:
        return f"{flag} {ips.iptables_list()}"
    if len(inverse.intervals) == 1 and len(inverse.cidrs()) == 1 and not avoid_negation:
        return f"! {flag} {inverse.iptables_list()}"
    if len(ips.intervals) == 1:
        lo, hi = ips.intervals[0]
        return f"-m iprange {range_flag} {ip_to_str(lo)}-{ip_to_str(hi)}"
    if len(inverse.intervals) == 1:
        lo, hi = inverse.intervals[0]
        return f"-m iprange ! {range_flag} {ip_to_str(lo)}-{ip_to_str(hi)}"
    return f"{flag} {ips.iptables_list()}"


def _render_ports(flag: str, multi_flag: str, ports: PortSet) -> str:
    if len(ports.intervals) == 1:
        return f"{flag} {ports.render()}"
    inverse = ~ports
    if len(inverse.intervals) == 1:
        return f"! {flag} {inverse.render()}"
    return f"-m multiport {multi_flag} {ports.render()}"


def _render_atom(atom, avoid_negation: bool = False) -> str:
    neg = "! " if getattr(atom, "negated", False) else ""
    if isinstance(atom, IIface):
        return f"{neg}-i {atom.name}"
    if isinstance(atom, OIface):
        return f"{neg}-o {atom.name}"
    if isinstance(atom, Src):
        return _render_addr("-s", "--src-range", atom.ips, avoid_negation)
    if isinstance(atom, Dst):
        return _render_addr("-d", "--dst-range", atom.ips, avoid_negation)
    if isinstance(atom, Protocol):
        return f"{neg}-p {atom.name}"
    if isinstance(atom, SrcPorts):
        return _render_ports("--sport", "--sports", atom.ports)
    if isinstance(atom, DstPorts):
        return _render_ports("--dport", "--dports", atom.ports)
    if isinstance(atom, BothPorts):
        return f"-m multiport --ports {atom.ports.render()}"
    if isinstance(atom, CtState):
        order = ["NEW", "RELATED", "ESTABLISHED", "INVALID"]
        return "-m state --state " + ",".join(s for s in order if s in atom.states)
    if isinstance(atom, Unknown):
        return atom.text
    raise TypeError(f"not a match atom: {atom!r}")


def render_rule(chain: str, rule: Rule, command: str = "-A") -> str:
    parts = [command, chain]
    # iptables refuses "! -s/-d" next to a comma list, so fall back to iprange
    multi = any(isinstance(a, (Src, Dst)) and _addr_is_list(a.ips) for a in rule.matches)
    parts.extend(_render_atom(a, multi) for a in rule.matches)
    if isinstance(rule.target, Jump):
        parts.append(f"-j {rule.target.chain}")
    elif rule.target is not Action.NOOP:
        parts.append(f"-j {rule.target.value}")
    parts.extend(shlex.quote(a) for a in rule.target_args)
    return " ".join(parts)


def render_save(rs: Ruleset) -> str:
    lines = ["*filter"]
    for c in rs.chains:
        policy = c.policy.value if c.policy is not None else "-"
        lines.append(f":{c.name} {policy} [0:0]")
    for c in rs.chains:
        lines.extend(render_rule(c.name, r) for r in c.rules)
    lines.append("COMMIT")
    return "\n".join(lines) + "\n"


def iter_rules(rs: Ruleset) -> Iterator[tuple[str, Rule]]:
    for c in rs.chains:
        for r in c.rules:
            yield c.name, r
