"""Exact set algebra over integer address spaces.

Sets are stored as canonical tuples of inclusive ``(lo, hi)`` intervals:
ascending, non-overlapping and non-adjacent.  ``IpIntervalSet`` covers the
32-bit IPv4 space, ``PortSet`` the 16-bit port space.
"""
from __future__ import annotations

import ipaddress
from typing import ClassVar, Iterable, Sequence

__all__ = [
    "IntervalSet",
    "IpIntervalSet",
    "PortSet",
    "IpParseError",
    "parse_ip_expr",
    "union",
    "intersect",
    "complement",
    "difference",
    "atomize",
    "ip_to_str",
    "str_to_ip",
]


class IpParseError(ValueError):
    """Malformed address expression; ``position`` is the offending offset."""

    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position} in {text!r}")
        self.text = text
        self.position = position


def _normalize(intervals: Iterable[tuple[int, int]], top: int) -> tuple[tuple[int, int], ...]:
    ivs = sorted((lo, hi) for lo, hi in intervals if lo <= hi)
    out: list[list[int]] = []
    for lo, hi in ivs:
        if lo < 0 or hi > top:
            raise ValueError(f"interval [{lo}, {hi}] outside [0, {top}]")
        if out and lo <= out[-1][1] + 1:
            if hi > out[-1][1]:
                out[-1][1] = hi
        else:
            out.append([lo, hi])
    return tuple((lo, hi) for lo, hi in out)


class IntervalSet:
    """Immutable set of integers in ``[0, 2**WIDTH - 1]``."""

    WIDTH: ClassVar[int] = 32
    __slots__ = ("intervals",)

    def __init__(self, intervals: Iterable[tuple[int, int]] = ()):
        object.__setattr__(self, "intervals", _normalize(intervals, self.top()))

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @classmethod
    def top(cls) -> int:
        return (1 << cls.WIDTH) - 1

    @classmethod
    def _raw(cls, intervals: tuple[tuple[int, int], ...]):
        # caller guarantees canonical form
        obj = object.__new__(cls)
        object.__setattr__(obj, "intervals", intervals)
        return obj

    @classmethod
    def full(cls):
        return cls._raw(((0, cls.top()),))

    @classmethod
    def empty(cls):
        return cls._raw(())

    @classmethod
    def single(cls, value: int):
        return cls([(value, value)])

    @classmethod
    def range(cls, lo: int, hi: int):
        if lo > hi:
            raise ValueError(f"empty range {lo}-{hi}")
        return cls([(lo, hi)])

    # -- queries -----------------------------------------------------------

    def is_empty(self) -> bool:
        return not self.intervals

    def is_full(self) -> bool:
        return self.intervals == ((0, self.top()),)

    def lowest(self) -> int:
        if not self.intervals:
            raise ValueError("empty set has no lowest member")
        return self.intervals[0][0]

    def highest(self) -> int:
        if not self.intervals:
            raise ValueError("empty set has no highest member")
        return self.intervals[-1][1]

    def size(self) -> int:
        return sum(hi - lo + 1 for lo, hi in self.intervals)

    def __contains__(self, value: int) -> bool:
        lo_i, hi_i = 0, len(self.intervals)
        while lo_i < hi_i:
            mid = (lo_i + hi_i) // 2
            lo, hi = self.intervals[mid]
            if value < lo:
                hi_i = mid
            elif value > hi:
                lo_i = mid + 1
            else:
                return True
        return False

    def issubset(self, other: IntervalSet) -> bool:
        return (self - other).is_empty()

    def isdisjoint(self, other: IntervalSet) -> bool:
        return (self & other).is_empty()

    def __bool__(self) -> bool:
        return bool(self.intervals)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IntervalSet):
            return NotImplemented
        return self.WIDTH == other.WIDTH and self.intervals == other.intervals

    def __hash__(self) -> int:
        return hash((self.WIDTH, self.intervals))

    def __lt__(self, other: IntervalSet) -> bool:
        return self.intervals < other.intervals

    def __repr__(self) -> str:
        body = ", ".join(f"({lo}, {hi})" for lo, hi in self.intervals)
        return f"{type(self).__name__}([{body}])"

    # -- algebra -----------------------------------------------------------

    def __or__(self, other: IntervalSet):
        return type(self)(self.intervals + other.intervals)

    def __and__(self, other: IntervalSet):
        a, b = self.intervals, other.intervals
        i = j = 0
        out = []
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo <= hi:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return type(self)._raw(tuple(out))

    def __invert__(self):
        out = []
        nxt = 0
        for lo, hi in self.intervals:
            if lo > nxt:
                out.append((nxt, lo - 1))
            nxt = hi + 1
        if nxt <= self.top():
            out.append((nxt, self.top()))
        return type(self)._raw(tuple(out))

    def __sub__(self, other: IntervalSet):
        return self & ~other

    def __xor__(self, other: IntervalSet):
        return (self - other) | (other - self)


class PortSet(IntervalSet):
    """Set of 16-bit port numbers.  Text form follows iptables: ``22``, ``1024:65535``, ``22,80``."""

    WIDTH = 16
    __slots__ = ()

    @classmethod
    def parse(cls, text: str) -> PortSet:
        intervals = []
        for part in text.split(","):
            part = part.strip()
            try:
                if ":" in part:
                    lo_s, hi_s = part.split(":", 1)
                    lo = int(lo_s) if lo_s else 0
                    hi = int(hi_s) if hi_s else cls.top()
                else:
                    lo = hi = int(part)
            except ValueError:
                raise ValueError(f"malformed port spec {text!r}") from None
            if not (0 <= lo <= hi <= cls.top()):
                raise ValueError(f"port range out of bounds in {text!r}")
            intervals.append((lo, hi))
        return cls(intervals)

    def render(self) -> str:
        return ",".join(str(lo) if lo == hi else f"{lo}:{hi}" for lo, hi in self.intervals)

    def __str__(self) -> str:
        return self.render()


def ip_to_str(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def str_to_ip(text: str) -> int:
    return int(ipaddress.IPv4Address(text))


class IpIntervalSet(IntervalSet):
    """Set of IPv4 addresses."""

    WIDTH = 32
    __slots__ = ()

    @classmethod
    def parse(cls, text: str) -> IpIntervalSet:
        return parse_ip_expr(text)

    def cidrs(self) -> list[ipaddress.IPv4Network]:
        nets: list[ipaddress.IPv4Network] = []
        for lo, hi in self.intervals:
            nets.extend(
                ipaddress.summarize_address_range(ipaddress.IPv4Address(lo), ipaddress.IPv4Address(hi))
            )
        return nets

    def iptables_list(self) -> str:
        """Comma list accepted by ``-s``/``-d``; host routes are written as bare addresses."""
        return ",".join(
            str(net.network_address) if net.prefixlen == 32 else str(net) for net in self.cidrs()
        )

    def label(self) -> str:
        """Human label: ranges as ``{lo .. hi}``, runs of single addresses as ``{a,b}``, joined by ``∪``."""
        if not self.intervals:
            return "{}"
        parts: list[str] = []
        singles: list[str] = []
        for lo, hi in self.intervals:
            if lo == hi:
                singles.append(ip_to_str(lo))
                continue
            if singles:
                parts.append("{" + ",".join(singles) + "}")
                singles = []
            parts.append("{" + ip_to_str(lo) + " .. " + ip_to_str(hi) + "}")
        if singles:
            parts.append("{" + ",".join(singles) + "}")
        return " ∪ ".join(parts)

    def __str__(self) -> str:
        return self.label()


def _parse_addr(token: str, text: str, pos: int) -> int:
    try:
        return int(ipaddress.IPv4Address(token))
    except ValueError:
        raise IpParseError(f"malformed address {token!r}", text, pos) from None


def parse_ip_expr(text: str) -> IpIntervalSet:
    """Parse ``a.b.c.d``, ``a.b.c.d/n``, ``a-b`` or a comma list of these."""
    intervals = []
    pos = 0
    for element in text.split(","):
        start = pos + (len(element) - len(element.lstrip()))
        token = element.strip()
        if not token:
            raise IpParseError("empty address element", text, start)
        if "/" in token:
            addr, _, prefix = token.partition("/")
            base = _parse_addr(addr, text, start)
            if not prefix.isdigit() or not 0 <= int(prefix) <= 32:
                raise IpParseError(f"malformed prefix {prefix!r}", text, start + len(addr) + 1)
            net = ipaddress.IPv4Network((base, int(prefix)), strict=False)
            intervals.append((int(net.network_address), int(net.broadcast_address)))
        elif "-" in token:
            lo_s, _, hi_s = token.partition("-")
            lo = _parse_addr(lo_s.strip(), text, start)
            hi = _parse_addr(hi_s.strip(), text, start + len(lo_s) + 1)
            if lo > hi:
                raise IpParseError(f"range {token!r} is reversed", text, start)
            intervals.append((lo, hi))
        else:
            value = _parse_addr(token, text, start)
            intervals.append((value, value))
        pos += len(element) + 1
    return IpIntervalSet(intervals)


def union(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    return a | b


def intersect(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    return a & b


def complement(a: IntervalSet) -> IntervalSet:
    return ~a


def difference(a: IntervalSet, b: IntervalSet) -> IntervalSet:
    return a - b


def atomize(sets: Sequence[IntervalSet], kind: type[IntervalSet] = IpIntervalSet) -> list:
    """Coarsest partition of the whole space in which every input set is a union of parts.

    Parts group every address that has the same membership across all inputs,
    so one part may consist of several disjoint intervals.  Parts are ordered
    by their lowest member.
    """
    if sets:
        kind = type(sets[0])
    top = kind.top()
    cuts = {0, top + 1}
    for s in sets:
        for lo, hi in s.intervals:
            cuts.add(lo)
            cuts.add(hi + 1)
    bounds = sorted(cuts)
    groups: dict[tuple[bool, ...], list[tuple[int, int]]] = {}
    for lo, nxt in zip(bounds, bounds[1:]):
        signature = tuple(lo in s for s in sets)
        groups.setdefault(signature, []).append((lo, nxt - 1))
    parts = [kind(ivs) for ivs in groups.values()]
    parts.sort(key=lambda p: p.lowest())
    return parts
