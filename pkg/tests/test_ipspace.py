import ipaddress
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fwsynth.ipspace import (
    IpIntervalSet,
    IpParseError,
    PortSet,
    atomize,
    complement,
    difference,
    intersect,
    ip_to_str,
    parse_ip_expr,
    str_to_ip,
    union,
)

TOP16 = (1 << 16) - 1
ALL16 = (1 << 65536) - 1


def to_bits(s: PortSet) -> int:
    bits = 0
    for lo, hi in s.intervals:
        bits |= ((1 << (hi - lo + 1)) - 1) << lo
    return bits


def from_bits(bits: int) -> PortSet:
    # independent decoder: runs of ones in the binary string, lowest bit first
    text = format(bits, "b")[::-1]
    return PortSet((m.start(), m.end() - 1) for m in re.finditer("1+", text))


bounds = st.integers(0, TOP16)
interval = st.tuples(bounds, bounds).map(lambda t: (min(t), max(t)))
small_interval = st.tuples(bounds, st.integers(0, 64)).map(lambda t: (t[0], min(TOP16, t[0] + t[1])))
portsets = st.lists(st.one_of(interval, small_interval), max_size=6).map(PortSet)


@settings(max_examples=10_000, deadline=None)
@given(portsets, portsets, bounds)
def test_algebra_matches_bitset_oracle(a, b, x):
    ba, bb = to_bits(a), to_bits(b)
    assert to_bits(a | b) == ba | bb
    assert to_bits(a & b) == ba & bb
    assert to_bits(~a) == ALL16 ^ ba
    assert to_bits(a - b) == ba & ~bb
    assert to_bits(a ^ b) == ba ^ bb
    assert (x in a) == bool((ba >> x) & 1)
    assert a.issubset(b) == (ba & ~bb == 0)
    assert a.isdisjoint(b) == (ba & bb == 0)
    assert a.size() == bin(ba).count("1")
    assert (a == b) == (ba == bb)
    assert from_bits(ba) == a


@given(portsets)
def test_canonical_form(a):
    ivs = a.intervals
    assert all(lo <= hi for lo, hi in ivs)
    assert all(h1 + 1 < l2 for (_, h1), (l2, _) in zip(ivs, ivs[1:]))
    assert ~~a == a
    assert a | ~a == PortSet.full()
    assert (a & ~a).is_empty()


@given(portsets, portsets, portsets)
def test_de_morgan_and_distributivity(a, b, c):
    assert ~(a | b) == ~a & ~b
    assert a & (b | c) == (a & b) | (a & c)
    assert union(a, b) == a | b
    assert intersect(a, b) == a & b
    assert complement(a) == ~a
    assert difference(a, b) == a - b


@settings(max_examples=300)
@given(st.lists(portsets, min_size=1, max_size=5))
def test_atomize_is_a_refining_partition(sets):
    atoms = atomize(sets, PortSet)
    acc = PortSet.empty()
    for atom in atoms:
        assert not atom.is_empty()
        assert acc.isdisjoint(atom)
        acc |= atom
        for s in sets:
            # every input set either contains the atom or misses it entirely
            assert atom.issubset(s) or atom.isdisjoint(s)
    assert acc.is_full()
    # atoms with equal membership would have been grouped
    sigs = [tuple(a.lowest() in s for s in sets) for a in atoms]
    assert len(set(sigs)) == len(sigs)
    assert [a.lowest() for a in atoms] == sorted(a.lowest() for a in atoms)


@given(st.integers(0, 2**32 - 1))
def test_ip_string_round_trip(v):
    assert str_to_ip(ip_to_str(v)) == v
    assert ip_to_str(v) == str(ipaddress.IPv4Address(v))


@given(st.lists(st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 2**20)), max_size=4))
def test_iptables_list_and_cidrs_round_trip(pairs):
    s = IpIntervalSet((lo, min(lo + n, 2**32 - 1)) for lo, n in pairs)
    if s.is_empty():
        return
    assert parse_ip_expr(s.iptables_list()) == s
    net = IpIntervalSet.empty()
    for c in s.cidrs():
        net |= IpIntervalSet.range(int(c.network_address), int(c.broadcast_address))
    assert net == s


def test_parse_forms():
    assert parse_ip_expr("10.0.0.0/8") == IpIntervalSet.range(str_to_ip("10.0.0.0"), str_to_ip("10.255.255.255"))
    assert parse_ip_expr("10.0.0.7/8") == parse_ip_expr("10.0.0.0/8")
    assert parse_ip_expr("10.0.0.1,10.0.0.42").size() == 2
    assert parse_ip_expr("10.0.0.0-10.255.255.255") == parse_ip_expr("10.0.0.0/8")
    assert parse_ip_expr("0.0.0.0/0").is_full()
    assert parse_ip_expr("193.99.144.80/32") == parse_ip_expr("193.99.144.80")


@pytest.mark.parametrize("bad", ["", "10.0.0", "10.0.0.256", "10.0.0.0/33", "10.0.0.5-10.0.0.1", "a.b.c.d", "10.0.0.1,,10.0.0.2"])
def test_parse_rejects(bad):
    with pytest.raises(IpParseError):
        parse_ip_expr(bad)


def test_labels():
    assert parse_ip_expr("10.0.0.4").label() == "{10.0.0.4}"
    assert parse_ip_expr("10.0.0.1,10.0.0.42").label() == "{10.0.0.1,10.0.0.42}"
    assert (~parse_ip_expr("10.0.0.0/8")).label() == "{0.0.0.0 .. 9.255.255.255} ∪ {11.0.0.0 .. 255.255.255.255}"
    rest = parse_ip_expr("10.0.0.0/8") - parse_ip_expr("10.0.0.1-10.0.0.4,10.0.0.42")
    assert rest.label() == "{10.0.0.0} ∪ {10.0.0.5 .. 10.0.0.41} ∪ {10.0.0.43 .. 10.255.255.255}"
    assert IpIntervalSet.full().label() == "{0.0.0.0 .. 255.255.255.255}"
    assert IpIntervalSet.empty().label() == "{}"


def test_ports():
    assert PortSet.parse("22") == PortSet.single(22)
    assert PortSet.parse("1:1024") == PortSet.range(1, 1024)
    assert PortSet.parse("22,80").size() == 2
    assert PortSet.parse("22,80").render() == "22,80"
    with pytest.raises(ValueError):
        PortSet.parse("70000")


def test_immutable_and_hashable():
    s = parse_ip_expr("10.0.0.1")
    with pytest.raises(AttributeError):
        s.intervals = ()
    assert len({s, parse_ip_expr("10.0.0.1")}) == 1
    assert PortSet.single(1) != IpIntervalSet.single(1)
