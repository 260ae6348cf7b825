import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RULESETS, fixture_text
from fwsynth.ipspace import IpIntervalSet, PortSet, parse_ip_expr
from fwsynth.iptables import (
    Action,
    BothPorts,
    Chain,
    CtState,
    Dst,
    DstPorts,
    IIface,
    IptablesParseError,
    Jump,
    OIface,
    Protocol,
    Rule,
    Ruleset,
    Src,
    SrcPorts,
    Unknown,
    parse_save,
    render_rule,
    render_save,
)


def one(text: str) -> Rule:
    return parse_save(f"*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD {text}\nCOMMIT\n")["FORWARD"].rules[0]


def test_reference_ruleset_shape(ruleset):
    rs = ruleset("docker_initial.save")
    assert rs.names() == ["INPUT", "FORWARD", "OUTPUT", "DOCKER", "DOCKER-ISOLATION", "MYNET"]
    assert rs["FORWARD"].policy is Action.ACCEPT
    assert rs["MYNET"].policy is None
    assert len(rs["FORWARD"].rules) == 10
    assert len(rs["MYNET"].rules) == 16
    assert rs["FORWARD"].rules[1].target == Jump("MYNET")
    assert rs["DOCKER-ISOLATION"].rules[-1].target is Action.RETURN


@pytest.mark.parametrize("name", RULESETS)
def test_fixture_rule_counts(name, ruleset):
    text = fixture_text(name)
    expected = sum(1 for line in text.splitlines() if line.startswith(("-A", "-I")))
    assert sum(len(c.rules) for c in ruleset(name).chains) == expected


def test_rule_atoms():
    r = one("-m state --state ESTABLISHED ! -i dockerbr -o dockerbr -d 10.0.0.4 -j ACCEPT")
    assert r.matches == (
        CtState(frozenset({"ESTABLISHED"})),
        IIface("dockerbr", True),
        OIface("dockerbr", False),
        Dst(parse_ip_expr("10.0.0.4")),
    )
    assert r.target is Action.ACCEPT
    r = one("-p tcp -m tcp --dport 22 -j ACCEPT")
    assert r.matches == (Protocol("tcp"), DstPorts(PortSet.single(22)))
    r = one("-p tcp -m state --state ESTABLISHED -m multiport --ports 22 -j ACCEPT")
    assert r.matches[-1] == BothPorts(PortSet.single(22))
    r = one("-m conntrack --ctstate RELATED,ESTABLISHED -j ACCEPT")
    assert r.matches == (CtState(frozenset({"RELATED", "ESTABLISHED"})),)
    r = one("! -s 10.0.0.0/8 --sport 1:1024 -j DROP")
    assert r.matches == (Src(~parse_ip_expr("10.0.0.0/8")), SrcPorts(PortSet.range(1, 1024)))


def test_iprange_and_multi_addresses():
    r = one("-s 10.0.0.1,10.0.0.42 -m iprange ! --dst-range 10.0.0.0-10.255.255.255 -j ACCEPT")
    assert r.matches == (Src(parse_ip_expr("10.0.0.1,10.0.0.42")), Dst(~parse_ip_expr("10.0.0.0/8")))
    with pytest.raises(IptablesParseError, match="negation is not allowed with multiple source or destination IP addresses"):
        one("-s 10.0.0.1,10.0.0.42 ! -d 10.0.0.0/8 -j ACCEPT")


def test_unknown_modules_are_kept_verbatim():
    r = one("-d 193.99.144.80 -m recent --set --name rateheise --rsource")
    assert r.matches == (Dst(parse_ip_expr("193.99.144.80")), Unknown("-m recent --set --name rateheise --rsource"))
    assert r.target is Action.NOOP
    r = one("-d 193.99.144.80 -m recent --update --seconds 60 --hitcount 3 --name rateheise --rsource -j DROP")
    assert r.matches[1] == Unknown("-m recent --update --seconds 60 --hitcount 3 --name rateheise --rsource")
    assert r.target is Action.DROP


def test_insert_positions():
    rs = parse_save(
        "*filter\n:FORWARD DROP [0:0]\n"
        "-A FORWARD -s 10.0.0.1 -j ACCEPT\n-A FORWARD -s 10.0.0.2 -j ACCEPT\n"
        "-I FORWARD -s 10.0.0.3 -j ACCEPT\n-I FORWARD 3 -s 10.0.0.4 -j ACCEPT\nCOMMIT\n"
    )
    srcs = [r.matches[0].ips.iptables_list() for r in rs["FORWARD"].rules]
    assert srcs == ["10.0.0.3", "10.0.0.1", "10.0.0.4", "10.0.0.2"]


def test_headerless_input_and_other_tables():
    rs = parse_save(":FORWARD DROP [0:0]\n-A FORWARD -j ACCEPT\n")
    assert rs["FORWARD"].policy is Action.DROP
    assert rs["INPUT"].policy is Action.ACCEPT
    with pytest.warns(UserWarning, match="nat"):
        rs = parse_save("*nat\n:PREROUTING ACCEPT [0:0]\nCOMMIT\n*filter\n:FORWARD DROP [0:0]\nCOMMIT\n")
    assert rs["FORWARD"].rules == ()
    rs = parse_save("*filter\n:FORWARD ACCEPT [0:0]\n[5:300] -A FORWARD -j DROP\nCOMMIT\n")
    assert rs["FORWARD"].rules[0].target is Action.DROP


@pytest.mark.parametrize(
    "text,message",
    [
        ("*filter\n-A NOPE -j ACCEPT\nCOMMIT\n", "not declared"),
        ("*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD -j NOWHERE\nCOMMIT\n", "unknown chain or unsupported target"),
        ("*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD -g X\nCOMMIT\n", "GOTO"),
        ("*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD -s 10.0.0.300 -j DROP\nCOMMIT\n", "10.0.0.300"),
        ("*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD --bogus -j DROP\nCOMMIT\n", "unexpected token"),
        ("*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD -p gre -j DROP\nCOMMIT\n", "unsupported protocol"),
        ("*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD -m state --state BOGUS -j DROP\nCOMMIT\n", "connection state"),
        ("*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD -j DROP --reject-with x\nCOMMIT\n", "takes no options"),
        ("*filter\n:FORWARD - [0:0]\nCOMMIT\n", "needs a policy"),
        ("*filter\n:FORWARD ACCEPT [0:0]\n-I FORWARD 5 -j DROP\nCOMMIT\n", "out of range"),
        ("*nat\nCOMMIT\n", "no \\*filter"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(IptablesParseError, match=message):
        parse_save(text)


def test_error_carries_line_number():
    with pytest.raises(IptablesParseError) as info:
        parse_save("*filter\n:FORWARD ACCEPT [0:0]\n-A FORWARD -j ACCEPT\n-A FORWARD -x\nCOMMIT\n")
    assert info.value.line == 4


def test_render_examples():
    r = Rule((IIface("dockerbr"), Src(parse_ip_expr("10.0.0.1,10.0.0.42")), OIface("dockerbr", True), Dst(~parse_ip_expr("10.0.0.0/8"))), Action.ACCEPT)
    assert render_rule("FORWARD", r) == (
        "-A FORWARD -i dockerbr -s 10.0.0.1,10.0.0.42 ! -o dockerbr -m iprange ! --dst-range 10.0.0.0-10.255.255.255 -j ACCEPT"
    )
    r = Rule((IIface("dockerbr", True), Src(~parse_ip_expr("10.0.0.0/8"))), Action.ACCEPT)
    assert render_rule("FORWARD", r) == "-A FORWARD ! -i dockerbr ! -s 10.0.0.0/8 -j ACCEPT"


@pytest.mark.parametrize("name", RULESETS)
def test_fixture_round_trip(name, ruleset):
    rs = ruleset(name)
    assert parse_save(render_save(rs)) == rs


# -- random round trip -----------------------------------------------------

ip_sets = st.lists(
    st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 2**24)), min_size=1, max_size=3
).map(lambda ps: IpIntervalSet((lo, min(lo + n, 2**32 - 1)) for lo, n in ps))
port_sets = st.lists(st.tuples(st.integers(0, 65535), st.integers(0, 2000)), min_size=1, max_size=3).map(
    lambda ps: PortSet((lo, min(lo + n, 65535)) for lo, n in ps)
)
ifaces = st.sampled_from(["eth0", "dockerbr", "docker0", "br+"])
atoms = st.one_of(
    st.builds(IIface, ifaces, st.booleans()),
    st.builds(OIface, ifaces, st.booleans()),
    st.builds(Src, ip_sets),
    st.builds(Dst, ip_sets),
    st.builds(Protocol, st.sampled_from(["tcp", "udp"]), st.booleans()),
    st.builds(SrcPorts, port_sets),
    st.builds(DstPorts, port_sets),
    st.builds(BothPorts, st.sampled_from([PortSet.single(22), PortSet.parse("22,80")])),
    st.builds(CtState, st.sets(st.sampled_from(["NEW", "ESTABLISHED", "RELATED"]), min_size=1).map(frozenset)),
    st.just(Unknown("-m recent --set --name x --rsource")),
    st.just(Unknown("-m limit --limit 5/min")),
)
targets = st.sampled_from([Action.ACCEPT, Action.DROP, Action.NOOP, Jump("USER")])
rules = st.builds(Rule, st.lists(atoms, max_size=5).map(tuple), targets)


@settings(max_examples=500, deadline=None)
@given(st.lists(rules, max_size=6), st.sampled_from([Action.ACCEPT, Action.DROP]))
def test_render_parse_round_trip(fwd, policy):
    rs = Ruleset((
        Chain("INPUT", Action.ACCEPT),
        Chain("FORWARD", policy, tuple(fwd)),
        Chain("OUTPUT", Action.ACCEPT),
        Chain("USER", None, (Rule((), Action.RETURN),)),
    ))
    assert parse_save(render_save(rs)) == rs
