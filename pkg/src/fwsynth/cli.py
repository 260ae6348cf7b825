"""Command line front end.

Exit codes: 0 success, 1 violation, mismatch or difference, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path
from typing import Sequence

from .analysis import (
    ALLOW,
    DENY,
    ESTABLISHED,
    HTTP,
    NEW,
    SSH,
    AnalysisError,
    Service,
    analyze,
    matrix_diff,
    matrix_policy_compare,
    stateful_overview,
)
from .formats import FormatError, format_edges, load_scenario, parse_edges, parse_ipassmt
from .ipspace import parse_ip_expr
from .iptables import IptablesParseError, parse_save
from .policy import PolicyError
from .serializers import SerializationError, to_dfwfw, to_dot, to_iptables
from .synthesis import NotCompliant, make_stateful, synthesize_policy, verify_policy

OK, FAILED, USAGE = 0, 1, 2


class _Usage(Exception):
    pass


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _Usage(f"cannot read {path}: {exc.strerror}") from None


def _emit_dot(dest: str | None, text: str) -> None:
    if dest is None:
        return
    if dest == "-":
        sys.stdout.write(text)
    else:
        Path(dest).write_text(text, encoding="utf-8")


def _scenario_and_policy(args):
    sf = load_scenario(_read(args.scenario))
    g = parse_edges(_read(args.policy), sf.scenario.entities)
    return sf, g


def _services(args) -> list[Service]:
    if not args.service:
        return [SSH, HTTP]
    try:
        return [Service.parse(s) for s in args.service]
    except ValueError as exc:
        raise _Usage(str(exc)) from None


def _ipassmt(args):
    return parse_ipassmt(_read(args.ipassmt)) if args.ipassmt else {}


# -- policy direction ------------------------------------------------------

def cmd_synth(args) -> int:
    sf = load_scenario(_read(args.scenario))
    g = synthesize_policy(sf.scenario)
    sys.stdout.write(format_edges(g))
    _emit_dot(args.dot, to_dot(g))
    return OK


def cmd_check(args) -> int:
    sf, g = _scenario_and_policy(args)
    found = sorted(verify_policy(g, sf.scenario))
    _emit_dot(args.dot, to_dot(g, highlight=found))
    if not found:
        print("compliant")
        return OK
    for v in found:
        print(f"violation: {v}")
    return FAILED


def cmd_stateful(args) -> int:
    sf, g = _scenario_and_policy(args)
    sp = make_stateful(g, sf.scenario)
    sys.stdout.write(format_edges(g, sp.answer_edges))
    _emit_dot(args.dot, to_dot(sp))
    return OK


def cmd_generate(args) -> int:
    sf, g = _scenario_and_policy(args)
    if args.format == "dfwfw":
        violations = verify_policy(g, sf.scenario)
        if violations:
            raise NotCompliant(violations)
        sys.stdout.write(to_dfwfw(g, sf.dfwfw_binding()))
        return OK
    sp = make_stateful(g, sf.scenario)
    binding = sf.entity_binding(variables=args.variables)
    sys.stdout.write(to_iptables(sp, binding, sf.universe()))
    return OK


# -- ruleset direction -----------------------------------------------------

def _matrices(ruleset_text: str, args, service: Service):
    rs = parse_save(ruleset_text)
    assmt = _ipassmt(args)
    if args.state == "stateful":
        m, _ = stateful_overview(rs, args.chain, assmt, service, args.closure)
        return m
    state = NEW if args.state == "new" else ESTABLISHED
    return analyze(rs, args.chain, assmt, service, state, args.closure)


def cmd_analyze(args) -> int:
    text = _read(args.ruleset)
    services = _services(args)
    dots = []
    for svc in services:
        m = _matrices(text, args, svc)
        if len(services) > 1:
            print(f"# {svc}")
        print(m.describe())
        dots.append(to_dot(m, name=f"{svc.protocol}_{svc.dport}"))
    _emit_dot(args.dot, "".join(dots))
    return OK


def cmd_diff(args) -> int:
    text_a, text_b = _read(args.ruleset_a), _read(args.ruleset_b)
    services = _services(args)
    changed = False
    for svc in services:
        a = _matrices(text_a, args, svc)
        b = _matrices(text_b, args, svc)
        diffs = [("", matrix_diff(a, b))]
        if args.state == "stateful":
            # answer edges are compared as their own relation
            ans_a = type(a)(a.classes, a.answer_edges)
            ans_b = type(b)(b.classes, b.answer_edges)
            diffs.append(("answer ", matrix_diff(ans_a, ans_b)))
        for what, d in diffs:
            if d:
                changed = True
                print(f"# {svc} {what}edges")
                print(d.report())
    if not changed:
        print("no changes")
    return FAILED if changed else OK


def _parse_binds(pairs: Sequence[str]):
    out = {}
    for item in pairs:
        name, sep, expr = item.partition("=")
        if not sep or not name:
            raise _Usage(f"--bind expects ENTITY=ADDRESSES, got {item!r}")
        try:
            out[name] = parse_ip_expr(expr)
        except ValueError as exc:
            raise _Usage(f"--bind {name}: {exc}") from None
    return out


def cmd_compare(args) -> int:
    sf, g = _scenario_and_policy(args)
    sp = make_stateful(g, sf.scenario)
    universe = sf.universe()
    binding = {}
    if sf.bindings and universe is not None:
        binding = sf.entity_binding().addresses(universe)
    binding.update(_parse_binds(args.bind))
    if args.ipassmt:
        assmt = _ipassmt(args)
    elif universe is not None:
        assmt = {sf.entity_binding().bridge: universe}
    else:
        assmt = {}
    svc = _services(args)[0] if args.service else HTTP
    rs = parse_save(_read(args.ruleset))
    if args.state == "stateful":
        m, _ = stateful_overview(rs, args.chain, assmt, svc, args.closure)
    else:
        m = analyze(rs, args.chain, assmt, svc, NEW, args.closure)
    result = matrix_policy_compare(m, sp, binding, with_answers=args.state == "stateful")
    _emit_dot(args.dot, to_dot(m))
    if result:
        print("isomorphic")
        return OK
    print("not isomorphic")
    for line in result.mismatches:
        print(f"  {line}")
    return FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fwsynth", description="Synthesize and analyze container firewall policies.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_dot(sp):
        sp.add_argument("--dot", metavar="PATH", help="write a DOT graph to PATH ('-' for standard output)")
        return sp

    def with_analysis(sp, services_help):
        sp.add_argument("--service", action="append", default=[], help=services_help)
        sp.add_argument("--ipassmt", metavar="FILE", help="interface to address assignment")
        sp.add_argument("--closure", choices=[ALLOW, DENY], default=ALLOW)
        sp.add_argument("--chain", default="FORWARD")

    s = with_dot(sub.add_parser("synth", help="maximal policy allowed by a scenario"))
    s.add_argument("scenario")
    s.set_defaults(func=cmd_synth)

    s = with_dot(sub.add_parser("check", help="verify a policy against a scenario"))
    s.add_argument("scenario")
    s.add_argument("policy")
    s.set_defaults(func=cmd_check)

    s = with_dot(sub.add_parser("stateful", help="list the edges whose replies may flow back"))
    s.add_argument("scenario")
    s.add_argument("policy")
    s.set_defaults(func=cmd_stateful)

    s = sub.add_parser("generate", help="emit firewall configuration for a policy")
    s.add_argument("scenario")
    s.add_argument("policy")
    s.add_argument("--format", choices=["iptables", "dfwfw"], default="iptables")
    s.add_argument("--variables", action="store_true", help="use $NAME_ip placeholders instead of bound addresses")
    s.set_defaults(func=cmd_generate)

    state_choices = ["new", "established", "stateful"]
    s = with_dot(sub.add_parser("analyze", help="service matrix of an iptables-save dump"))
    s.add_argument("ruleset")
    s.add_argument("--state", choices=state_choices, default="new")
    with_analysis(s, "tcp:PORT, udp:PORT, ssh or http; repeatable (default: ssh and http)")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("diff", help="difference between the service matrices of two dumps")
    s.add_argument("ruleset_a")
    s.add_argument("ruleset_b")
    s.add_argument("--state", choices=state_choices, default="new")
    with_analysis(s, "tcp:PORT, udp:PORT, ssh or http; repeatable (default: ssh and http)")
    s.set_defaults(func=cmd_diff)

    s = with_dot(sub.add_parser("compare", help="check a dump against a stateful policy"))
    s.add_argument("ruleset")
    s.add_argument("scenario")
    s.add_argument("policy")
    s.add_argument("--bind", action="append", default=[], metavar="ENTITY=ADDRESSES",
                   help="override an entity's addresses; repeatable")
    s.add_argument("--state", choices=["new", "stateful"], default="stateful",
                   help="'new' ignores answer edges")
    with_analysis(s, "service to compare on (default: http)")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = lambda msg, *_a, **_k: print(f"warning: {msg}", file=sys.stderr)
        try:
            return args.func(args)
        except NotCompliant as exc:
            print(f"error: {exc}", file=sys.stderr)
            return FAILED
        except (_Usage, FormatError, IptablesParseError, PolicyError, AnalysisError, SerializationError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return USAGE


if __name__ == "__main__":
    sys.exit(main())
