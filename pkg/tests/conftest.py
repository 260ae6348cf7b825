from pathlib import Path

import pytest

from fwsynth.formats import load_scenario, parse_edges, parse_ipassmt
from fwsynth.iptables import parse_save

FIXTURES = Path(__file__).parent / "fixtures"
RULESETS = ["docker_initial.save", "docker_ratelimit.save", "docker_tightened.save", "docker_webdev.save", "fresh.save", "final_open_established.save", "final.save"]


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def scenario_file():
    return load_scenario(fixture_text("scenario.json"))


@pytest.fixture(scope="session")
def scenario(scenario_file):
    return scenario_file.scenario


@pytest.fixture(scope="session")
def edges_of(scenario):
    def load(name: str):
        return parse_edges(fixture_text(name), scenario.entities)
    return load


@pytest.fixture(scope="session")
def ipassmt():
    return parse_ipassmt(fixture_text("reference.ipassmt"))


@pytest.fixture(scope="session")
def ruleset():
    cache = {}

    def load(name: str):
        if name not in cache:
            cache[name] = parse_save(fixture_text(name))
        return cache[name]
    return load
