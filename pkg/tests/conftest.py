import functools

import pytest

from skylink import harness, load_scenario, verify_trace


@functools.lru_cache(maxsize=None)
def scenario(name: str):
    return load_scenario(name)


@functools.lru_cache(maxsize=64)
def records(name: str, seed: int = 42) -> tuple:
    return tuple(harness.run(scenario(name), seed).trace.all_records())


@functools.lru_cache(maxsize=64)
def report(name: str, seed: int = 42):
    return verify_trace(list(records(name, seed)))


def kinds(recs, kind):
    return [r for r in recs if r["kind"] == kind]


def notes(recs, what):
    return [r for r in recs if r["kind"] == "StateChange" and r.get("what") == what]


def outcomes(recs, workflow=None, src=None):
    return [
        r["payload"]
        for r in notes(recs, "workflow_outcome")
        if (workflow is None or r["payload"]["workflow"] == workflow) and (src is None or r["src"] == src)
    ]


def variant(base: str, name: str = "variant", **patch):
    """A bundled fixture with top-level sections replaced (lists) or merged (dicts)."""
    return scenario(base).with_changes(name=name, **patch)


@pytest.fixture
def nominal():
    return scenario("nominal")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
