from __future__ import annotations

import warnings

import pytest

from cdlab.diagnostics import DiskGrid, diagnose
from cdlab.scenarios import scenario_corpus


@pytest.fixture(scope="session")
def grid():
    return DiskGrid()


@pytest.fixture(scope="session")
def corpus():
    return {sc.name: sc for sc in scenario_corpus()}


@pytest.fixture(scope="session")
def reports(corpus, grid):
    """Lazy cache of diagnostics reports keyed by ``(scenario, alpha)``."""
    cache = {}

    def get(name, atom=None):
        sc = corpus[name]
        atom = atom or sc.atom
        key = (name, atom.label)
        if key not in cache:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                cache[key] = diagnose(sc.model(atom), grid)
        return cache[key]

    return get


_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
