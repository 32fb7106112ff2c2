from __future__ import annotations

import json
from pathlib import Path

import pytest

from warsim.scenario import builtin_path, load_scenario

WWI = ("Britain", "France", "German Empire", "Austria-Hungary", "Russia", "Serbia", "United States", "Ottoman Empire")


@pytest.fixture(scope="session")
def wwi():
    return load_scenario("wwi")


@pytest.fixture(scope="session")
def fixture_path() -> Path:
    path = builtin_path("fixtures", "wwi_gpt4_run")
    assert path is not None
    return path


@pytest.fixture(scope="session")
def fixture_doc(fixture_path):
    return json.loads(fixture_path.read_text(encoding="utf-8"))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
