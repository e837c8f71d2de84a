"""Shared fixtures and the acceptance-criterion report.

Tests tagged ``@pytest.mark.criterion(n, "name")`` are grouped by criterion
and one ``AC<n> PASS|FAIL|SKIP <name>`` line per criterion is printed at the
end of the run. A criterion passes only if every test tagged with it passed.
"""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(Path(__file__).resolve().parent))

ROUNDS = ROOT / "fixtures" / "rounds"
TREND = ROOT / "tests" / "fixtures" / "trend"
SCENARIOS = ROOT / "scenarios"

_criteria: dict[int, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            n, name = mark.args
            _criteria.setdefault(n, {"name": name, "outcomes": []})


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and (report.failed or report.skipped)):
        return
    for n, entry in _criteria.items():
        if any(k == f"criterion_{n}" for k in report.keywords):
            entry["outcomes"].append(report.outcome)


def pytest_itemcollected(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.keywords[f"criterion_{mark.args[0]}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        entry = _criteria[n]
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif any(o == "failed" for o in outcomes):
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"AC{n} {status} {entry['name']}")


@pytest.fixture(scope="session")
def wss_dir():
    return ROUNDS / "wizard_spider_sandworm"


@pytest.fixture(scope="session")
def wss_round(wss_dir):
    from attackeval.ingest import parse_round
    from attackeval.normalize import normalize_round
    return normalize_round(parse_round(wss_dir))


@pytest.fixture(scope="session")
def carbanak_round():
    from attackeval.ingest import parse_round
    from attackeval.normalize import normalize_round
    return normalize_round(parse_round(ROUNDS / "carbanak_fin7"))


@pytest.fixture(scope="session")
def wss_scenario():
    from attackeval.graph import load_scenario
    return load_scenario(SCENARIOS / "wss.jsonl")


@pytest.fixture(scope="session")
def wss_graph(wss_scenario):
    from attackeval.graph import build_graph
    return build_graph(wss_scenario)


@pytest.fixture(scope="session")
def wss_truth():
    from attackeval.graph import load_truth
    return load_truth(SCENARIOS / "wss.truth")
