import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mbsalloc.config import reference_cell  # noqa: E402

_criteria: dict[int, tuple[str, list[str]]] = {}


@pytest.fixture(scope="session")
def t1():
    return reference_cell()


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = next((m for m in report.keywords if m.startswith("criterion_")), None)
    if marker is None:
        return
    number = int(marker.split("_")[1])
    title, outcomes = _criteria.setdefault(number, (report.keywords.get("criterion_title", ""), []))
    outcomes.append(report.outcome)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            number, title = m.args
            item.keywords[f"criterion_{number}"] = True
            _criteria.setdefault(number, (title, []))


def pytest_terminal_summary(terminalreporter):
    if not any(outcomes for _, outcomes in _criteria.values()):
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcomes = _criteria[number]
        if not outcomes:
            continue
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}  ({len(outcomes)} checks)")
