import json
from importlib import resources

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def parser_corpus():
    text = (resources.files("timesuite") / "data" / "parser_corpus.jsonl").read_text(encoding="utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.fixture
def tgc_fixture_path():
    with resources.as_file(resources.files("timesuite") / "data" / "tgc_fixture.jsonl") as path:
        yield path


_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _acceptance.append(report)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for rep in _acceptance:
        status = "PASS" if rep.passed else "FAIL"
        terminalreporter.write_line(f"{status}  {rep.nodeid.split('::')[-1]}")
