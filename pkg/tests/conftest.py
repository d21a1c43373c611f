import os

import pytest
import torch

torch.set_num_threads(int(os.environ.get("GBLAB_THREADS", "1")))


def pytest_addoption(parser):
    parser.addoption("--run-long", action="store_true", help="run desk-scale training criteria (hours)")
    parser.addoption("--run-xlong", action="store_true", help="run the multi-seed GENESIS decomposition study")


def pytest_collection_modifyitems(config, items):
    for item in items:
        if "long" in item.keywords and not config.getoption("--run-long"):
            item.add_marker(pytest.mark.skip(reason="long-running; pass --run-long"))
        if "xlong" in item.keywords and not config.getoption("--run-xlong"):
            item.add_marker(pytest.mark.skip(reason="very long-running; pass --run-xlong"))


_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _acceptance.items():
        name = nodeid.split("::")[-1]
        label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
        terminalreporter.write_line(f"[{label}] {name}")
