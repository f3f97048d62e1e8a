import time

import pytest

from laserphm import cli

ACCEPTANCE_LINES: list[str] = []


def report_criterion(name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def run_pipeline(out_dir):
    """generate -> train -> evaluate with the default (acceptance) config."""
    start = time.perf_counter()
    code = cli.main(["pipeline", "--seed", "42", "--out", str(out_dir)])
    return code, time.perf_counter() - start


@pytest.fixture(scope="session")
def acceptance_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_a")
    code, seconds = run_pipeline(out)
    assert code == 0
    return out, seconds


@pytest.fixture(scope="session")
def acceptance_rerun(tmp_path_factory, acceptance_run):
    out = tmp_path_factory.mktemp("acceptance_b")
    code, seconds = run_pipeline(out)
    assert code == 0
    return out, seconds
