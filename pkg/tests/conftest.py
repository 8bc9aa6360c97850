from functools import lru_cache

import pytest

from clusterbft.harness.checks import check_all
from clusterbft.harness.runner import run
from clusterbft.harness.scenario import load_scenario


@lru_cache(maxsize=64)
def cached_run(name: str, seed: int, **overrides):
    """Run a packaged scenario once per (name, seed, protocol overrides) for the session."""
    sc = load_scenario(name)
    for k, v in overrides.items():
        setattr(sc.protocol, k, v)
    res = run(sc, seed)
    return res, check_all(res.trace, res.status)


@pytest.fixture
def run_packaged():
    return cached_run


ACCEPTANCE: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
