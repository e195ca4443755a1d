from __future__ import annotations

import numpy as np
import pytest

from secure_stn.rate_metrics import ScenarioConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def scenario() -> ScenarioConfig:
    return ScenarioConfig()


_CRITERIA: list[str] = []


class _Criterion:
    def __init__(self, number: int, name: str):
        self.number, self.name, self.detail = number, name, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        tag = "PASS" if exc_type is None else "FAIL"
        detail = self.detail
        if exc_type is not None:
            msg = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
            detail = f"{detail} | {msg}" if detail else msg
        line = f"[{tag}] criterion {self.number} {self.name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    """``with criterion(n, name) as c:`` logs one PASS/FAIL line for an acceptance criterion."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
