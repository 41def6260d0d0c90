import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion; returns ``ok``."""
    def report(k: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_ACCEPTANCE[k])
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
