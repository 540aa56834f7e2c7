import numpy as np
import pytest

from filtercut.image import Image

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""

    def _report(label: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f" :: {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def random_gray(size, seed, width=None):
    rng = np.random.default_rng(seed)
    return Image(rng.uniform(0.0, 1.0, (size, width or size, 1)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
