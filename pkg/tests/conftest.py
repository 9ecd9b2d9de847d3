from __future__ import annotations

from pathlib import Path

import pytest

from ssufs import layout as L
from ssufs.fsops import Fs
from ssufs.pmem import PmDevice

ROOT = Path(__file__).resolve().parent.parent
WORKLOADS = ROOT / "workloads"
GOLDEN = Path(__file__).resolve().parent / "golden"


def fresh_fs(capacity: int = L.MIN_CAPACITY, trace: bool = False) -> Fs:
    dev = PmDevice(capacity, trace=trace)
    L.mkfs(dev)
    return Fs.mount(dev, clock=lambda: 0)


@pytest.fixture
def fs() -> Fs:
    return fresh_fs()


@pytest.fixture
def traced_fs() -> Fs:
    return fresh_fs(trace=True)


def pytest_terminal_summary(terminalreporter: pytest.TerminalReporter) -> None:
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
