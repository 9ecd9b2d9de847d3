"""Run mypy once over the package and the compile-fail programs."""

from __future__ import annotations

import functools
import re
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path


HERE = Path(__file__).parent
CASES = HERE / "compile_fail"
SRC = HERE.parent / "src" / "ssufs"


@dataclass(frozen=True)
class Outcome:
    case: str
    expected: str | None  # None for positive controls
    errors: tuple[str, ...]

    @property
    def ok(self) -> bool:
        if self.expected is None:
            return not self.errors
        return any(self.expected in e for e in self.errors)


def expectation(path: Path) -> str | None:
    m = re.search(r"^# expect: (.+)$", path.read_text(), re.M)
    return m.group(1).strip() if m else None


@functools.lru_cache(maxsize=1)
def run() -> tuple[tuple[Outcome, ...], tuple[str, ...]]:
    """Outcomes per case plus any errors reported inside the package itself."""
    # separate process: in-process mypy retunes the gc and slows every later test
    proc = subprocess.run(
        [sys.executable, "-m", "mypy", "--strict", "--no-error-summary", "--hide-error-context", str(SRC), str(CASES)],
        capture_output=True, text=True, check=False,
    )
    stdout = proc.stdout
    by_file: dict[str, list[str]] = {}
    for line in stdout.splitlines():
        if ": error:" in line:
            by_file.setdefault(Path(line.split(":", 1)[0]).resolve().as_posix(), []).append(line)
    outcomes = tuple(
        Outcome(p.stem, expectation(p), tuple(by_file.get(p.resolve().as_posix(), [])))
        for p in sorted(CASES.glob("*.py"))
    )
    pkg = tuple(e for f, errs in by_file.items() if f.startswith(SRC.resolve().as_posix()) for e in errs)
    return outcomes, pkg
