from __future__ import annotations

import pytest

from compile_suite import CASES, expectation, run


def test_package_type_checks_cleanly() -> None:
    assert run()[1] == ()


def test_every_case_declares_expectation_or_is_control() -> None:
    for p in CASES.glob("*.py"):
        assert (expectation(p) is None) == p.stem.startswith("ok_"), p.name


@pytest.mark.parametrize("case", sorted(p.stem for p in CASES.glob("*.py")))
def test_case(case: str) -> None:
    (outcome,) = [o for o in run()[0] if o.case == case]
    assert outcome.ok, f"expected {outcome.expected!r}, mypy said {outcome.errors}"


def test_negative_count() -> None:
    assert sum(o.expected is not None for o in run()[0]) >= 12
