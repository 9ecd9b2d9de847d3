from __future__ import annotations

import json

from conftest import GOLDEN
from fence_scenarios import measure


def golden() -> dict[str, int]:
    raw = json.loads((GOLDEN / "fence_counts.json").read_text())
    return {k: v["fences"] for k, v in raw.items()}


def test_fence_counts_match_golden_table() -> None:
    got = measure()
    want = golden()
    assert got.keys() == want.keys()
    diff = {k: (want[k], got[k]) for k in want if want[k] != got[k]}
    assert not diff, f"fence regressions (golden, measured): {diff}"
