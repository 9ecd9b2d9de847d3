"""Acceptance criteria 1 to 8, each with its stated tolerance.

Every test records a one-line verdict; conftest prints them together at the
end of the run so the summary survives output capture.
"""

from __future__ import annotations

import json
import time
from collections.abc import Iterator

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compile_suite import run as run_mypy
from conftest import GOLDEN, WORKLOADS, fresh_fs
from fence_scenarios import measure
from ssufs import layout as L
from ssufs import model as M
from ssufs.crashcheck import (
    Workload,
    apply_op,
    generate_workloads,
    run_crash_test,
    run_workload,
    tree_signature,
)
from ssufs.errors import FsError
from ssufs.faults import FAULT_WORKLOADS, FAULTS, faulty_factory
from ssufs.fsops import Fs
from ssufs.pmem import PmDevice
from ssufs.volatile import rebuild

pytestmark = pytest.mark.slow

VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict(request: pytest.FixtureRequest) -> Iterator[list[str]]:
    """Collects the detail text; the line is PASS only if the test body finished."""
    n = int(request.node.name.split("_")[1])
    detail: list[str] = []
    t0 = time.monotonic()
    VERDICTS[n] = f"criterion {n}: FAIL"
    yield detail
    VERDICTS[n] = f"criterion {n}: PASS {'; '.join(detail)} ({time.monotonic() - t0:.1f}s)"


def fail_line(n: int, why: str) -> None:
    VERDICTS[n] = f"criterion {n}: FAIL {why}"


def test_1_compile_fail_suite(verdict: list[str]) -> None:
    t0 = time.monotonic()
    outcomes, pkg_errors = run_mypy()
    negatives = [o for o in outcomes if o.expected is not None]
    bad = [o.case for o in outcomes if not o.ok]
    if bad or pkg_errors:
        fail_line(1, f"unexpected mypy outcome for {bad or pkg_errors}")
    assert not bad and not pkg_errors
    names = {o.case for o in negatives}
    assert len(negatives) >= 8
    # uninitialized inode committed, size update before its pages are fenced,
    # link dropped before the entry is durably cleared
    assert {"commit_free_inode", "set_size_unfenced_pages", "dec_link_clear_not_durable"} <= names
    free = next(o for o in negatives if o.case == "commit_free_inode")
    assert any('"Inode[Clean, Free]"; expected "Inode[Clean, Init]"' in e for e in free.errors)
    assert time.monotonic() - t0 < 120
    verdict.append(f"{len(negatives)} programs rejected, control accepted")


SUITES = [
    "create", "mkdir", "append", "overwrite", "unlink", "rmdir",
    "rename-same-dir", "rename-cross-dir", "rename-overwrite",
]


def test_2_crash_enumeration_suites(verdict: list[str]) -> None:
    t0 = time.monotonic()
    total = 0
    failed = []
    for name in SUITES:
        v = run_crash_test(Workload.load(WORKLOADS / f"{name}.workload"), cap=4096, seed=0)
        total += v.states
        if not v.ok:
            failed.append(v.render())
    if failed:
        fail_line(2, failed[0].splitlines()[0])
    assert not failed, "\n".join(failed)
    assert time.monotonic() - t0 < 600
    verdict.append(f"{len(SUITES)} suites, {total} crash states, 0 failures")


def test_3_mutation_sensitivity(verdict: list[str]) -> None:
    caught = []
    for fault in sorted(FAULTS):
        v = run_crash_test(Workload.parse(FAULT_WORKLOADS[fault]), factory=faulty_factory(fault), max_failures=1)
        if not v.ok:
            caught.append(fault)
    if len(caught) < 5:
        fail_line(3, f"only {caught} detected")
    assert len(caught) >= 5
    verdict.append(f"{len(caught)}/{len(FAULTS)} faults detected")


def test_4_model_checker(verdict: list[str]) -> None:
    t0 = time.monotonic()
    good = M.check(M.Bounds(2, 8, 24))
    bad = M.check(M.Bounds(2, 8, 24), M.Toggles(rename_recovery=False))
    if not good.ok or "REAPPEAR" not in bad.found:
        fail_line(4, f"default={good.render().split()[0]} disabled={sorted(bad.found)}")
    assert good.ok
    assert "REAPPEAR" in bad.found
    trace = bad.found["REAPPEAR"][1]
    assert M.replay(M.Bounds(2, 8, 24), M.Toggles(rename_recovery=False), trace) is not None
    assert time.monotonic() - t0 < 900
    verdict.append(f"default pass over {good.states} states; reappear trace of {len(trace)} steps")


def test_5_rebuild_equivalence(verdict: list[str]) -> None:
    mismatches = 0
    for seed in range(100):
        (wl,) = generate_workloads("mixed", 1, seed=seed, length=1000)
        dev = PmDevice(4 << 20)
        L.mkfs(dev)
        fs = Fs.mount(dev, clock=lambda: 0)
        run_workload(fs, wl)
        online = fs.vol.signature()
        fs.unmount()
        if rebuild(dev).signature() != online:
            mismatches += 1
    if mismatches:
        fail_line(5, f"{mismatches} mismatches")
    assert mismatches == 0
    verdict.append("100 workloads x 1000 ops, 0 mismatches")


def test_6_synchronous_durability(verdict: list[str]) -> None:
    (wl,) = generate_workloads("mixed", 1, seed=6, length=200)
    fs = fresh_fs(trace=True)
    assert fs.dev.trace is not None
    checked = fsyncs = 0
    for op in wl.ops:
        try:
            apply_op(fs, op)
        except FsError:
            continue
        # crash right now: nothing outstanding, so the media is the only state
        assert not fs.dev.has_pending()
        want = tree_signature(fs)
        crashed = Fs.mount(PmDevice.from_image(bytes(fs.dev.media)), clock=lambda: 0)
        assert tree_signature(crashed) == want
        checked += 1
        for ino in {L.ROOT_INO, *(v[0] for v in want.values())}:
            fs.dev.trace.clear()
            fs.fsync(ino)
            assert fs.dev.trace.events == []
            fsyncs += 1
    assert checked >= 150
    verdict.append(f"{checked} syscalls visible after crash, {fsyncs} fsyncs emitted 0 events")


@settings(max_examples=200, deadline=None)
@given(st.integers(L.MIN_CAPACITY, 1 << 34))
def _geometry_ratio(capacity: int) -> None:
    geo = L.compute_geometry(capacity)
    data = geo.num_pages * L.PAGE_SIZE
    assert geo.num_inodes == -(-data // L.BYTES_PER_INODE)
    assert geo.data_base + data <= capacity


def test_7_layout_constants(verdict: list[str]) -> None:
    assert L.DENTRY_SIZE == 128 and L.NAME_MAX == 110
    assert len(L.DentryRecord(b"n" * 110, 1, 0).encode()) == 128
    with pytest.raises(L.LayoutError):
        L.DentryRecord(b"n" * 111, 1, 0).encode()
    _geometry_ratio()
    geo = L.compute_geometry(1 << 20)
    verdict.append(f"dentry 128 B / name 110 B; 1 MiB -> {geo.num_pages} pages, {geo.num_inodes} inodes")


def test_8_fence_economy(verdict: list[str]) -> None:
    raw = json.loads((GOLDEN / "fence_counts.json").read_text())
    want = {k: v["fences"] for k, v in raw.items()}
    got = measure()
    diff = {k: (want[k], got.get(k)) for k in want if want[k] != got.get(k)}
    if diff:
        fail_line(8, f"regressions {diff}")
    assert not diff and got.keys() == want.keys()
    verdict.append(f"{len(want)} operations match the golden table (mkdir={got['mkdir']})")

