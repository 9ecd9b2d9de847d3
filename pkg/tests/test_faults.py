from __future__ import annotations

import pytest

from ssufs import layout as L
from ssufs.crashcheck import Workload, run_crash_test
from ssufs.faults import FAULT_WORKLOADS, FAULTS, faulty_factory
from ssufs.pmem import PmDevice


def test_every_fault_has_a_workload() -> None:
    assert FAULTS.keys() == FAULT_WORKLOADS.keys()
    assert len(FAULTS) >= 5


def test_unknown_fault_rejected() -> None:
    with pytest.raises(ValueError, match="unknown fault"):
        faulty_factory("nope")


@pytest.mark.parametrize("fault", sorted(FAULTS))
def test_correct_build_passes_the_fault_workload(fault: str) -> None:
    # the workload alone is not what trips the harness
    wl = Workload.parse(FAULT_WORKLOADS[fault])
    assert run_crash_test(wl, cap=64).ok


@pytest.mark.parametrize("fault", ["mkdir-late-parent-link", "rename-no-pointer", "write-size-with-data"])
def test_faulty_build_fails_quickly(fault: str) -> None:
    v = run_crash_test(Workload.parse(FAULT_WORKLOADS[fault]), factory=faulty_factory(fault), max_failures=1)
    assert not v.ok
    assert v.failures[0].invariant.removeprefix("pre-") in {"I1", "I2", "I3", "I4", "durability", "oracle"}


def test_faulty_build_still_behaves_functionally() -> None:
    dev = PmDevice(L.MIN_CAPACITY)
    L.mkfs(dev)
    fs = faulty_factory("rename-no-pointer")(dev)
    fs.create("/a")
    fs.rename("/a", "/b")
    assert [n for n, _ in fs.readdir(L.ROOT_INO)[2:]] == [b"b"]
