"""Crash-consistent file system on simulated persistent memory.

Metadata updates follow synchronous soft updates: every call orders its
stores with flushes and fences so that the image is consistent at each fence,
and the ordering is checked statically through typestate-annotated handles.
"""

from __future__ import annotations

from .crashcheck import FsckReport, Workload, fsck, run_crash_test
from .errors import AlreadyMounted, FsError, HandleConflict, HandleConsumed, TypestateError
from .fsops import Fs, RecoveryReport, Stat, mount, recover
from .layout import Geometry, compute_geometry, mkfs
from .pmem import PmDevice

__all__ = [
    "AlreadyMounted",
    "Fs",
    "FsError",
    "FsckReport",
    "Geometry",
    "HandleConflict",
    "HandleConsumed",
    "PmDevice",
    "RecoveryReport",
    "Stat",
    "TypestateError",
    "Workload",
    "compute_geometry",
    "fsck",
    "mkfs",
    "mount",
    "recover",
    "run_crash_test",
]
__version__ = "0.1.0"
