from __future__ import annotations

import errno as _errno
import os


class FsError(OSError):
    """A POSIX-style failure of a file-system call."""

    def __init__(self, code: int, detail: str = "") -> None:
        super().__init__(code, os.strerror(code) + (f": {detail}" if detail else ""))
        self.code = code
        self.detail = detail

    @property
    def name(self) -> str:
        return _errno.errorcode.get(self.code, str(self.code))


def fail(code: int, detail: str = "") -> FsError:
    return FsError(code, detail)


class TypestateError(RuntimeError):
    """A transition was invoked on a handle in the wrong state.

    Statically typed callers never see this; it backs up the type checker for
    code paths it cannot see (dynamic calls, casts).
    """


class HandleConsumed(TypestateError):
    pass


class HandleConflict(TypestateError):
    """A second live handle was requested for the same durable object."""


class AlreadyMounted(RuntimeError):
    pass
