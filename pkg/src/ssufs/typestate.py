"""Typed handles to durable objects.

Each handle is parameterized by a persistence state (``Dirty``, ``InFlight``,
``Clean``) and an operational state (``Free``, ``Init``, ``Committed``, ...).
Transitions are only defined on the states where they are legal, so calling
one out of order is a type error under mypy. Every transition consumes its
handle and returns a new one; touching a consumed handle raises at runtime,
and the runtime state tags back up the static check for untyped callers.
"""

from __future__ import annotations

import copy
import errno
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Generic, Protocol, TypeVar, Union, cast, overload

from . import layout as L
from .errors import FsError, HandleConflict, HandleConsumed, TypestateError
from .pmem import PmDevice

if TYPE_CHECKING:
    from .volatile import VolatileState


# persistence states
class Dirty: ...
class InFlight: ...
class Clean: ...


# operational states
class Free: ...
class Init: ...
class Committed: ...
class IncLink: ...
class DecLink: ...
class UnmapPages: ...
class Dealloc: ...
class Alloc: ...
class RenamePointerSet: ...
class Renaming: ...
class Superseded: ...
class ClearedIno: ...
class Written: ...
class Live: ...
class ClearedBackptrs: ...


P = TypeVar("P")
S = TypeVar("S")
T_co = TypeVar("T_co", covariant=True)

INODE_STATES = (Free, Init, Committed, IncLink, DecLink, UnmapPages, Dealloc)
DENTRY_STATES = (Free, Alloc, Committed, RenamePointerSet, Renaming, Superseded, ClearedIno, Dealloc)
RANGE_STATES = (Free, Alloc, Written, Live, ClearedBackptrs, Dealloc)

# name -> (handle kind, from-states, to-state, persistence effect)
TRANSITIONS: dict[str, tuple[str, tuple[str, ...], str, str]] = {
    "acquire_free_inode": ("inode", (), "Free", "Clean"),
    "init_inode": ("inode", ("Free",), "Init", "Dirty"),
    "inc_link": ("inode", ("Committed",), "IncLink", "Dirty"),
    "dec_link": ("inode", ("Committed",), "DecLink", "Dirty"),
    "set_size": ("inode", ("Committed",), "Committed", "Dirty"),
    "unmap_pages": ("inode", ("DecLink",), "UnmapPages", "Clean"),
    "dealloc_inode": ("inode", ("UnmapPages",), "Dealloc", "Dirty"),
    "acquire_free_dentry": ("dentry", (), "Free", "Clean"),
    "set_name": ("dentry", ("Free",), "Alloc", "Dirty"),
    "commit_dentry": ("dentry", ("Alloc",), "Committed", "Dirty"),
    "set_rename_pointer": ("dentry", ("Alloc",), "RenamePointerSet", "Dirty"),
    "commit_rename": ("dentry", ("RenamePointerSet",), "Renaming", "Dirty"),
    "clear_ino": ("dentry", ("Committed", "Superseded"), "ClearedIno", "Dirty"),
    "clear_rename_pointer": ("dentry", ("Renaming",), "Committed", "Dirty"),
    "dealloc_dentry": ("dentry", ("ClearedIno",), "Dealloc", "Dirty"),
    "alloc_pages": ("pages", ("Free",), "Alloc", "Dirty"),
    "write_pages": ("pages", ("Alloc", "Live"), "Written", "Dirty"),
    "clear_backpointers": ("pages", ("Live", "Written"), "ClearedBackptrs", "Dirty"),
    "dealloc_pages": ("pages", ("ClearedBackptrs",), "Dealloc", "Dirty"),
    "flush": ("any", (), "", "InFlight"),
    "fence": ("any", (), "", "Clean"),
}


@dataclass(frozen=True)
class FenceMark:
    """Witness that a device fence retired at ``epoch``."""

    epoch: int


class LockTable:
    """Tracks the single live handle allowed per durable object."""

    def __init__(self) -> None:
        self._live: dict[tuple[str, int], object] = {}
        self._lock = threading.Lock()

    def claim(self, keys: tuple[tuple[str, int], ...], owner: object) -> None:
        with self._lock:
            for k in keys:
                if k in self._live:
                    raise HandleConflict(f"{k[0]} {k[1]} already has a live handle")
            for k in keys:
                self._live[k] = owner

    def swap(self, keys: tuple[tuple[str, int], ...], old: object, new: object) -> None:
        with self._lock:
            for k in keys:
                if self._live.get(k) is not old:
                    raise HandleConflict(f"{k[0]} {k[1]} is not held by this handle")
                self._live[k] = new

    def release(self, keys: tuple[tuple[str, int], ...], owner: object) -> None:
        with self._lock:
            for k in keys:
                if self._live.get(k) is owner:
                    del self._live[k]

    def holder(self, key: tuple[str, int]) -> object | None:
        with self._lock:
            return self._live.get(key)

    def __len__(self) -> int:
        with self._lock:
            return len(self._live)


class OpToken:
    """One per system call: owns the handles it creates and the trace markers."""

    def __init__(
        self,
        label: str,
        dev: PmDevice,
        geo: L.Geometry,
        vol: VolatileState,
        locks: LockTable,
        now: int = 0,
    ) -> None:
        self.label = label
        self.dev = dev
        self.geo = geo
        self.vol = vol
        self.locks = locks
        self.now = now
        self.fences = 0
        self._handles: list[_Handle[Any, Any]] = []
        self._open = False

    def __enter__(self) -> OpToken:
        self._open = True
        self.dev.mark(f"begin:{self.label}")
        return self

    def __exit__(self, exc_type: object, exc: object, tb: object) -> None:
        try:
            if exc_type is None:
                self.finish()
        finally:
            for h in self._handles:
                self.locks.release(h._keys, h)
            self._handles.clear()
            self._open = False
            self.dev.mark(f"end:{self.label}")

    def finish(self) -> None:
        for h in self._handles:
            if not h._consumed and h._p is not Clean:
                raise TypestateError(
                    f"{self.label}: {type(h).__name__} left {h._p.__name__}/{h._s.__name__}"
                )

    def fence(self) -> FenceMark:
        self.dev.fence()
        self.fences += 1
        return FenceMark(self.dev.epoch)

    def current(self) -> FenceMark:
        """Witness for the last retired fence, without issuing a new one.

        Only handles that flushed nothing (empty ranges) accept it.
        """
        return FenceMark(self.dev.epoch)

    def _adopt(self, h: _Handle[Any, Any]) -> None:
        self.locks.claim(h._keys, h)
        self._handles.append(h)

    def _replace(self, old: _Handle[Any, Any], new: _Handle[Any, Any]) -> None:
        self.locks.swap(old._keys, old, new)
        self._handles[self._handles.index(old)] = new

    # handles on existing objects

    def inode(self, ino: int) -> Inode[Clean, Committed]:
        off = self.geo.inode_offset(ino)
        rec = L.InodeRecord.decode(self.dev.read(off, L.INODE_SIZE))
        if rec.ino != ino:
            raise TypestateError(f"inode {ino} is not allocated")
        h: Inode[Clean, Committed] = Inode(self, off, rec, Clean, Committed)
        self._adopt(h)
        return h

    def dentry(self, offset: int, dir_ino: int) -> Dentry[Clean, Committed]:
        rec = L.DentryRecord.decode(self.dev.read(offset, L.DENTRY_SIZE))
        if rec.ino == 0:
            raise TypestateError(f"dentry at {offset} is not committed")
        h: Dentry[Clean, Committed] = Dentry(self, offset, dir_ino, rec, Clean, Committed)
        self._adopt(h)
        return h

    def pages(self, owner: int, pages: list[tuple[int, int]], kind: int = L.KIND_DATA) -> PageRange[Clean, Live]:
        """Handle over existing pages given as ``(page, file_offset)`` pairs."""
        h: PageRange[Clean, Live] = PageRange(self, owner, kind, tuple(pages), Clean, Live)
        self._adopt(h)
        return h


class _Handle(Generic[P, S]):
    _kind = ""

    def __init__(self, tok: OpToken, pstate: type, ostate: type) -> None:
        self._tok = tok
        self._p = pstate
        self._s = ostate
        self._consumed = False
        self._flushed_at = -1
        self._dirty: list[tuple[int, int]] = []

    @property
    def _keys(self) -> tuple[tuple[str, int], ...]:
        raise NotImplementedError

    @property
    def persistence(self) -> P:
        """Phantom accessor: the runtime persistence tag."""
        return cast(P, self._p)

    @property
    def state(self) -> tuple[str, str]:
        return self._p.__name__, self._s.__name__

    def _need(self, p: type, *ops: type) -> None:
        if self._consumed:
            raise HandleConsumed(f"{type(self).__name__} handle already consumed")
        if self._p is not p or (ops and self._s not in ops):
            want = "|".join(o.__name__ for o in ops) or "*"
            raise TypestateError(
                f"{type(self).__name__}<{self._p.__name__}, {self._s.__name__}> "
                f"where <{p.__name__}, {want}> is required"
            )

    def _to(self, p: type, s: type) -> Any:
        new = copy.copy(self)
        new._p, new._s = p, s
        new._dirty = list(self._dirty)
        self._consumed = True
        self._tok._replace(self, new)
        return new

    def _store(self, offset: int, data: bytes) -> None:
        self._tok.dev.memcpy(offset, data)
        self._dirty.append((offset, len(data)))

    def _flush(self) -> Any:
        self._need(Dirty)
        dev = self._tok.dev
        for off, n in self._dirty:
            dev.flush(off, n)
        new = self._to(InFlight, self._s)
        new._dirty = []
        new._flushed_at = dev.epoch if self._dirty else -1
        return new

    def _fenced(self, mark: FenceMark) -> Any:
        self._need(InFlight)
        if self._flushed_at >= 0 and mark.epoch <= self._flushed_at:
            raise TypestateError("fence witness predates the flush")
        return self._to(Clean, self._s)


class Fenceable(Protocol[T_co]):
    @property
    def persistence(self) -> InFlight: ...

    def fenced(self, mark: FenceMark) -> T_co: ...


T1 = TypeVar("T1")
T2 = TypeVar("T2")
T3 = TypeVar("T3")
T4 = TypeVar("T4")
T5 = TypeVar("T5")


@overload
def fence_all(tok: OpToken, a: Fenceable[T1], /) -> tuple[T1]: ...
@overload
def fence_all(tok: OpToken, a: Fenceable[T1], b: Fenceable[T2], /) -> tuple[T1, T2]: ...
@overload
def fence_all(
    tok: OpToken, a: Fenceable[T1], b: Fenceable[T2], c: Fenceable[T3], /
) -> tuple[T1, T2, T3]: ...
@overload
def fence_all(
    tok: OpToken, a: Fenceable[T1], b: Fenceable[T2], c: Fenceable[T3], d: Fenceable[T4], /
) -> tuple[T1, T2, T3, T4]: ...
@overload
def fence_all(
    tok: OpToken,
    a: Fenceable[T1],
    b: Fenceable[T2],
    c: Fenceable[T3],
    d: Fenceable[T4],
    e: Fenceable[T5],
    /,
) -> tuple[T1, T2, T3, T4, T5]: ...
def fence_all(tok: OpToken, *handles: Fenceable[Any]) -> tuple[Any, ...]:
    """Retire several in-flight handles with one device fence."""
    mark = tok.fence()
    return tuple(h.fenced(mark) for h in handles)


# inodes


class Inode(_Handle[P, S]):
    _kind = "inode"

    def __init__(self, tok: OpToken, offset: int, rec: L.InodeRecord, pstate: type, ostate: type) -> None:
        super().__init__(tok, pstate, ostate)
        self.offset = offset
        self.rec = rec

    @property
    def _keys(self) -> tuple[tuple[str, int], ...]:
        return (("inode", self.offset),)

    @property
    def ino(self) -> int:
        return self._tok.geo.ino_at(self.offset)

    def init_inode(
        self: Inode[Clean, Free], mode: int, uid: int = 0, gid: int = 0
    ) -> Inode[Dirty, Init]:
        self._need(Clean, Free)
        if mode & 0o170000 == L.S_IFDIR:
            links = 2
        elif mode & 0o170000 == L.S_IFREG:
            links = 1
        else:
            raise ValueError(f"unsupported file mode {mode:o}")
        now = self._tok.now
        rec = L.InodeRecord(self.ino, links, 0, mode, uid, gid, now, now, now)
        self._store(self.offset, rec.encode())
        new: Inode[Dirty, Init] = self._to(Dirty, Init)
        new.rec = rec
        return new

    def inc_link(self: Inode[Clean, Committed]) -> Inode[Dirty, IncLink]:
        self._need(Clean, Committed)
        links = self.rec.link_count + 1
        self._store(self.offset + L.INODE_LINKS, links.to_bytes(8, "little"))
        new: Inode[Dirty, IncLink] = self._to(Dirty, IncLink)
        new.rec = _replace(self.rec, link_count=links)
        return new

    def dec_link(
        self: Inode[Clean, Committed], cleared: Dentry[Clean, ClearedIno], by: int = 1
    ) -> Inode[Dirty, DecLink]:
        """Drop ``by`` links; ``cleared`` witnesses the durable ino-clear of the dentry."""
        self._need(Clean, Committed)
        cleared._need(Clean, ClearedIno)
        links = self.rec.link_count - by
        if links < 0:
            raise L.CorruptImage(f"link count of inode {self.ino} would underflow")
        self._store(self.offset + L.INODE_LINKS, links.to_bytes(8, "little"))
        new: Inode[Dirty, DecLink] = self._to(Dirty, DecLink)
        new.rec = _replace(self.rec, link_count=links)
        return new

    def set_size(
        self: Inode[Clean, Committed], new_size: int, written: PageRange[Clean, Written]
    ) -> tuple[Inode[Dirty, Committed], PageRange[Clean, Live]]:
        self._need(Clean, Committed)
        written._need(Clean, Written)
        if written.owner != self.ino:
            raise TypestateError("page range belongs to another inode")
        if new_size < self.rec.size:
            raise ValueError("set_size cannot shrink a file")
        self._store(self.offset + L.INODE_SIZE_FIELD, new_size.to_bytes(8, "little"))
        new: Inode[Dirty, Committed] = self._to(Dirty, Committed)
        new.rec = _replace(self.rec, size=new_size)
        live: PageRange[Clean, Live] = written._to(Clean, Live)
        return new, live

    def unmap_pages(
        self: Inode[Clean, DecLink], cleared: PageRange[Clean, ClearedBackptrs]
    ) -> Inode[Clean, UnmapPages]:
        self._need(Clean, DecLink)
        cleared._need(Clean, ClearedBackptrs)
        if self.rec.link_count != 0:
            raise TypestateError(f"inode {self.ino} still has {self.rec.link_count} links")
        if cleared.owner != self.ino:
            raise TypestateError("page range belongs to another inode")
        result: Inode[Clean, UnmapPages] = self._to(Clean, UnmapPages)
        return result

    def dealloc_inode(
        self: Inode[Clean, UnmapPages], freed: PageRange[Clean, Dealloc]
    ) -> Inode[Dirty, Dealloc]:
        self._need(Clean, UnmapPages)
        freed._need(Clean, Dealloc)
        self._store(self.offset, bytes(L.INODE_SIZE))
        new: Inode[Dirty, Dealloc] = self._to(Dirty, Dealloc)
        new.rec = L.InodeRecord()
        return new

    def flush(self: Inode[Dirty, S]) -> Inode[InFlight, S]:
        result: Inode[InFlight, S] = self._flush()
        return result

    def fenced(self: Inode[InFlight, S], mark: FenceMark) -> Inode[Clean, S]:
        result: Inode[Clean, S] = self._fenced(mark)
        return result

    def fence(self: Inode[InFlight, S]) -> Inode[Clean, S]:
        return self.fenced(self._tok.fence())


def acquire_free_inode(tok: OpToken) -> Inode[Clean, Free]:
    ino = tok.vol.allocate_ino()
    off = tok.geo.inode_offset(ino)
    if any(tok.dev.read(off, L.INODE_SIZE)):
        tok.vol.free_ino(ino)
        raise TypestateError(f"free-listed inode {ino} is not zeroed")
    h: Inode[Clean, Free] = Inode(tok, off, L.InodeRecord(), Clean, Free)
    tok._adopt(h)
    return h


def _replace(rec: L.InodeRecord, **kw: int) -> L.InodeRecord:
    fields = dict(rec.__dict__)
    fields.update(kw)
    return L.InodeRecord(**fields)


# directory entries


class Dentry(_Handle[P, S]):
    _kind = "dentry"

    def __init__(
        self, tok: OpToken, offset: int, dir_ino: int, rec: L.DentryRecord, pstate: type, ostate: type
    ) -> None:
        super().__init__(tok, pstate, ostate)
        self.offset = offset
        self.dir_ino = dir_ino
        self.rec = rec

    @property
    def _keys(self) -> tuple[tuple[str, int], ...]:
        return (("dentry", self.offset),)

    @property
    def name(self) -> bytes:
        return self.rec.name

    def set_name(self: Dentry[Clean, Free], name: bytes) -> Dentry[Dirty, Alloc]:
        self._need(Clean, Free)
        check_name(name)
        self._store(self.offset, name + bytes(L.DENTRY_INO - len(name)))
        new: Dentry[Dirty, Alloc] = self._to(Dirty, Alloc)
        new.rec = L.DentryRecord(name, 0, 0)
        return new

    @overload
    def commit_dentry(
        self: Dentry[Clean, Alloc], inode: Inode[Clean, Init]
    ) -> tuple[Dentry[Dirty, Committed], Inode[Clean, Committed]]: ...
    @overload
    def commit_dentry(
        self: Dentry[Clean, Alloc], inode: Inode[Clean, Init], parent: Inode[Clean, IncLink]
    ) -> tuple[Dentry[Dirty, Committed], Inode[Clean, Committed], Inode[Clean, Committed]]: ...
    def commit_dentry(
        self: Dentry[Clean, Alloc],
        inode: Inode[Clean, Init],
        parent: Inode[Clean, IncLink] | None = None,
    ) -> tuple[Any, ...]:
        """Point the entry at ``inode``: the single store that links it in.

        Directories must also pass their parent, whose link increment has to
        be durable first.
        """
        self._need(Clean, Alloc)
        inode._need(Clean, Init)
        if inode.rec.is_dir and parent is None:
            raise TypestateError("committing a directory requires the incremented parent")
        if parent is not None:
            parent._need(Clean, IncLink)
        self._store(self.offset + L.DENTRY_INO, inode.ino.to_bytes(8, "little"))
        new = self._to(Dirty, Committed)
        new.rec = L.DentryRecord(self.rec.name, inode.ino, self.rec.rename_ptr)
        committed = inode._to(Clean, Committed)
        if parent is None:
            return new, committed
        return new, committed, parent._to(Clean, Committed)

    def set_rename_pointer(
        self: Dentry[Clean, Alloc], src: Dentry[Clean, Committed]
    ) -> Dentry[Dirty, RenamePointerSet]:
        self._need(Clean, Alloc)
        src._need(Clean, Committed)
        self._store(self.offset + L.DENTRY_RENAME_PTR, src.offset.to_bytes(8, "little"))
        new: Dentry[Dirty, RenamePointerSet] = self._to(Dirty, RenamePointerSet)
        new.rec = L.DentryRecord(self.rec.name, 0, src.offset)
        return new

    @overload
    def commit_rename(
        self: Dentry[Clean, RenamePointerSet],
        src: Dentry[Clean, Committed],
        inode: Inode[Clean, Committed],
    ) -> tuple[Dentry[Dirty, Renaming], Dentry[Clean, Superseded]]: ...
    @overload
    def commit_rename(
        self: Dentry[Clean, RenamePointerSet],
        src: Dentry[Clean, Committed],
        inode: Inode[Clean, Committed],
        new_parent: Inode[Clean, IncLink],
    ) -> tuple[Dentry[Dirty, Renaming], Dentry[Clean, Superseded], Inode[Clean, Committed]]: ...
    def commit_rename(
        self: Dentry[Clean, RenamePointerSet],
        src: Dentry[Clean, Committed],
        inode: Inode[Clean, Committed],
        new_parent: Inode[Clean, IncLink] | None = None,
    ) -> tuple[Any, ...]:
        """The atomic point of rename: the destination takes the inode."""
        self._need(Clean, RenamePointerSet)
        src._need(Clean, Committed)
        inode._need(Clean, Committed)
        if self.rec.rename_ptr != src.offset:
            raise TypestateError("rename pointer does not name this source")
        if src.rec.ino != inode.ino:
            raise TypestateError("source entry does not reference this inode")
        if new_parent is not None:
            new_parent._need(Clean, IncLink)
        self._store(self.offset + L.DENTRY_INO, inode.ino.to_bytes(8, "little"))
        new = self._to(Dirty, Renaming)
        new.rec = L.DentryRecord(self.rec.name, inode.ino, src.offset)
        old = src._to(Clean, Superseded)
        if new_parent is None:
            return new, old
        return new, old, new_parent._to(Clean, Committed)

    def clear_ino(
        self: Union[Dentry[Clean, Committed], Dentry[Clean, Superseded]]
    ) -> Dentry[Dirty, ClearedIno]:
        self._need(Clean, Committed, Superseded)
        self._store(self.offset + L.DENTRY_INO, bytes(8))
        new: Dentry[Dirty, ClearedIno] = self._to(Dirty, ClearedIno)
        new.rec = L.DentryRecord(self.rec.name, 0, self.rec.rename_ptr)
        new.cleared_ino = self.rec.ino
        return new

    def clear_rename_pointer(
        self: Dentry[Clean, Renaming], src: Dentry[Clean, ClearedIno]
    ) -> Dentry[Dirty, Committed]:
        self._need(Clean, Renaming)
        src._need(Clean, ClearedIno)
        if self.rec.rename_ptr != src.offset:
            raise TypestateError("rename pointer does not name this source")
        self._store(self.offset + L.DENTRY_RENAME_PTR, bytes(8))
        new: Dentry[Dirty, Committed] = self._to(Dirty, Committed)
        new.rec = L.DentryRecord(self.rec.name, self.rec.ino, 0)
        return new

    def dealloc_dentry(self: Dentry[Clean, ClearedIno]) -> Dentry[Dirty, Dealloc]:
        self._need(Clean, ClearedIno)
        for h in self._tok._handles:
            if isinstance(h, Dentry) and not h._consumed and h.rec.rename_ptr == self.offset:
                raise TypestateError("a rename pointer still references this entry")
        self._store(self.offset, bytes(L.DENTRY_SIZE))
        new: Dentry[Dirty, Dealloc] = self._to(Dirty, Dealloc)
        new.rec = L.DentryRecord()
        return new

    def flush(self: Dentry[Dirty, S]) -> Dentry[InFlight, S]:
        result: Dentry[InFlight, S] = self._flush()
        return result

    def fenced(self: Dentry[InFlight, S], mark: FenceMark) -> Dentry[Clean, S]:
        result: Dentry[Clean, S] = self._fenced(mark)
        return result

    def fence(self: Dentry[InFlight, S]) -> Dentry[Clean, S]:
        return self.fenced(self._tok.fence())

    cleared_ino = 0


def check_name(name: bytes) -> None:
    if not name or name in (b".", b".."):
        raise FsError(errno.EINVAL, "invalid name")
    if len(name) > L.NAME_MAX:
        raise FsError(errno.ENAMETOOLONG, f"{len(name)} bytes")
    if b"/" in name or b"\0" in name:
        raise FsError(errno.EINVAL, "name contains '/' or NUL")


def acquire_free_dentry(
    tok: OpToken, parent: Union[Inode[Clean, Committed], Inode[Clean, IncLink]]
) -> Dentry[Clean, Free]:
    """Lowest free slot in ``parent``'s directory pages, adding a page if full."""
    if parent._consumed:
        raise HandleConsumed("parent handle already consumed")
    if parent._p is not Clean or not parent.rec.is_dir:
        raise TypestateError("free entries can only be taken from a clean directory")
    vol = tok.vol
    dir_ino = parent.ino
    slot = vol.take_slot(dir_ino)
    if slot is None:
        _grow_directory(tok, parent)
        slot = vol.take_slot(dir_ino)
        assert slot is not None
    if any(tok.dev.read(slot, L.DENTRY_SIZE)):
        raise TypestateError(f"free-listed dentry slot {slot} is not zeroed")
    h: Dentry[Clean, Free] = Dentry(tok, slot, dir_ino, L.DentryRecord(), Clean, Free)
    tok._adopt(h)
    return h


def _grow_directory(tok: OpToken, parent: Inode[Any, Any]) -> None:
    page = tok.vol.page_freelist.peek()
    if page is None:
        raise FsError(errno.ENOSPC, "no free page for directory")
    base = tok.geo.page_offset(page)
    if any(tok.dev.read(base, L.PAGE_SIZE)):
        # stale contents must be gone before the backpointer makes them entries
        tok.dev.memcpy(base, bytes(L.PAGE_SIZE))
        tok.dev.flush(base, L.PAGE_SIZE)
        tok.fence()
    rng = alloc_pages(tok, parent, 1, 0, kind=L.KIND_DIR)
    live = rng.flush().fence()
    tok.vol.add_dir_page(parent.ino, page)
    live._consumed = True
    tok.locks.release(live._keys, live)


# page ranges


class PageRange(_Handle[P, S]):
    """One typestate governing a set of pages owned by a single inode."""

    _kind = "pages"

    def __init__(
        self,
        tok: OpToken,
        owner: int,
        kind: int,
        pages: tuple[tuple[int, int], ...],
        pstate: type,
        ostate: type,
    ) -> None:
        super().__init__(tok, pstate, ostate)
        self.owner = owner
        self.kind = kind
        self.pages = pages  # (page index, file offset)

    @property
    def _keys(self) -> tuple[tuple[str, int], ...]:
        return tuple(("page", p) for p, _ in self.pages)

    def __len__(self) -> int:
        return len(self.pages)

    @overload
    def write_pages(self: PageRange[Dirty, Alloc], data: bytes, file_offset: int) -> PageRange[Dirty, Written]: ...
    @overload
    def write_pages(self: PageRange[Clean, Alloc], data: bytes, file_offset: int) -> PageRange[Dirty, Written]: ...
    @overload
    def write_pages(self: PageRange[Clean, Live], data: bytes, file_offset: int) -> PageRange[Dirty, Written]: ...
    def write_pages(self, data: bytes, file_offset: int) -> PageRange[Dirty, Written]:
        """Copy ``data`` (starting at ``file_offset``) into the range's pages.

        Freshly allocated pages get their full contents written, zero-filled
        around the data.
        """
        if self._s is Alloc:
            if self._consumed:
                raise HandleConsumed("page range already consumed")
            if self.kind != L.KIND_DATA:
                raise TypestateError("only data pages take file contents")
        else:
            self._need(Clean, Live)
        end = file_offset + len(data)
        if not self.pages:
            if data:
                raise ValueError("write into an empty range")
        elif file_offset < min(o for _, o in self.pages) or end > max(o for _, o in self.pages) + L.PAGE_SIZE:
            raise ValueError("write extends beyond the pages of this range")
        fresh = self._s is Alloc
        geo = self._tok.geo
        for page, poff in self.pages:
            lo, hi = max(file_offset, poff), min(end, poff + L.PAGE_SIZE)
            base = geo.page_offset(page)
            if fresh:
                buf = bytearray(L.PAGE_SIZE)
                if lo < hi:
                    buf[lo - poff : hi - poff] = data[lo - file_offset : hi - file_offset]
                self._store(base, bytes(buf))
            elif lo < hi:
                self._store(base + (lo - poff), data[lo - file_offset : hi - file_offset])
        result: PageRange[Dirty, Written] = self._to(Dirty, Written)
        return result

    def clear_backpointers(
        self: Union[PageRange[Clean, Live], PageRange[Clean, Written]]
    ) -> PageRange[Dirty, ClearedBackptrs]:
        self._need(Clean, Live, Written)
        geo = self._tok.geo
        for page, _ in self.pages:
            self._store(geo.desc_offset(page) + L.DESC_OWNER, bytes(8))
        result: PageRange[Dirty, ClearedBackptrs] = self._to(Dirty, ClearedBackptrs)
        return result

    def dealloc_pages(self: PageRange[Clean, ClearedBackptrs]) -> PageRange[Dirty, Dealloc]:
        self._need(Clean, ClearedBackptrs)
        geo = self._tok.geo
        for page, _ in self.pages:
            self._store(geo.desc_offset(page), bytes(L.DESC_SIZE))
        result: PageRange[Dirty, Dealloc] = self._to(Dirty, Dealloc)
        return result

    def flush(self: PageRange[Dirty, S]) -> PageRange[InFlight, S]:
        result: PageRange[InFlight, S] = self._flush()
        return result

    def fenced(self: PageRange[InFlight, S], mark: FenceMark) -> PageRange[Clean, S]:
        result: PageRange[Clean, S] = self._fenced(mark)
        return result

    def fence(self: PageRange[InFlight, S]) -> PageRange[Clean, S]:
        return self.fenced(self._tok.fence())


def alloc_pages(
    tok: OpToken,
    owner: Union[Inode[Clean, Init], Inode[Clean, Committed], Inode[Clean, IncLink]],
    n: int,
    start_offset: int,
    kind: int = L.KIND_DATA,
) -> PageRange[Dirty, Alloc]:
    """Take ``n`` free pages and point their descriptors at ``owner``."""
    if owner._consumed:
        raise HandleConsumed("owner handle already consumed")
    if owner._p is not Clean:
        raise TypestateError("pages can only be given to a durable inode")
    if start_offset % L.PAGE_SIZE:
        raise ValueError("page ranges start on a page boundary")
    idx = tok.vol.allocate_pages(n)
    pages = tuple((p, start_offset + i * L.PAGE_SIZE if kind == L.KIND_DATA else 0) for i, p in enumerate(idx))
    h: PageRange[Clean, Free] = PageRange(tok, owner.ino, kind, pages, Clean, Free)
    try:
        tok._adopt(h)
    except HandleConflict:
        tok.vol.free_pages(idx)
        raise
    for page, off in pages:
        desc = L.PageDescriptor(owner.ino, kind, off)
        h._store(tok.geo.desc_offset(page), desc.encode())
    result: PageRange[Dirty, Alloc] = h._to(Dirty, Alloc)
    return result


def empty_range(tok: OpToken, owner: int) -> PageRange[Clean, Live]:
    return tok.pages(owner, [])
