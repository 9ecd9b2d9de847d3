"""System calls built from typestate transitions, plus mount and recovery.

Every call is synchronous: all of its durable updates have been fenced by the
time it returns, so there is never cross-operation dependency tracking.
"""

from __future__ import annotations

import errno
import threading
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any

from . import layout as L
from .errors import AlreadyMounted, FsError
from .pmem import PmDevice
from .typestate import (
    Clean,
    Committed,
    Inode,
    LockTable,
    OpToken,
    acquire_free_dentry,
    acquire_free_inode,
    alloc_pages,
    check_name,
    fence_all,
)
from .volatile import MediaScan, VolatileState, _FreeList, build_state, dump_tree, scan_media

PS = L.PAGE_SIZE


@dataclass(frozen=True)
class Stat:
    ino: int
    mode: int
    size: int
    link_count: int
    uid: int
    gid: int
    atime: int
    mtime: int
    ctime: int

    @property
    def is_dir(self) -> bool:
        return self.mode & 0o170000 == L.S_IFDIR


@dataclass
class RecoveryReport:
    renames_completed: int = 0
    renames_rolled_back: int = 0
    orphans_freed: int = 0
    pages_freed: int = 0
    dentries_freed: int = 0
    links_repaired: int = 0
    notes: list[str] = field(default_factory=list)

    @property
    def changed(self) -> bool:
        return any(
            (self.renames_completed, self.renames_rolled_back, self.orphans_freed,
             self.pages_freed, self.dentries_freed, self.links_repaired)
        )

    def render(self) -> str:
        lines = [
            f"renames_completed {self.renames_completed}",
            f"renames_rolled_back {self.renames_rolled_back}",
            f"orphans_freed {self.orphans_freed}",
            f"pages_freed {self.pages_freed}",
            f"dentries_freed {self.dentries_freed}",
            f"links_repaired {self.links_repaired}",
        ]
        lines += [f"note {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def _encode(name: str | bytes) -> bytes:
    return name if isinstance(name, bytes) else name.encode("utf-8", "surrogateescape")


def split_path(path: str | bytes) -> list[bytes]:
    return [p for p in _encode(path).split(b"/") if p]


class Fs:
    """A mounted file system. Use :meth:`mount` to obtain one."""

    def __init__(
        self,
        dev: PmDevice,
        geo: L.Geometry,
        vol: VolatileState,
        clock: Callable[[], int] | None = None,
    ) -> None:
        self.dev = dev
        self.geo = geo
        self.vol = vol
        self.locks = LockTable()
        self.clock = clock or (lambda: int(time.time()))
        self.mounted = True
        self.recovery: RecoveryReport | None = None
        self.last_fences = 0
        self._lock = threading.RLock()

    # mount / unmount

    @classmethod
    def mount(
        cls,
        dev: PmDevice,
        expect_clean: bool = False,
        clock: Callable[[], int] | None = None,
    ) -> Fs:
        if dev.mounted:
            raise AlreadyMounted("device is already mounted")
        sb = L.read_superblock(dev)
        geo = L.geometry_from_superblock(sb, dev.capacity)
        report = None
        if sb.clean_unmount != 1:
            if expect_clean:
                raise FsError(errno.EUCLEAN, "image was not unmounted cleanly")
            report = recover(dev, geo)
        vol = build_state(scan_media(dev.view(), geo))
        _set_clean(dev, 0)
        dev.mounted = True
        fs = cls(dev, geo, vol, clock)
        fs.recovery = report
        return fs

    def unmount(self) -> None:
        with self._lock:
            self._check_mounted()
            _set_clean(self.dev, 1)
            self.dev.mounted = False
            self.mounted = False
            self.vol = VolatileState(self.geo)

    def _check_mounted(self) -> None:
        if not self.mounted:
            raise FsError(errno.EBADF, "file system is not mounted")

    @contextmanager
    def _op(self, label: str) -> Iterator[OpToken]:
        tok = OpToken(label, self.dev, self.geo, self.vol, self.locks, self.clock())
        with tok:
            yield tok
        self.last_fences = tok.fences

    # path resolution

    def _resolve(self, parts: list[bytes]) -> int:
        ino = L.ROOT_INO
        for name in parts:
            if not self._read_inode(ino).is_dir:
                raise FsError(errno.ENOTDIR, name.decode("utf-8", "replace"))
            ent = self.vol.lookup_name(ino, name)
            if ent is None:
                raise FsError(errno.ENOENT, name.decode("utf-8", "replace"))
            ino = ent.ino
        return ino

    def _parent_of(self, path: str | bytes) -> tuple[int, bytes]:
        parts = split_path(path)
        if not parts:
            raise FsError(errno.EINVAL, "the root has no parent")
        parent = self._resolve(parts[:-1])
        if not self._read_inode(parent).is_dir:
            raise FsError(errno.ENOTDIR, "parent is not a directory")
        return parent, parts[-1]

    def _read_inode(self, ino: int) -> L.InodeRecord:
        try:
            off = self.geo.inode_offset(ino)
        except L.LayoutError:
            raise FsError(errno.ENOENT, f"inode {ino}") from None
        rec = L.InodeRecord.decode(self.dev.read(off, L.INODE_SIZE))
        if rec.ino != ino:
            raise FsError(errno.ENOENT, f"inode {ino}")
        return rec

    def _need_room(self, parent: int, inodes: int = 0, pages: int = 0) -> None:
        if len(self.vol.inode_freelist) < inodes:
            raise FsError(errno.ENOSPC, "inode table full")
        slots = self.vol.free_slots.get(parent)
        need = pages + (0 if slots else 1)
        if len(self.vol.page_freelist) < need:
            raise FsError(errno.ENOSPC, "no free pages")

    # queries

    def lookup(self, path: str | bytes) -> int:
        with self._lock:
            self._check_mounted()
            return self._resolve(split_path(path))

    def stat(self, ino: int) -> Stat:
        with self._lock:
            self._check_mounted()
            r = self._read_inode(ino)
            return Stat(r.ino, r.mode, r.size, r.link_count, r.uid, r.gid, r.atime, r.mtime, r.ctime)

    def readdir(self, ino: int) -> list[tuple[bytes, int]]:
        with self._lock:
            self._check_mounted()
            if not self._read_inode(ino).is_dir:
                raise FsError(errno.ENOTDIR, f"inode {ino}")
            parent = self.vol.parents.get(ino, L.ROOT_INO)
            out = [(b".", ino), (b"..", parent)]
            out += sorted((n, e.ino) for n, e in self.vol.entries(ino).items())
            return out

    def read(self, ino: int, offset: int, length: int) -> bytes:
        with self._lock:
            self._check_mounted()
            rec = self._read_inode(ino)
            if rec.is_dir:
                raise FsError(errno.EISDIR, f"inode {ino}")
            if offset < 0 or length < 0:
                raise FsError(errno.EINVAL, "negative offset or length")
            end = min(rec.size, offset + length)
            if offset >= end:
                return b""
            pages = self.vol.pages_of(ino)
            out = bytearray()
            pos = offset
            while pos < end:
                poff = pos // PS * PS
                hi = min(end, poff + PS)
                page = pages.get(poff)
                if page is None:
                    out += bytes(hi - pos)
                else:
                    out += self.dev.read(self.geo.page_offset(page) + pos - poff, hi - pos)
                pos = hi
            return bytes(out)

    def fsync(self, ino: int) -> None:
        """Nothing to do: every call is already durable when it returns."""
        with self._lock:
            self._check_mounted()
            self._read_inode(ino)

    def tree(self) -> str:
        with self._lock:
            return dump_tree(self.dev, self.vol)

    # creation

    def create(self, path: str | bytes, mode: int = 0o644) -> int:
        with self._lock:
            self._check_mounted()
            pino, name = self._parent_of(path)
            check_name(name)
            if self.vol.lookup_name(pino, name) is not None:
                raise FsError(errno.EEXIST, name.decode("utf-8", "replace"))
            self._need_room(pino, inodes=1)
            with self._op("create") as tok:
                parent = tok.inode(pino)
                slot = acquire_free_dentry(tok, parent)
                inode = acquire_free_inode(tok).init_inode(L.S_IFREG | (mode & 0o7777))
                named = slot.set_name(name)
                ready, named_c = fence_all(tok, inode.flush(), named.flush())
                d, i = named_c.commit_dentry(ready)
                d.flush().fence()
                self.vol.insert_name(pino, name, d.offset, i.ino)
                self.vol.file_pages[i.ino] = {}
                return i.ino

    def mkdir(self, path: str | bytes, mode: int = 0o755) -> int:
        with self._lock:
            self._check_mounted()
            pino, name = self._parent_of(path)
            check_name(name)
            if self.vol.lookup_name(pino, name) is not None:
                raise FsError(errno.EEXIST, name.decode("utf-8", "replace"))
            self._need_room(pino, inodes=1)
            with self._op("mkdir") as tok:
                parent = tok.inode(pino)
                slot = acquire_free_dentry(tok, parent)
                inode = acquire_free_inode(tok).init_inode(L.S_IFDIR | (mode & 0o7777))
                named = slot.set_name(name)
                bumped = parent.inc_link()
                ready, named_c, bumped_c = fence_all(tok, inode.flush(), named.flush(), bumped.flush())
                d, i, _ = named_c.commit_dentry(ready, bumped_c)
                d.flush().fence()
                vol = self.vol
                vol.insert_name(pino, name, d.offset, i.ino)
                vol.names[i.ino] = {}
                vol.dir_pages[i.ino] = []
                vol.free_slots[i.ino] = _FreeList()
                vol.parents[i.ino] = pino
                return i.ino

    # data

    def write(self, ino: int, offset: int, data: bytes) -> int:
        """Write ``data`` at ``offset``. Writing past EOF zero-fills the gap."""
        with self._lock:
            self._check_mounted()
            rec = self._read_inode(ino)
            if rec.is_dir:
                raise FsError(errno.EISDIR, f"inode {ino}")
            if offset < 0:
                raise FsError(errno.EINVAL, "negative offset")
            if not data:
                return 0
            n = len(data)
            if offset > rec.size:
                data = bytes(offset - rec.size) + data
                offset = rec.size
            end = offset + len(data)
            mapped = self.vol.pages_of(ino)
            first, last = offset // PS * PS, (end - 1) // PS * PS
            existing = [(mapped[o], o) for o in range(first, last + PS, PS) if o in mapped]
            missing = [o for o in range(first, last + PS, PS) if o not in mapped]
            if missing and missing != list(range(missing[0], last + PS, PS)):
                raise FsError(errno.EIO, f"inode {ino} has a hole below its size")
            if len(self.vol.page_freelist) < len(missing):
                raise FsError(errno.ENOSPC, "no free pages")
            split = missing[0] if missing else end
            with self._op("write") as tok:
                inode = tok.inode(ino)
                old = tok.pages(ino, existing)
                in_place = old.write_pages(data[: split - offset], offset) if existing else None
                fresh = None
                if missing:
                    fresh = alloc_pages(tok, inode, len(missing), missing[0]).write_pages(
                        data[split - offset :], split
                    )
                if in_place is not None and fresh is not None:
                    old_c, new_c = fence_all(tok, in_place.flush(), fresh.flush())
                elif in_place is not None:
                    (old_c,) = fence_all(tok, in_place.flush())
                    new_c = None
                else:
                    assert fresh is not None
                    (new_c,) = fence_all(tok, fresh.flush())
                    old_c = None
                if end > rec.size:
                    witness = new_c if new_c is not None else old_c
                    assert witness is not None
                    grown, _ = inode.set_size(end, witness)
                    grown.flush().fence()
                if new_c is not None:
                    self.vol.map_pages(ino, [(o, p) for p, o in new_c.pages])
            return n

    # removal

    def unlink(self, path: str | bytes) -> None:
        with self._lock:
            self._check_mounted()
            pino, name = self._parent_of(path)
            ent = self.vol.lookup_name(pino, name)
            if ent is None:
                raise FsError(errno.ENOENT, name.decode("utf-8", "replace"))
            if self._read_inode(ent.ino).is_dir:
                raise FsError(errno.EISDIR, name.decode("utf-8", "replace"))
            with self._op("unlink") as tok:
                order = sorted({pino, ent.ino})
                held = {i: tok.inode(i) for i in order}
                victim = held[ent.ino]
                cleared = tok.dentry(ent.offset, pino).clear_ino().flush().fence()
                self.vol.remove_name(pino, name)
                self._drop_inode(tok, victim, cleared, 1, [cleared])
                self.vol.free_slot(pino, ent.offset)

    def rmdir(self, path: str | bytes) -> None:
        with self._lock:
            self._check_mounted()
            pino, name = self._parent_of(path)
            ent = self.vol.lookup_name(pino, name)
            if ent is None:
                raise FsError(errno.ENOENT, name.decode("utf-8", "replace"))
            if not self._read_inode(ent.ino).is_dir:
                raise FsError(errno.ENOTDIR, name.decode("utf-8", "replace"))
            if self.vol.entries(ent.ino):
                raise FsError(errno.ENOTEMPTY, name.decode("utf-8", "replace"))
            with self._op("rmdir") as tok:
                held = {i: tok.inode(i) for i in sorted({pino, ent.ino})}
                cleared = tok.dentry(ent.offset, pino).clear_ino().flush().fence()
                self.vol.remove_name(pino, name)
                parent_dec = held[pino].dec_link(cleared)
                self._drop_inode(tok, held[ent.ino], cleared, 2, [cleared], extra=[parent_dec])
                self.vol.free_slot(pino, ent.offset)

    def _drop_inode(
        self,
        tok: OpToken,
        victim: Inode[Clean, Committed],
        witness: Any,
        by: int,
        dentries: list[Any],
        extra: list[Any] | None = None,
    ) -> None:
        """Unlink tail: drop links, free the entries, then the pages and inode.

        ``witness`` is a clean, ino-cleared dentry; ``dentries`` are cleared
        entries to deallocate alongside the link decrement.
        """
        ino = victim.ino
        dec = victim.dec_link(witness, by)
        inflight: list[Any] = [dec.flush()]
        inflight += [d.dealloc_dentry().flush() for d in dentries]
        inflight += [x.flush() for x in extra or []]
        gone = dec.rec.link_count == 0
        rng = None
        if gone:
            if victim.rec.is_dir:
                plist = [(p, 0) for p in self.vol.dir_pages.get(ino, [])]
                kind = L.KIND_DIR
            else:
                plist = [(p, o) for o, p in sorted(self.vol.pages_of(ino).items())]
                kind = L.KIND_DATA
            rng = tok.pages(ino, plist, kind).clear_backpointers().flush()
            inflight.append(rng)
        mark = tok.fence()
        done = [h.fenced(mark) for h in inflight]
        if not gone:
            return
        dec_c, rng_c = done[0], done[-1]
        unmapped = dec_c.unmap_pages(rng_c)
        freed = rng_c.dealloc_pages().flush()
        freed_c = freed.fenced(tok.fence() if len(freed) else tok.current())
        unmapped.dealloc_inode(freed_c).flush().fence()
        vol = self.vol
        pages = vol.unmap_pages(ino)
        vol.free_pages(pages)
        if victim.rec.is_dir:
            vol.drop_dir(ino)
            vol.parents.pop(ino, None)
        vol.free_ino(ino)

    # rename

    def rename(self, src: str | bytes, dst: str | bytes) -> None:
        with self._lock:
            self._check_mounted()
            sp, sname = self._parent_of(src)
            dp, dname = self._parent_of(dst)
            check_name(dname)
            s_ent = self.vol.lookup_name(sp, sname)
            if s_ent is None:
                raise FsError(errno.ENOENT, sname.decode("utf-8", "replace"))
            d_ent = self.vol.lookup_name(dp, dname)
            if sp == dp and sname == dname:
                return
            moved = s_ent.ino
            is_dir = self._read_inode(moved).is_dir
            if is_dir:
                anc = dp
                while True:
                    if anc == moved:
                        raise FsError(errno.EINVAL, "cannot move a directory under itself")
                    if anc == L.ROOT_INO:
                        break
                    anc = self.vol.parents.get(anc, L.ROOT_INO)
            old_dir = False
            if d_ent is not None:
                if d_ent.ino == moved:
                    return
                old_dir = self._read_inode(d_ent.ino).is_dir
                if is_dir and not old_dir:
                    raise FsError(errno.ENOTDIR, dname.decode("utf-8", "replace"))
                if old_dir and not is_dir:
                    raise FsError(errno.EISDIR, dname.decode("utf-8", "replace"))
                if old_dir and self.vol.entries(d_ent.ino):
                    raise FsError(errno.ENOTEMPTY, dname.decode("utf-8", "replace"))
            self._need_room(dp)
            cross_dir = is_dir and sp != dp
            with self._op("rename") as tok:
                inos = {sp, dp, moved} | ({d_ent.ino} if d_ent else set())
                held = {i: tok.inode(i) for i in sorted(inos)}
                src_d = tok.dentry(s_ent.offset, sp)
                old_d = tok.dentry(d_ent.offset, dp) if d_ent else None
                # 1: a fresh destination entry carrying only the name
                named = acquire_free_dentry(tok, held[dp]).set_name(dname).flush().fence()
                # 2: point it at the source
                ptr = named.set_rename_pointer(src_d)
                if cross_dir:
                    ptr_c, bumped = fence_all(tok, ptr.flush(), held[dp].inc_link().flush())
                    # 3: atomic point
                    renaming, superseded, held[dp] = ptr_c.commit_rename(src_d, held[moved], bumped)
                else:
                    ptr_c = ptr.flush().fence()
                    renaming, superseded = ptr_c.commit_rename(src_d, held[moved])
                renaming_c = renaming.flush().fence()
                # 4: physically invalidate the source and any entry it replaces
                if old_d is not None:
                    src_cleared, old_cleared = fence_all(
                        tok, superseded.clear_ino().flush(), old_d.clear_ino().flush()
                    )
                else:
                    (src_cleared,) = fence_all(tok, superseded.clear_ino().flush())
                    old_cleared = None
                # 5: drop the rename pointer and the now-stale link counts
                inflight: list[Any] = [renaming_c.clear_rename_pointer(src_cleared).flush()]
                if cross_dir:
                    inflight.append(held[sp].dec_link(src_cleared).flush())
                if old_dir:
                    assert old_cleared is not None
                    inflight.append(held[dp].dec_link(old_cleared).flush())
                mark = tok.fence()
                done = [h.fenced(mark) for h in inflight]
                final = done[0]
                # 6: free the old entries, then tear down a replaced inode
                vol = self.vol
                vol.remove_name(sp, sname)
                if d_ent is not None:
                    vol.remove_name(dp, dname)
                if old_cleared is not None and d_ent is not None:
                    victim = held[d_ent.ino]
                    self._drop_inode(
                        tok, victim, old_cleared, 2 if old_dir else 1, [src_cleared, old_cleared]
                    )
                    vol.free_slot(dp, d_ent.offset)
                else:
                    src_cleared.dealloc_dentry().flush().fence()
                vol.free_slot(sp, s_ent.offset)
                vol.insert_name(dp, dname, final.offset, moved)
                if is_dir:
                    vol.parents[moved] = dp


def _set_clean(dev: PmDevice, value: int) -> None:
    dev.store(L.SB_CLEAN, value.to_bytes(8, "little"))
    dev.flush(L.SB_CLEAN, 8)
    dev.fence()


def mount(dev: PmDevice, expect_clean: bool = False, clock: Callable[[], int] | None = None) -> Fs:
    return Fs.mount(dev, expect_clean, clock)


# recovery


class _Writer:
    """Raw store helper for recovery: every batch ends in one fence."""

    def __init__(self, dev: PmDevice) -> None:
        self.dev = dev
        self.touched: list[tuple[int, int]] = []

    def put(self, offset: int, data: bytes) -> None:
        self.dev.memcpy(offset, data)
        self.touched.append((offset, len(data)))

    def commit(self) -> None:
        if not self.touched:
            return
        for off, n in self.touched:
            self.dev.flush(off, n)
        self.dev.fence()
        self.touched.clear()


def recover(dev: PmDevice, geo: L.Geometry | None = None) -> RecoveryReport:
    """Repair a crashed image in place.

    Interrupted renames are completed or rolled back first; then unreachable
    objects and stray allocations are swept; finally over-counted links are
    rewritten down to their true values, one fenced store per inode.
    """
    if geo is None:
        geo = L.geometry_from_superblock(L.read_superblock(dev), dev.capacity)
    rep = RecoveryReport()
    w = _Writer(dev)
    dev.mark("begin:recover")

    sc = scan_media(dev.view(), geo)
    for dst in sc.renames:
        rec = sc.dentries[dst]
        src = rec.rename_ptr
        src_rec = sc.dentries.get(src)
        if rec.ino == 0:
            w.put(dst, bytes(L.DENTRY_SIZE))
            w.commit()
            rep.renames_rolled_back += 1
            continue
        # complete: invalidate the source and any same-name entry being replaced
        if src_rec is not None and src_rec.ino:
            w.put(src + L.DENTRY_INO, bytes(8))
        parent = sc.dentry_dir[dst]
        for off, other in sc.dir_entries(parent):
            if off != dst and other.ino and other.name == rec.name and off not in sc.superseded:
                w.put(off + L.DENTRY_INO, bytes(8))
        w.commit()
        w.put(dst + L.DENTRY_RENAME_PTR, bytes(8))
        w.commit()
        if src_rec is not None and not any(
            d.rename_ptr == src for o, d in sc.dentries.items() if o != dst
        ):
            w.put(src, bytes(L.DENTRY_SIZE))
            w.commit()
        rep.renames_completed += 1

    sc = scan_media(dev.view(), geo)
    # entries that never committed, or that point at nothing
    for off, d in sorted(sc.dentries.items()):
        if d.ino == 0 and d.rename_ptr == 0:
            w.put(off, bytes(L.DENTRY_SIZE))
            rep.dentries_freed += 1
        elif d.ino and (d.ino not in sc.inodes or sc.inodes[d.ino].ino != d.ino):
            w.put(off + L.DENTRY_INO, bytes(8))
            rep.notes.append(f"cleared dangling entry at {off}")
    w.commit()

    sc = scan_media(dev.view(), geo)
    orphans = sorted(i for i in sc.inodes if i not in sc.reachable)
    # entries inside unreachable directories must stop pointing first
    for ino in orphans:
        for off, d in sc.dir_entries(ino):
            if d.ino:
                w.put(off + L.DENTRY_INO, bytes(8))
    w.commit()
    stray = _stray_pages(sc)
    for p in stray:
        if sc.descs[p].owner_ino:
            w.put(geo.desc_offset(p) + L.DESC_OWNER, bytes(8))
    w.commit()
    for p in stray:
        w.put(geo.desc_offset(p), bytes(L.DESC_SIZE))
    w.commit()
    rep.pages_freed = len(stray)
    for ino in orphans:
        w.put(geo.inode_offset(ino), bytes(L.INODE_SIZE))
    w.commit()
    rep.orphans_freed = len(orphans)

    sc = scan_media(dev.view(), geo)
    for ino in sorted(sc.reachable):
        true = sc.true_links(ino)
        have = sc.inodes[ino].link_count
        if have > true:
            w.put(geo.inode_offset(ino) + L.INODE_LINKS, true.to_bytes(8, "little"))
            w.commit()
            rep.links_repaired += 1
        elif have < true:
            rep.notes.append(f"inode {ino} has {have} links but {true} references")
    dev.mark("end:recover")
    return rep


def _stray_pages(sc: MediaScan) -> list[int]:
    """Allocated descriptors that no reachable inode may keep."""
    out = []
    seen: set[tuple[int, int]] = set()
    for p, desc in sorted(sc.descs.items()):
        owner = sc.inodes.get(desc.owner_ino)
        keep = False
        if desc.owner_ino in sc.reachable and owner is not None:
            if owner.is_dir:
                keep = desc.kind == L.KIND_DIR
            elif desc.kind == L.KIND_DATA and desc.offset % PS == 0:
                key = (desc.owner_ino, desc.offset)
                keep = desc.offset < owner.size and key not in seen
                seen.add(key)
        if not keep:
            out.append(p)
    return out


def state_summary(fs: Fs) -> dict[str, Any]:
    return fs.vol.signature()
