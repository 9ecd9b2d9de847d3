"""DRAM-side indexes and allocators, rebuilt from the media at mount."""

from __future__ import annotations

import bisect
import errno
import threading
from collections import deque
from dataclasses import dataclass, field

from . import layout as L
from .errors import FsError
from .pmem import PmDevice


@dataclass(frozen=True)
class NameEntry:
    offset: int  # byte offset of the DentryRecord
    ino: int


class _FreeList:
    """Sorted free list with lowest-first allocation."""

    def __init__(self, items: list[int] | None = None) -> None:
        self._items = sorted(items or [])

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, x: int) -> bool:
        i = bisect.bisect_left(self._items, x)
        return i < len(self._items) and self._items[i] == x

    def take(self, n: int = 1) -> list[int]:
        if n > len(self._items):
            raise FsError(errno.ENOSPC)
        out, self._items = self._items[:n], self._items[n:]
        return out

    def peek(self) -> int | None:
        return self._items[0] if self._items else None

    def put(self, x: int) -> None:
        i = bisect.bisect_left(self._items, x)
        if i < len(self._items) and self._items[i] == x:
            raise ValueError(f"{x} already free")
        self._items.insert(i, x)

    def remove(self, x: int) -> None:
        i = bisect.bisect_left(self._items, x)
        if i == len(self._items) or self._items[i] != x:
            raise ValueError(f"{x} not free")
        del self._items[i]

    def as_list(self) -> list[int]:
        return list(self._items)


class VolatileState:
    """Name index, page index, and free lists. Internally locked."""

    def __init__(self, geo: L.Geometry) -> None:
        self.geo = geo
        self.lock = threading.RLock()
        self.names: dict[int, dict[bytes, NameEntry]] = {}
        self.file_pages: dict[int, dict[int, int]] = {}
        self.dir_pages: dict[int, list[int]] = {}
        self.inode_freelist = _FreeList()
        self.page_freelist = _FreeList()
        self.free_slots: dict[int, _FreeList] = {}
        self.parents: dict[int, int] = {}

    # name index

    def insert_name(self, dir_ino: int, name: bytes, offset: int, ino: int) -> None:
        with self.lock:
            entries = self.names.setdefault(dir_ino, {})
            if name in entries:
                raise KeyError(f"duplicate name {name!r} in directory {dir_ino}")
            entries[name] = NameEntry(offset, ino)

    def remove_name(self, dir_ino: int, name: bytes) -> NameEntry:
        with self.lock:
            return self.names[dir_ino].pop(name)

    def lookup_name(self, dir_ino: int, name: bytes) -> NameEntry | None:
        with self.lock:
            return self.names.get(dir_ino, {}).get(name)

    def entries(self, dir_ino: int) -> dict[bytes, NameEntry]:
        with self.lock:
            return dict(self.names.get(dir_ino, {}))

    # page index

    def map_pages(self, ino: int, pages: list[tuple[int, int]]) -> None:
        """Record ``(file_offset, page)`` pairs for a regular file."""
        with self.lock:
            index = self.file_pages.setdefault(ino, {})
            for off, page in pages:
                if off in index:
                    raise KeyError(f"offset {off} of inode {ino} already mapped")
                index[off] = page

    def unmap_pages(self, ino: int) -> list[int]:
        with self.lock:
            if ino in self.dir_pages:
                return self.dir_pages.pop(ino)
            return sorted(self.file_pages.pop(ino, {}).values())

    def pages_of(self, ino: int) -> dict[int, int]:
        with self.lock:
            return dict(self.file_pages.get(ino, {}))

    def add_dir_page(self, dir_ino: int, page: int) -> None:
        with self.lock:
            bisect.insort(self.dir_pages.setdefault(dir_ino, []), page)
            slots = self.free_slots.setdefault(dir_ino, _FreeList())
            for s in range(L.DENTRIES_PER_PAGE):
                slots.put(self.geo.dentry_offset(page, s))

    # allocators

    def allocate_ino(self) -> int:
        with self.lock:
            return self.inode_freelist.take(1)[0]

    def free_ino(self, ino: int) -> None:
        with self.lock:
            self.inode_freelist.put(ino)

    def allocate_pages(self, n: int) -> list[int]:
        with self.lock:
            return self.page_freelist.take(n)

    def free_pages(self, pages: list[int]) -> None:
        with self.lock:
            for p in pages:
                self.page_freelist.put(p)

    def take_slot(self, dir_ino: int) -> int | None:
        with self.lock:
            slots = self.free_slots.get(dir_ino)
            if not slots:
                return None
            return slots.take(1)[0]

    def free_slot(self, dir_ino: int, offset: int) -> None:
        with self.lock:
            self.free_slots.setdefault(dir_ino, _FreeList()).put(offset)

    def drop_dir(self, dir_ino: int) -> None:
        with self.lock:
            self.names.pop(dir_ino, None)
            self.free_slots.pop(dir_ino, None)
            self.dir_pages.pop(dir_ino, None)

    # comparisons

    def signature(self) -> dict[str, object]:
        """Plain-data form used for structural equality."""
        with self.lock:
            return {
                "names": {d: dict(e) for d, e in self.names.items() if e},
                "file_pages": {i: dict(p) for i, p in self.file_pages.items() if p},
                "dir_pages": {i: list(p) for i, p in self.dir_pages.items() if p},
                "free_inodes": self.inode_freelist.as_list(),
                "free_pages": self.page_freelist.as_list(),
                "free_slots": {d: s.as_list() for d, s in self.free_slots.items() if len(s)},
                "parents": dict(self.parents),
            }


# media scanning (read-only; shared by rebuild, recovery and fsck)


@dataclass
class MediaScan:
    geo: L.Geometry
    inodes: dict[int, L.InodeRecord] = field(default_factory=dict)  # allocated slots
    descs: dict[int, L.PageDescriptor] = field(default_factory=dict)  # allocated slots
    dir_pages: dict[int, list[int]] = field(default_factory=dict)  # owner -> pages
    file_pages: dict[int, dict[int, list[int]]] = field(default_factory=dict)
    dentries: dict[int, L.DentryRecord] = field(default_factory=dict)  # offset -> rec
    dentry_dir: dict[int, int] = field(default_factory=dict)  # offset -> owning dir ino
    superseded: set[int] = field(default_factory=set)
    reachable: set[int] = field(default_factory=set)
    parent: dict[int, int] = field(default_factory=dict)
    refs: dict[int, int] = field(default_factory=dict)
    subdirs: dict[int, int] = field(default_factory=dict)
    renames: list[int] = field(default_factory=list)

    def valid_dentry(self, off: int) -> bool:
        d = self.dentries.get(off)
        return d is not None and d.ino != 0 and off not in self.superseded

    def dir_entries(self, dir_ino: int) -> list[tuple[int, L.DentryRecord]]:
        out = []
        for page in self.dir_pages.get(dir_ino, []):
            base = self.geo.page_offset(page)
            for s in range(L.DENTRIES_PER_PAGE):
                off = base + s * L.DENTRY_SIZE
                rec = self.dentries.get(off)
                if rec is not None:
                    out.append((off, rec))
        return out

    def true_links(self, ino: int) -> int:
        rec = self.inodes.get(ino)
        refs = 1 if ino == L.ROOT_INO else self.refs.get(ino, 0)
        if rec is not None and rec.is_dir:
            return refs + 1 + self.subdirs.get(ino, 0)
        return refs


def scan_media(buf: bytes | bytearray | memoryview, geo: L.Geometry) -> MediaScan:
    mv = memoryview(buf)
    sc = MediaScan(geo)
    zero_inode = bytes(L.INODE_SIZE)
    base = geo.inode_base
    for i in range(geo.num_inodes):
        off = base + i * L.INODE_SIZE
        raw = mv[off : off + L.INODE_SIZE]
        if raw != zero_inode:
            sc.inodes[i + 1] = L.InodeRecord.decode(raw)
    zero_desc = bytes(L.DESC_SIZE)
    dbase = geo.desc_base
    for p in range(geo.num_pages):
        off = dbase + p * L.DESC_SIZE
        raw = mv[off : off + L.DESC_SIZE]
        if raw == zero_desc:
            continue
        desc = L.PageDescriptor.decode(raw)
        sc.descs[p] = desc
        if desc.owner_ino == 0:
            continue
        if desc.kind == L.KIND_DIR:
            sc.dir_pages.setdefault(desc.owner_ino, []).append(p)
        elif desc.kind == L.KIND_DATA:
            sc.file_pages.setdefault(desc.owner_ino, {}).setdefault(desc.offset, []).append(p)
    zero_dentry = bytes(L.DENTRY_SIZE)
    for owner, pages in sc.dir_pages.items():
        for p in pages:
            pbase = geo.page_offset(p)
            page = mv[pbase : pbase + L.PAGE_SIZE]
            if page == bytes(L.PAGE_SIZE):
                continue
            for s in range(L.DENTRIES_PER_PAGE):
                raw = page[s * L.DENTRY_SIZE : (s + 1) * L.DENTRY_SIZE]
                if raw != zero_dentry:
                    off = pbase + s * L.DENTRY_SIZE
                    sc.dentries[off] = L.DentryRecord.decode(raw)
                    sc.dentry_dir[off] = owner
    # a committed dentry carrying a rename pointer logically hides its source
    for off, d in sc.dentries.items():
        if d.rename_ptr:
            sc.renames.append(off)
            if d.ino:
                sc.superseded.add(d.rename_ptr)
    sc.renames.sort()
    _walk(sc)
    return sc


def _walk(sc: MediaScan) -> None:
    root = sc.inodes.get(L.ROOT_INO)
    if root is None or not root.is_dir:
        return
    sc.reachable.add(L.ROOT_INO)
    queue = deque([L.ROOT_INO])
    while queue:
        d = queue.popleft()
        for off, rec in sc.dir_entries(d):
            if rec.ino == 0 or off in sc.superseded:
                continue
            child = rec.ino
            sc.refs[child] = sc.refs.get(child, 0) + 1
            crec = sc.inodes.get(child)
            if crec is None:
                continue
            if crec.is_dir:
                sc.subdirs[d] = sc.subdirs.get(d, 0) + 1
            if child not in sc.reachable:
                sc.reachable.add(child)
                sc.parent[child] = d
                if crec.is_dir:
                    queue.append(child)


def rebuild(dev: PmDevice, geo: L.Geometry | None = None) -> VolatileState:
    """Build indexes and allocators from the (program-visible) device contents."""
    if geo is None:
        sb = L.read_superblock(dev)
        geo = L.geometry_from_superblock(sb, dev.capacity)
    sc = scan_media(dev.view(), geo)
    return build_state(sc)


def build_state(sc: MediaScan) -> VolatileState:
    geo = sc.geo
    vs = VolatileState(geo)
    vs.inode_freelist = _FreeList([i for i in range(1, geo.num_inodes + 1) if i not in sc.inodes])
    vs.page_freelist = _FreeList([p for p in range(geo.num_pages) if p not in sc.descs])
    for ino in sorted(sc.reachable):
        rec = sc.inodes[ino]
        if rec.is_dir:
            pages = sorted(sc.dir_pages.get(ino, []))
            vs.dir_pages[ino] = pages
            names: dict[bytes, NameEntry] = {}
            slots = []
            for page in pages:
                base = geo.page_offset(page)
                for s in range(L.DENTRIES_PER_PAGE):
                    off = base + s * L.DENTRY_SIZE
                    d = sc.dentries.get(off)
                    if d is None:
                        slots.append(off)
                    elif d.ino != 0 and off not in sc.superseded and d.ino in sc.inodes:
                        names.setdefault(d.name, NameEntry(off, d.ino))
            vs.names[ino] = names
            vs.free_slots[ino] = _FreeList(slots)
        else:
            vs.file_pages[ino] = {off: ps[0] for off, ps in sc.file_pages.get(ino, {}).items()}
    vs.parents = {i: p for i, p in sc.parent.items() if i in vs.dir_pages}
    return vs


def dump_tree(dev: PmDevice, vs: VolatileState) -> str:
    """Deterministic ``path ino size links`` listing."""
    lines = []

    def inode(ino: int) -> L.InodeRecord:
        return L.InodeRecord.decode(dev.read(vs.geo.inode_offset(ino), L.INODE_SIZE))

    def visit(ino: int, path: str) -> None:
        rec = inode(ino)
        lines.append(f"{path} {ino} {rec.size} {rec.link_count}")
        if rec.is_dir:
            for name, ent in sorted(vs.entries(ino).items()):
                child = name.decode("utf-8", "surrogateescape")
                visit(ent.ino, f"{path.rstrip('/')}/{child}")

    visit(L.ROOT_INO, "/")
    return "\n".join(lines) + "\n"
