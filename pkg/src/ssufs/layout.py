"""On-media format.

The device is split into four regions: superblock, inode table, page
descriptor table, and data pages. Every record field is a little-endian u64.
A record counts as allocated when any of its bytes is nonzero; freeing a
record means zeroing it.
"""

from __future__ import annotations

import stat as _stat
import struct
from dataclasses import dataclass
from typing import Literal

from .pmem import PmDevice

MAGIC = 0x5353_5546_5331_0001  # "SSUFS1" + version
PAGE_SIZE = 4096
SUPERBLOCK_SIZE = PAGE_SIZE
INODE_SIZE = 128
DENTRY_SIZE = 128
DESC_SIZE = 24
NAME_MAX = 110
DENTRIES_PER_PAGE = PAGE_SIZE // DENTRY_SIZE
BYTES_PER_INODE = 16 * 1024
MIN_CAPACITY = 1 << 20
ROOT_INO = 1

KIND_DATA = 1
KIND_DIR = 2

S_IFDIR = _stat.S_IFDIR
S_IFREG = _stat.S_IFREG

_SB = struct.Struct("<5Q")
_INODE = struct.Struct("<9Q")
_DENTRY = struct.Struct(f"<{NAME_MAX}s2xQQ")
_DESC = struct.Struct("<3Q")

assert _DENTRY.size == DENTRY_SIZE
assert _DESC.size == DESC_SIZE
assert _INODE.size <= INODE_SIZE

# field offsets used for single-word updates
INODE_INO = 0
INODE_LINKS = 8
INODE_SIZE_FIELD = 16
INODE_MODE = 24
DENTRY_INO = 112
DENTRY_RENAME_PTR = 120
DESC_OWNER = 0
DESC_KIND = 8
DESC_OFFSET = 16
SB_CLEAN = 32


class LayoutError(ValueError):
    pass


class CorruptImage(LayoutError):
    pass


def is_allocated(record: bytes | bytearray | memoryview) -> bool:
    return any(record)


@dataclass(frozen=True)
class Superblock:
    magic: int
    page_size: int
    num_inodes: int
    num_pages: int
    clean_unmount: int

    def encode(self) -> bytes:
        raw = _SB.pack(self.magic, self.page_size, self.num_inodes, self.num_pages, self.clean_unmount)
        return raw + bytes(SUPERBLOCK_SIZE - len(raw))

    @classmethod
    def decode(cls, raw: bytes) -> Superblock:
        return cls(*_SB.unpack_from(raw))


@dataclass(frozen=True)
class InodeRecord:
    ino: int = 0
    link_count: int = 0
    size: int = 0
    mode: int = 0
    uid: int = 0
    gid: int = 0
    atime: int = 0
    mtime: int = 0
    ctime: int = 0

    def encode(self) -> bytes:
        raw = _INODE.pack(
            self.ino, self.link_count, self.size, self.mode,
            self.uid, self.gid, self.atime, self.mtime, self.ctime,
        )
        return raw + bytes(INODE_SIZE - len(raw))

    @classmethod
    def decode(cls, raw: bytes | memoryview) -> InodeRecord:
        return cls(*_INODE.unpack_from(raw))

    @property
    def is_dir(self) -> bool:
        return _stat.S_ISDIR(self.mode)

    @property
    def is_file(self) -> bool:
        return _stat.S_ISREG(self.mode)


@dataclass(frozen=True)
class DentryRecord:
    name: bytes = b""
    ino: int = 0
    rename_ptr: int = 0

    def encode(self) -> bytes:
        if len(self.name) > NAME_MAX:
            raise LayoutError(f"name longer than {NAME_MAX} bytes")
        return _DENTRY.pack(self.name, self.ino, self.rename_ptr)

    @classmethod
    def decode(cls, raw: bytes | memoryview) -> DentryRecord:
        name, ino, ptr = _DENTRY.unpack_from(raw)
        return cls(bytes(name).rstrip(b"\0"), ino, ptr)

    @property
    def valid(self) -> bool:
        return self.ino != 0


@dataclass(frozen=True)
class PageDescriptor:
    owner_ino: int = 0
    kind: int = 0
    offset: int = 0

    def encode(self) -> bytes:
        return _DESC.pack(self.owner_ino, self.kind, self.offset)

    @classmethod
    def decode(cls, raw: bytes | memoryview) -> PageDescriptor:
        return cls(*_DESC.unpack_from(raw))

    @property
    def valid(self) -> bool:
        return self.owner_ino != 0


SlotKind = Literal["inode", "page_desc", "page", "dentry"]


@dataclass(frozen=True)
class Geometry:
    capacity: int
    num_inodes: int
    num_pages: int
    inode_base: int
    desc_base: int
    data_base: int

    def inode_offset(self, ino: int) -> int:
        if not 1 <= ino <= self.num_inodes:
            raise LayoutError(f"inode number {ino} out of range")
        return self.inode_base + (ino - 1) * INODE_SIZE

    def ino_at(self, offset: int) -> int:
        return (offset - self.inode_base) // INODE_SIZE + 1

    def desc_offset(self, page: int) -> int:
        if not 0 <= page < self.num_pages:
            raise LayoutError(f"page index {page} out of range")
        return self.desc_base + page * DESC_SIZE

    def page_offset(self, page: int) -> int:
        if not 0 <= page < self.num_pages:
            raise LayoutError(f"page index {page} out of range")
        return self.data_base + page * PAGE_SIZE

    def page_of(self, offset: int) -> int:
        return (offset - self.data_base) // PAGE_SIZE

    def dentry_offset(self, page: int, slot: int) -> int:
        if not 0 <= slot < DENTRIES_PER_PAGE:
            raise LayoutError(f"dentry slot {slot} out of range")
        return self.page_offset(page) + slot * DENTRY_SIZE

    def is_dentry_offset(self, offset: int) -> bool:
        rel = offset - self.data_base
        return 0 <= rel < self.num_pages * PAGE_SIZE and rel % DENTRY_SIZE == 0

    def slot_offset(self, kind: SlotKind, index: int, slot: int = 0) -> int:
        if kind == "inode":
            if not 0 <= index < self.num_inodes:
                raise LayoutError(f"inode slot {index} out of range")
            return self.inode_base + index * INODE_SIZE
        if kind == "page_desc":
            return self.desc_offset(index)
        if kind == "page":
            return self.page_offset(index)
        if kind == "dentry":
            return self.dentry_offset(index, slot)
        raise LayoutError(f"unknown slot kind {kind!r}")

    def header(self) -> bytes:
        """16-byte summary: inode and page counts."""
        return struct.pack("<QQ", self.num_inodes, self.num_pages)

    def describe(self) -> str:
        return (
            f"capacity {self.capacity}\n"
            f"superblock 0 {SUPERBLOCK_SIZE}\n"
            f"inodes {self.inode_base} {self.num_inodes}\n"
            f"descriptors {self.desc_base} {self.num_pages}\n"
            f"pages {self.data_base} {self.num_pages}\n"
        )


def _align(n: int, a: int) -> int:
    return (n + a - 1) // a * a


def _inodes_for(pages: int) -> int:
    return -(-pages * PAGE_SIZE // BYTES_PER_INODE)


def compute_geometry(capacity: int) -> Geometry:
    """Split ``capacity`` bytes into the four regions.

    The page count is the largest one for which the metadata tables (sized
    from that page count) still leave room for the pages themselves.
    """
    if capacity < MIN_CAPACITY:
        raise LayoutError(f"capacity {capacity} below minimum {MIN_CAPACITY}")
    per_page = PAGE_SIZE + DESC_SIZE + INODE_SIZE / (BYTES_PER_INODE // PAGE_SIZE)
    pages = int((capacity - SUPERBLOCK_SIZE) / per_page) + 2
    while pages > 0:
        inodes = _inodes_for(pages)
        desc_base = SUPERBLOCK_SIZE + inodes * INODE_SIZE
        data_base = _align(desc_base + pages * DESC_SIZE, PAGE_SIZE)
        if data_base + pages * PAGE_SIZE <= capacity:
            return Geometry(capacity, inodes, pages, SUPERBLOCK_SIZE, desc_base, data_base)
        pages -= 1
    raise LayoutError("no room for data pages")


def geometry_from_superblock(sb: Superblock, capacity: int) -> Geometry:
    geo = compute_geometry(capacity)
    if (sb.num_inodes, sb.num_pages, sb.page_size) != (geo.num_inodes, geo.num_pages, PAGE_SIZE):
        raise CorruptImage("superblock geometry does not match device size")
    return geo


def read_superblock(dev: PmDevice, *, durable: bool = False) -> Superblock:
    raw = dev.read_durable(0, _SB.size) if durable else dev.read(0, _SB.size)
    sb = Superblock.decode(raw)
    if sb.magic != MAGIC:
        raise CorruptImage(f"bad magic {sb.magic:#x}")
    return sb


def mkfs(dev: PmDevice, capacity: int | None = None, *, now: int = 0) -> Geometry:
    """Zero the metadata, write the superblock and the root directory inode."""
    capacity = dev.capacity if capacity is None else capacity
    if capacity != dev.capacity:
        raise LayoutError("capacity does not match device")
    geo = compute_geometry(capacity)
    dev.mark("begin:mkfs")
    dev.memcpy(0, bytes(geo.data_base))
    root = InodeRecord(
        ino=ROOT_INO, link_count=2, size=0, mode=S_IFDIR | 0o755,
        atime=now, mtime=now, ctime=now,
    )
    dev.memcpy(geo.inode_offset(ROOT_INO), root.encode())
    sb = Superblock(MAGIC, PAGE_SIZE, geo.num_inodes, geo.num_pages, 1)
    dev.memcpy(0, sb.encode())
    dev.flush(0, geo.data_base)
    dev.fence()
    dev.mark("end:mkfs")
    return geo
