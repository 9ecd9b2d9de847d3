from __future__ import annotations

import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssufs import layout as L
from ssufs.crashcheck import fsck
from ssufs.pmem import PmDevice

u64 = st.integers(0, 2**64 - 1)
names = st.binary(min_size=1, max_size=L.NAME_MAX).filter(lambda b: b"\0" not in b)


@given(st.builds(L.InodeRecord, u64, u64, u64, u64, u64, u64, u64, u64, u64))
def test_inode_round_trip(rec: L.InodeRecord) -> None:
    raw = rec.encode()
    assert len(raw) == L.INODE_SIZE
    assert L.InodeRecord.decode(raw) == rec
    assert L.InodeRecord.decode(raw).encode() == raw


@given(st.builds(L.DentryRecord, names, u64, u64))
def test_dentry_round_trip(rec: L.DentryRecord) -> None:
    raw = rec.encode()
    assert len(raw) == L.DENTRY_SIZE
    assert L.DentryRecord.decode(raw) == rec
    assert struct.unpack_from("<Q", raw, L.DENTRY_INO)[0] == rec.ino
    assert struct.unpack_from("<Q", raw, L.DENTRY_RENAME_PTR)[0] == rec.rename_ptr


@given(st.builds(L.PageDescriptor, u64, u64, u64))
def test_descriptor_round_trip(rec: L.PageDescriptor) -> None:
    raw = rec.encode()
    assert len(raw) == L.DESC_SIZE
    assert L.PageDescriptor.decode(raw) == rec


@given(st.builds(L.Superblock, u64, u64, u64, u64, u64))
def test_superblock_round_trip(sb: L.Superblock) -> None:
    raw = sb.encode()
    assert len(raw) == L.SUPERBLOCK_SIZE
    assert L.Superblock.decode(raw) == sb


def test_dentry_rejects_long_name() -> None:
    with pytest.raises(L.LayoutError):
        L.DentryRecord(b"x" * (L.NAME_MAX + 1), 1).encode()


def test_constants() -> None:
    assert (L.DENTRY_SIZE, L.NAME_MAX, L.INODE_SIZE, L.DESC_SIZE) == (128, 110, 128, 24)
    assert L.DENTRIES_PER_PAGE == 32
    # the ino and rename pointer are aligned words, so each update is one atomic store
    assert L.DENTRY_INO % 8 == 0 and L.DENTRY_RENAME_PTR % 8 == 0
    assert L.DENTRY_INO >= L.NAME_MAX


def test_one_mebibyte_geometry() -> None:
    geo = L.compute_geometry(1 << 20)
    assert (geo.num_pages, geo.num_inodes) == (251, 63)


@given(st.integers(L.MIN_CAPACITY, 1 << 32))
def test_geometry_properties(capacity: int) -> None:
    geo = L.compute_geometry(capacity)
    data_bytes = geo.num_pages * L.PAGE_SIZE
    # one inode per 16 KiB of data region, rounded up
    assert geo.num_inodes == -(-data_bytes // L.BYTES_PER_INODE)
    assert geo.inode_base == L.SUPERBLOCK_SIZE
    assert geo.desc_base == geo.inode_base + geo.num_inodes * L.INODE_SIZE
    assert geo.data_base >= geo.desc_base + geo.num_pages * L.DESC_SIZE
    assert geo.data_base % L.PAGE_SIZE == 0
    assert geo.data_base + data_bytes <= capacity
    # maximal: one more page would not fit
    more = geo.num_pages + 1
    inodes = -(-more * L.PAGE_SIZE // L.BYTES_PER_INODE)
    base = L.SUPERBLOCK_SIZE + inodes * L.INODE_SIZE + more * L.DESC_SIZE
    assert -(-base // L.PAGE_SIZE) * L.PAGE_SIZE + more * L.PAGE_SIZE > capacity


def test_geometry_offsets_and_bounds() -> None:
    geo = L.compute_geometry(1 << 20)
    assert geo.inode_offset(1) == geo.inode_base
    assert geo.ino_at(geo.inode_offset(7)) == 7
    assert geo.page_of(geo.page_offset(9)) == 9
    assert geo.is_dentry_offset(geo.dentry_offset(3, 31))
    assert not geo.is_dentry_offset(geo.dentry_offset(3, 1) + 8)
    assert geo.slot_offset("inode", 0) == geo.inode_offset(1)
    for bad in (lambda: geo.inode_offset(0), lambda: geo.page_offset(geo.num_pages),
                lambda: geo.dentry_offset(0, 32)):
        with pytest.raises(L.LayoutError):
            bad()
    assert len(geo.header()) == 16


def test_too_small_device() -> None:
    with pytest.raises(L.LayoutError):
        L.compute_geometry(L.MIN_CAPACITY - 1)


def test_mkfs_image_is_clean_and_consistent() -> None:
    dev = PmDevice(2 << 20)
    geo = L.mkfs(dev)
    assert not dev.has_pending()
    sb = L.read_superblock(dev, durable=True)
    assert (sb.magic, sb.clean_unmount, sb.num_pages) == (L.MAGIC, 1, geo.num_pages)
    root = L.InodeRecord.decode(dev.read_durable(geo.inode_offset(L.ROOT_INO), L.INODE_SIZE))
    assert root.is_dir and root.link_count == 2
    assert fsck(dev.view()).ok


def test_bad_magic_is_corrupt() -> None:
    dev = PmDevice(1 << 20)
    with pytest.raises(L.CorruptImage):
        L.read_superblock(dev)
