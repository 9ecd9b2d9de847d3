"""Deliberately broken operations for testing the crash harness.

Each fault reimplements one call with raw device stores, bypassing the typed
handles, and drops or reorders exactly one ordering step. Nothing outside the
test suite and the ``crashtest --inject`` flag imports this module.
"""

from __future__ import annotations

import errno
from collections.abc import Callable

from . import layout as L
from .errors import FsError
from .fsops import PS, Fs
from .pmem import PmDevice
from .volatile import _FreeList

FAULTS: dict[str, str] = {
    "mkdir-shared-commit-fence": "mkdir commits the entry in the same epoch as the inode init",
    "mkdir-late-parent-link": "mkdir raises the parent link count only after the commit",
    "unlink-early-dec-link": "unlink drops the link count before clearing the entry",
    "unlink-early-inode-free": "unlink zeroes the inode before clearing page backpointers",
    "rename-merged-clear": "rename clears the source and the rename pointer under one fence",
    "rename-no-pointer": "rename commits the destination without a rename pointer",
    "write-size-with-data": "append stores the new size in the same epoch as the pages",
}

# which workload exercises each fault
FAULT_WORKLOADS: dict[str, str] = {
    "mkdir-shared-commit-fence": "mkdir /d\n",
    "mkdir-late-parent-link": "mkdir /d\n",
    "unlink-early-dec-link": "create /a\nunlink /a\n",
    "unlink-early-inode-free": "create /a\nwrite /a 0 5000 1\nunlink /a\n",
    "rename-merged-clear": "create /a\nrename /a /b\n",
    "rename-no-pointer": "create /a\nrename /a /b\n",
    "write-size-with-data": "create /a\nwrite /a 0 100 1\n",
}


class FaultyFs(Fs):
    fault = ""

    # raw helpers

    def _put(self, offset: int, data: bytes) -> None:
        self.dev.memcpy(offset, data)
        self.dev.flush(offset, len(data))

    def _fence(self) -> None:
        self.dev.fence()

    def _slot(self, dir_ino: int) -> int:
        slot = self.vol.take_slot(dir_ino)
        if slot is not None:
            return slot
        page = self.vol.allocate_pages(1)[0]
        base = self.geo.page_offset(page)
        if any(self.dev.read(base, PS)):
            self._put(base, bytes(PS))
            self._fence()
        self._put(self.geo.desc_offset(page), L.PageDescriptor(dir_ino, L.KIND_DIR, 0).encode())
        self._fence()
        self.vol.add_dir_page(dir_ino, page)
        slot = self.vol.take_slot(dir_ino)
        assert slot is not None
        return slot

    def _links(self, ino: int, value: int) -> None:
        self._put(self.geo.inode_offset(ino) + L.INODE_LINKS, value.to_bytes(8, "little"))

    # faulty calls

    def mkdir(self, path: str | bytes, mode: int = 0o755) -> int:
        if not self.fault.startswith("mkdir-"):
            return super().mkdir(path, mode)
        pino, name = self._parent_of(path)
        if self.vol.lookup_name(pino, name) is not None:
            raise FsError(errno.EEXIST, "exists")
        slot = self._slot(pino)
        ino = self.vol.allocate_ino()
        rec = L.InodeRecord(ino, 2, 0, L.S_IFDIR | mode)
        parent = self._read_inode(pino)
        self._put(self.geo.inode_offset(ino), rec.encode())
        self._put(slot, name + bytes(L.DENTRY_INO - len(name)))
        if self.fault == "mkdir-shared-commit-fence":
            self._links(pino, parent.link_count + 1)
            self._put(slot + L.DENTRY_INO, ino.to_bytes(8, "little"))
            self._fence()
        else:
            self._fence()
            self._put(slot + L.DENTRY_INO, ino.to_bytes(8, "little"))
            self._fence()
            self._links(pino, parent.link_count + 1)
            self._fence()
        vol = self.vol
        vol.insert_name(pino, name, slot, ino)
        vol.names[ino] = {}
        vol.dir_pages[ino] = []
        vol.free_slots[ino] = _FreeList()
        vol.parents[ino] = pino
        return ino

    def unlink(self, path: str | bytes) -> None:
        if not self.fault.startswith("unlink-"):
            return super().unlink(path)
        pino, name = self._parent_of(path)
        ent = self.vol.lookup_name(pino, name)
        if ent is None:
            raise FsError(errno.ENOENT, "missing")
        rec = self._read_inode(ent.ino)
        pages = sorted(self.vol.pages_of(ent.ino).values())

        def clear() -> None:
            self._put(ent.offset + L.DENTRY_INO, bytes(8))

        if self.fault == "unlink-early-dec-link":
            self._links(ent.ino, rec.link_count - 1)
            self._fence()
            clear()
            self._fence()
        else:
            clear()
            self._fence()
            self._put(self.geo.inode_offset(ent.ino), bytes(L.INODE_SIZE))
            self._fence()
        for p in pages:
            self._put(self.geo.desc_offset(p) + L.DESC_OWNER, bytes(8))
        self._fence()
        for p in pages:
            self._put(self.geo.desc_offset(p), bytes(L.DESC_SIZE))
        self._put(self.geo.inode_offset(ent.ino), bytes(L.INODE_SIZE))
        self._put(ent.offset, bytes(L.DENTRY_SIZE))
        self._fence()
        vol = self.vol
        vol.remove_name(pino, name)
        vol.free_pages(vol.unmap_pages(ent.ino))
        vol.free_ino(ent.ino)
        vol.free_slot(pino, ent.offset)

    def rename(self, src: str | bytes, dst: str | bytes) -> None:
        if not self.fault.startswith("rename-"):
            return super().rename(src, dst)
        sp, sname = self._parent_of(src)
        dp, dname = self._parent_of(dst)
        s_ent = self.vol.lookup_name(sp, sname)
        if s_ent is None:
            raise FsError(errno.ENOENT, "missing")
        if self.vol.lookup_name(dp, dname) is not None or self._read_inode(s_ent.ino).is_dir:
            raise FsError(errno.ENOTSUP, "injected rename handles only new-name file moves")
        slot = self._slot(dp)
        self._put(slot, dname + bytes(L.DENTRY_INO - len(dname)))
        self._fence()
        if self.fault == "rename-merged-clear":
            self._put(slot + L.DENTRY_RENAME_PTR, s_ent.offset.to_bytes(8, "little"))
            self._fence()
        self._put(slot + L.DENTRY_INO, s_ent.ino.to_bytes(8, "little"))
        self._fence()
        self._put(s_ent.offset + L.DENTRY_INO, bytes(8))
        if self.fault == "rename-merged-clear":
            self._put(slot + L.DENTRY_RENAME_PTR, bytes(8))
        self._fence()
        self._put(s_ent.offset, bytes(L.DENTRY_SIZE))
        self._fence()
        vol = self.vol
        vol.remove_name(sp, sname)
        vol.free_slot(sp, s_ent.offset)
        vol.insert_name(dp, dname, slot, s_ent.ino)

    def write(self, ino: int, offset: int, data: bytes) -> int:
        rec = self._read_inode(ino)
        mapped = self.vol.pages_of(ino)
        if self.fault != "write-size-with-data" or offset != rec.size or offset % PS or not data:
            return super().write(ino, offset, data)
        n = -(-len(data) // PS)
        pages = self.vol.allocate_pages(n)
        assert all(offset + i * PS not in mapped for i in range(n))
        for i, p in enumerate(pages):
            off = offset + i * PS
            self._put(self.geo.desc_offset(p), L.PageDescriptor(ino, L.KIND_DATA, off).encode())
            chunk = data[i * PS : (i + 1) * PS]
            self._put(self.geo.page_offset(p), chunk + bytes(PS - len(chunk)))
        self._put(self.geo.inode_offset(ino) + L.INODE_SIZE_FIELD, (offset + len(data)).to_bytes(8, "little"))
        self._fence()
        self.vol.map_pages(ino, [(offset + i * PS, p) for i, p in enumerate(pages)])
        return len(data)


def faulty_factory(fault: str, clock: Callable[[], int] | None = None) -> Callable[[PmDevice], Fs]:
    if fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {', '.join(sorted(FAULTS))}")

    def make(dev: PmDevice) -> Fs:
        fs = FaultyFs.mount(dev, clock=clock or (lambda: 0))
        assert isinstance(fs, FaultyFs)
        fs.fault = fault
        return fs

    return make
