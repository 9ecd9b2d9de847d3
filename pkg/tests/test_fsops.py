from __future__ import annotations

import errno

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, rule

from conftest import fresh_fs
from ssufs import layout as L
from ssufs.crashcheck import fsck
from ssufs.errors import AlreadyMounted, FsError
from ssufs.fsops import Fs
from ssufs.pmem import PmDevice, count_events
from ssufs.volatile import build_state, scan_media


def code_of(fn: object, *args: object) -> int:
    try:
        fn(*args)  # type: ignore[operator]
    except FsError as e:
        return e.code
    return 0


# basic behavior


def test_create_lookup_stat(fs: Fs) -> None:
    ino = fs.create("/a")
    assert fs.lookup("/a") == ino
    st_ = fs.stat(ino)
    assert (st_.size, st_.link_count, st_.is_dir) == (0, 1, False)
    assert fs.stat(L.ROOT_INO).link_count == 2


def test_mkdir_link_counts(fs: Fs) -> None:
    d = fs.mkdir("/d")
    fs.mkdir("/d/e")
    assert fs.stat(L.ROOT_INO).link_count == 3
    assert fs.stat(d).link_count == 3
    assert [n for n, _ in fs.readdir(d)] == [b".", b"..", b"e"]
    assert fs.readdir(d)[1] == (b"..", L.ROOT_INO)


def test_write_read_and_gap_fill(fs: Fs) -> None:
    ino = fs.create("/f")
    assert fs.write(ino, 0, b"hello") == 5
    assert fs.write(ino, 10000, b"tail") == 4
    assert fs.stat(ino).size == 10004
    data = fs.read(ino, 0, 20000)
    assert data[:5] == b"hello" and data[5:10000] == bytes(9995) and data[10000:] == b"tail"
    fs.write(ino, 2, b"LL")
    assert fs.read(ino, 0, 5) == b"heLLo"
    assert fs.read(ino, 10004, 10) == b""


def test_rename_replaces_file_and_frees_it(fs: Fs) -> None:
    a = fs.create("/a")
    b = fs.create("/b")
    fs.write(b, 0, b"x" * 9000)
    free_before = len(fs.vol.page_freelist)
    fs.rename("/a", "/b")
    assert fs.lookup("/b") == a
    assert code_of(fs.lookup, "/a") == errno.ENOENT
    assert len(fs.vol.page_freelist) == free_before + 3
    assert b in fs.vol.inode_freelist


def test_rename_directory_across_parents(fs: Fs) -> None:
    fs.mkdir("/p")
    q = fs.mkdir("/q")
    d = fs.mkdir("/p/d")
    fs.rename("/p/d", "/q/d2")
    assert fs.lookup("/q/d2") == d
    assert fs.stat(fs.lookup("/p")).link_count == 2
    assert fs.stat(q).link_count == 3
    assert fs.readdir(d)[1] == (b"..", q)


@pytest.mark.parametrize(
    ("setup", "call", "code"),
    [
        ([], ("create", "/x/y"), errno.ENOENT),
        (["create /f"], ("create", "/f/y"), errno.ENOTDIR),
        (["create /f"], ("create", "/f"), errno.EEXIST),
        (["mkdir /d"], ("unlink", "/d"), errno.EISDIR),
        (["create /f"], ("rmdir", "/f"), errno.ENOTDIR),
        (["mkdir /d", "create /d/f"], ("rmdir", "/d"), errno.ENOTEMPTY),
        (["mkdir /d"], ("rename", "/d", "/d/e"), errno.EINVAL),
        (["mkdir /d", "create /f"], ("rename", "/d", "/f"), errno.ENOTDIR),
        (["mkdir /d", "create /f"], ("rename", "/f", "/d"), errno.EISDIR),
        (["mkdir /d", "mkdir /e", "create /e/x"], ("rename", "/d", "/e"), errno.ENOTEMPTY),
        ([], ("rename", "/nope", "/x"), errno.ENOENT),
        ([], ("create", "/" + "n" * 111), errno.ENAMETOOLONG),
        ([], ("unlink", "/"), errno.EINVAL),
    ],
)
def test_errors(fs: Fs, setup: list[str], call: tuple[str, ...], code: int) -> None:
    for line in setup:
        op, path = line.split()
        getattr(fs, op)(path)
    assert code_of(getattr(fs, call[0]), *call[1:]) == code


def test_rename_onto_itself_is_a_noop(fs: Fs) -> None:
    ino = fs.create("/a")
    fs.dev.stats["fences"] = 0
    fs.rename("/a", "/a")
    assert fs.lookup("/a") == ino and fs.dev.stats["fences"] == 0


def test_fsync_emits_nothing(traced_fs: Fs) -> None:
    fs = traced_fs
    ino = fs.create("/f")
    fs.write(ino, 0, b"data")
    assert fs.dev.trace is not None
    before = len(fs.dev.trace.events)
    fs.fsync(ino)
    assert len(fs.dev.trace.events) == before


def test_every_call_is_durable_on_return(traced_fs: Fs) -> None:
    fs = traced_fs
    fs.mkdir("/d")
    ino = fs.create("/d/f")
    fs.write(ino, 0, b"z" * 5000)
    fs.rename("/d/f", "/g")
    assert not fs.dev.has_pending()
    assert fs.dev.trace is not None
    assert count_events(fs.dev.trace.segment("rename"))["fences"] >= 1


def test_enospc(fs: Fs) -> None:
    ino = fs.create("/big")
    with pytest.raises(FsError) as e:
        fs.write(ino, 0, bytes(fs.geo.num_pages * L.PAGE_SIZE))
    assert e.value.code == errno.ENOSPC
    assert fs.stat(ino).size == 0
    for i in range(fs.geo.num_inodes - 2):
        fs.create(f"/f{i}")
    assert code_of(fs.create, "/last") == errno.ENOSPC


def test_mount_guards(fs: Fs) -> None:
    with pytest.raises(AlreadyMounted):
        Fs.mount(fs.dev)
    fs.unmount()
    assert code_of(fs.create, "/x") == errno.EBADF
    again = Fs.mount(fs.dev, expect_clean=True)
    again.create("/x")
    dev = PmDevice.from_image(bytes(again.dev.media))
    assert code_of(Fs.mount, dev, True) == errno.EUCLEAN


def test_remount_preserves_tree(fs: Fs) -> None:
    fs.mkdir("/d")
    ino = fs.create("/d/f")
    fs.write(ino, 0, b"abc" * 3000)
    tree = fs.tree()
    fs.unmount()
    back = Fs.mount(fs.dev, expect_clean=True)
    assert back.tree() == tree
    assert back.read(back.lookup("/d/f"), 0, 9000) == b"abc" * 3000


# a dictionary oracle for random call sequences

NAMES = ("a", "b", "c")
paths = st.lists(st.sampled_from(NAMES), min_size=1, max_size=3).map(lambda p: "/" + "/".join(p))


class Oracle:
    def __init__(self) -> None:
        self.nodes: dict[str, bytearray | None] = {"/": None}  # None marks a directory

    @staticmethod
    def parent(p: str) -> str:
        return p.rsplit("/", 1)[0] or "/"

    def resolve_parent(self, p: str) -> int:
        cur = ""
        for part in p.strip("/").split("/")[:-1]:
            cur += "/" + part
            if cur not in self.nodes:
                return errno.ENOENT
            if self.nodes[cur] is not None:
                return errno.ENOTDIR
        return 0

    def children(self, p: str) -> list[str]:
        pre = p.rstrip("/") + "/"
        return [k for k in self.nodes if k != p and k.startswith(pre) and "/" not in k[len(pre):]]

    def create(self, p: str, kind: bytearray | None) -> int:
        err = self.resolve_parent(p)
        if err:
            return err
        if p in self.nodes:
            return errno.EEXIST
        self.nodes[p] = kind
        return 0

    def unlink(self, p: str) -> int:
        err = self.resolve_parent(p)
        if err or p not in self.nodes:
            return err or errno.ENOENT
        if self.nodes[p] is None:
            return errno.EISDIR
        del self.nodes[p]
        return 0

    def rmdir(self, p: str) -> int:
        err = self.resolve_parent(p)
        if err or p not in self.nodes:
            return err or errno.ENOENT
        if self.nodes[p] is not None:
            return errno.ENOTDIR
        if self.children(p):
            return errno.ENOTEMPTY
        del self.nodes[p]
        return 0

    def rename(self, s: str, d: str) -> int:
        err = self.resolve_parent(s) or self.resolve_parent(d)
        if err:
            return err
        if s not in self.nodes:
            return errno.ENOENT
        if s == d:
            return 0
        is_dir = self.nodes[s] is None
        if is_dir and (d + "/").startswith(s + "/"):
            return errno.EINVAL
        if d in self.nodes:
            old_dir = self.nodes[d] is None
            if is_dir and not old_dir:
                return errno.ENOTDIR
            if old_dir and not is_dir:
                return errno.EISDIR
            if old_dir and self.children(d):
                return errno.ENOTEMPTY
        moved = {k: v for k, v in self.nodes.items() if k == s or k.startswith(s + "/")}
        for k in moved:
            del self.nodes[k]
        self.nodes.pop(d, None)
        for k, v in moved.items():
            self.nodes[d + k[len(s):]] = v
        return 0


class FsMachine(RuleBasedStateMachine):
    def __init__(self) -> None:
        super().__init__()
        self.fs = fresh_fs()
        self.model = Oracle()

    @rule(p=paths)
    def create(self, p: str) -> None:
        assert code_of(self.fs.create, p) == self.model.create(p, bytearray())

    @rule(p=paths)
    def mkdir(self, p: str) -> None:
        assert code_of(self.fs.mkdir, p) == self.model.create(p, None)

    @rule(p=paths)
    def unlink(self, p: str) -> None:
        assert code_of(self.fs.unlink, p) == self.model.unlink(p)

    @rule(p=paths)
    def rmdir(self, p: str) -> None:
        assert code_of(self.fs.rmdir, p) == self.model.rmdir(p)

    @rule(s=paths, d=paths)
    def rename(self, s: str, d: str) -> None:
        assert code_of(self.fs.rename, s, d) == self.model.rename(s, d)

    @rule(p=paths, off=st.integers(0, 9000), data=st.binary(min_size=1, max_size=5000))
    def write(self, p: str, off: int, data: bytes) -> None:
        buf = self.model.nodes.get(p)
        if buf is None:
            return
        self.fs.write(self.fs.lookup(p), off, data)
        if off > len(buf):
            buf.extend(bytes(off - len(buf)))
        buf[off : off + len(data)] = data

    @invariant()
    def matches_oracle(self) -> None:
        for p, buf in self.model.nodes.items():
            ino = self.fs.lookup(p)
            st_ = self.fs.stat(ino)
            assert st_.is_dir == (buf is None)
            if buf is not None:
                assert self.fs.read(ino, 0, st_.size + 1) == bytes(buf)
            else:
                names = {n.decode() for n, _ in self.fs.readdir(ino)[2:]}
                assert names == {c.rsplit("/", 1)[1] for c in self.model.children(p)}

    @invariant()
    def image_consistent(self) -> None:
        assert not self.fs.dev.has_pending()
        rep = fsck(self.fs.dev.media)
        assert rep.ok, rep.render()
        rebuilt = build_state(scan_media(self.fs.dev.view(), self.fs.geo))
        assert rebuilt.signature() == self.fs.vol.signature()

    def teardown(self) -> None:
        tree = self.fs.tree()
        self.fs.unmount()
        assert Fs.mount(self.fs.dev, expect_clean=True).tree() == tree


FsMachine.TestCase.settings = settings(
    max_examples=40, stateful_step_count=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
TestFsAgainstOracle = FsMachine.TestCase
