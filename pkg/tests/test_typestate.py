from __future__ import annotations

import errno
import inspect
from typing import Any, cast

import pytest

from ssufs import layout as L
from ssufs import typestate as T
from ssufs.errors import FsError, HandleConflict, HandleConsumed, TypestateError
from ssufs.fsops import Fs


def test_transition_table_names_real_calls() -> None:
    members = dict(inspect.getmembers(T.Inode)) | dict(inspect.getmembers(T.Dentry))
    members |= dict(inspect.getmembers(T.PageRange)) | vars(T)
    for name, (kind, sources, _, effect) in T.TRANSITIONS.items():
        assert name in members, name
        assert effect in ("Clean", "Dirty", "InFlight")
        assert kind in ("inode", "dentry", "pages", "any")
        states = {"inode": T.INODE_STATES, "dentry": T.DENTRY_STATES, "pages": T.RANGE_STATES}.get(kind, ())
        for s in sources:
            assert s in {c.__name__ for c in states}


def test_create_sequence_at_runtime(fs: Fs) -> None:
    fs.create("/seed")  # gives the root a directory page, so no growth fence below
    with fs._op("manual") as tok:
        parent = tok.inode(L.ROOT_INO)
        ino = T.acquire_free_inode(tok).init_inode(L.S_IFREG | 0o644).flush()
        d = T.acquire_free_dentry(tok, parent).set_name(b"x").flush()
        ino_c, d_c = T.fence_all(tok, ino, d)
        d2, linked = d_c.commit_dentry(ino_c)
        d2.flush().fence()
        assert linked.state == ("Clean", "Committed")
        assert tok.fences == 2


def test_consumed_handle_cannot_be_reused(fs: Fs) -> None:
    with fs._op("reuse") as tok:
        ino = T.acquire_free_inode(tok)
        ino.init_inode(L.S_IFREG).flush().fence()
        with pytest.raises(HandleConsumed):
            ino.init_inode(L.S_IFREG)


def test_second_handle_on_same_object_conflicts(fs: Fs) -> None:
    with fs._op("twice") as tok:
        tok.inode(L.ROOT_INO)
        with pytest.raises(HandleConflict):
            tok.inode(L.ROOT_INO)


def test_stale_fence_witness_rejected(fs: Fs) -> None:
    with pytest.raises(TypestateError):
        with fs._op("stale") as tok:
            old = tok.current()
            h = T.acquire_free_inode(tok).init_inode(L.S_IFREG).flush()
            h.fenced(old)


def test_leaving_a_dirty_handle_fails_the_op(fs: Fs) -> None:
    with pytest.raises(TypestateError, match="left Dirty"):
        with fs._op("leak") as tok:
            T.acquire_free_inode(tok).init_inode(L.S_IFREG)


def test_runtime_guard_backs_up_the_types(fs: Fs) -> None:
    # a cast defeats the checker; the runtime tag still refuses
    with fs._op("cast") as tok:
        parent = tok.inode(L.ROOT_INO)
        d = T.acquire_free_dentry(tok, parent).set_name(b"y").flush().fence()
        free = cast(Any, T.acquire_free_inode(tok))
        with pytest.raises(TypestateError, match="Free"):
            d.commit_dentry(free)


def test_directory_commit_needs_parent(fs: Fs) -> None:
    with fs._op("dir") as tok:
        parent = tok.inode(L.ROOT_INO)
        ino = T.acquire_free_inode(tok).init_inode(L.S_IFDIR | 0o755).flush().fence()
        d = T.acquire_free_dentry(tok, parent).set_name(b"d").flush().fence()
        with pytest.raises(TypestateError, match="parent"):
            d.commit_dentry(ino)


def test_dec_link_underflow_is_corruption(fs: Fs) -> None:
    fs.create("/f")
    ent = fs.vol.lookup_name(L.ROOT_INO, b"f")
    assert ent is not None
    with pytest.raises(L.CorruptImage):
        with fs._op("under") as tok:
            f = tok.inode(ent.ino)
            cleared = tok.dentry(ent.offset, L.ROOT_INO).clear_ino().flush().fence()
            f.dec_link(cleared, by=2)


def test_unsupported_mode(fs: Fs) -> None:
    with pytest.raises(ValueError):
        with fs._op("fifo") as tok:
            T.acquire_free_inode(tok).init_inode(0o010644)


@pytest.mark.parametrize(
    ("name", "code"),
    [(b"", errno.EINVAL), (b".", errno.EINVAL), (b"..", errno.EINVAL), (b"a/b", errno.EINVAL),
     (b"a\0", errno.EINVAL), (b"x" * 111, errno.ENAMETOOLONG)],
)
def test_bad_names(name: bytes, code: int) -> None:
    with pytest.raises(FsError) as e:
        T.check_name(name)
    assert e.value.code == code


def test_longest_name_accepted() -> None:
    T.check_name(b"x" * L.NAME_MAX)


def test_write_pages_bounds(fs: Fs) -> None:
    ino = fs.create("/f")
    with pytest.raises(ValueError, match="beyond"):
        with fs._op("big") as tok:
            f = tok.inode(ino)
            T.alloc_pages(tok, f, 1, 0).write_pages(b"z" * (L.PAGE_SIZE + 1), 0)


def test_set_size_cannot_shrink(fs: Fs) -> None:
    ino = fs.create("/f")
    fs.write(ino, 0, b"abc")
    pages = sorted(fs.vol.pages_of(ino).items())
    with pytest.raises(ValueError):
        with fs._op("shrink") as tok:
            f = tok.inode(ino)
            rng = tok.pages(ino, [(p, o) for o, p in pages]).write_pages(b"a", 0).flush().fence()
            f.set_size(1, rng)


def test_lock_table() -> None:
    locks = T.LockTable()
    a, b = object(), object()
    locks.claim((("inode", 1),), a)
    assert locks.holder(("inode", 1)) is a
    with pytest.raises(HandleConflict):
        locks.claim((("inode", 1),), b)
    locks.swap((("inode", 1),), a, b)
    assert locks.holder(("inode", 1)) is b
    locks.release((("inode", 1),), b)
    assert len(locks) == 0
