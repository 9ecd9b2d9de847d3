from __future__ import annotations

from ssufs import typestate as T


# flushed but never fenced: the init may still be in the cache
# expect: incompatible type "Inode[InFlight, Init]"; expected "Inode[Clean, Init]"
def bad(tok: T.OpToken, parent: T.Inode[T.Clean, T.Committed]) -> None:
    ino = T.acquire_free_inode(tok).init_inode(0o100644).flush()
    d = T.acquire_free_dentry(tok, parent).set_name(b"f").flush().fence()
    d.commit_dentry(ino)
