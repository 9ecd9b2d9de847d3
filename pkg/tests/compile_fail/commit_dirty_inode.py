from __future__ import annotations

from ssufs import typestate as T


# the inode init is not flushed or fenced before the commit
# expect: incompatible type "Inode[Dirty, Init]"; expected "Inode[Clean, Init]"
def bad(tok: T.OpToken, parent: T.Inode[T.Clean, T.Committed]) -> None:
    ino = T.acquire_free_inode(tok).init_inode(0o100644)
    d = T.acquire_free_dentry(tok, parent).set_name(b"f").flush().fence()
    d.commit_dentry(ino)
