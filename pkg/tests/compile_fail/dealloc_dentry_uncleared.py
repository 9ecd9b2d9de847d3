from __future__ import annotations

from ssufs import typestate as T


# zeroing an entry that still references its inode
# expect: Invalid self argument "Dentry[Clean, Committed]" to attribute function "dealloc_dentry"
def bad(d: T.Dentry[T.Clean, T.Committed]) -> None:
    d.dealloc_dentry()
