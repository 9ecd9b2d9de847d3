from __future__ import annotations

from ssufs import typestate as T


# the ino-clear is stored but not fenced when the link count drops
# expect: incompatible type "Dentry[InFlight, ClearedIno]"; expected "Dentry[Clean, ClearedIno]"
def bad(tok: T.OpToken, f: T.Inode[T.Clean, T.Committed], d: T.Dentry[T.Clean, T.Committed]) -> None:
    f.dec_link(d.clear_ino().flush())
