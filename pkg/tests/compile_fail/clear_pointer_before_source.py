from __future__ import annotations

from ssufs import typestate as T


# rename pointer dropped while the source entry is still live
# expect: incompatible type "Dentry[Clean, Superseded]"; expected "Dentry[Clean, ClearedIno]"
def bad(dst: T.Dentry[T.Clean, T.Renaming], src: T.Dentry[T.Clean, T.Superseded]) -> None:
    dst.clear_rename_pointer(src)
