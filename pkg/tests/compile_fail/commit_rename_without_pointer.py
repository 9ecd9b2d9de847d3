from __future__ import annotations

from ssufs import typestate as T


# destination takes the inode before the rename pointer is durable
# expect: Invalid self argument "Dentry[Clean, Alloc]" to attribute function "commit_rename"
def bad(dst: T.Dentry[T.Clean, T.Alloc], src: T.Dentry[T.Clean, T.Committed], f: T.Inode[T.Clean, T.Committed]) -> None:
    dst.commit_rename(src, f)
