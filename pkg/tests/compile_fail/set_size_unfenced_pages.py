from __future__ import annotations

from ssufs import typestate as T


# file size updated while the written pages are not yet durable
# expect: incompatible type "PageRange[Dirty, Written]"; expected "PageRange[Clean, Written]"
def bad(tok: T.OpToken, f: T.Inode[T.Clean, T.Committed]) -> None:
    pages = T.alloc_pages(tok, f, 1, 0).write_pages(b"x" * 10, 0)
    f.set_size(10, pages)
