from __future__ import annotations

from ssufs import typestate as T


# size covers pages whose data was never written
# expect: incompatible type "PageRange[Clean, Alloc]"; expected "PageRange[Clean, Written]"
def bad(tok: T.OpToken, f: T.Inode[T.Clean, T.Committed]) -> None:
    pages = T.alloc_pages(tok, f, 1, 0).flush().fence()
    f.set_size(10, pages)
