from __future__ import annotations

from ssufs import typestate as T


# inode zeroed before its pages let go of it
# expect: incompatible type "PageRange[Clean, Live]"; expected "PageRange[Clean, ClearedBackptrs]"
def bad(f: T.Inode[T.Clean, T.DecLink], pages: T.PageRange[T.Clean, T.Live]) -> None:
    f.unmap_pages(pages)
