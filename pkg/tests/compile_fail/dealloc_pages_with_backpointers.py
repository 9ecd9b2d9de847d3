from __future__ import annotations

from ssufs import typestate as T


# page descriptors freed while they still name their owner
# expect: Invalid self argument "PageRange[Clean, Live]" to attribute function "dealloc_pages"
def bad(pages: T.PageRange[T.Clean, T.Live]) -> None:
    pages.dealloc_pages()
