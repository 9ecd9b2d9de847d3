"""Simulated byte-addressable persistent memory.

Stores land in a volatile cache first. A store becomes durable only after the
cache line holding it is flushed *and* a subsequent fence retires. Until then
any subset of outstanding 8-byte chunks may or may not reach the media on a
crash, which is what :func:`enumerate_crash_states` explores.
"""

from __future__ import annotations

import random
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

LINE_SIZE = 64
WORD_SIZE = 8


class AddressError(IndexError):
    """Access outside the device or violating store alignment rules."""


@dataclass(frozen=True)
class Store:
    offset: int
    data: bytes


@dataclass(frozen=True)
class Flush:
    line: int


@dataclass(frozen=True)
class Fence:
    pass


@dataclass(frozen=True)
class Mark:
    label: str


Event = Union[Store, Flush, Fence, Mark]


@dataclass
class PersistTrace:
    events: list[Event] = field(default_factory=list)

    def dump(self) -> str:
        lines = []
        for ev in self.events:
            if isinstance(ev, Store):
                lines.append(f"STORE {ev.offset} {len(ev.data)} {ev.data.hex()}")
            elif isinstance(ev, Flush):
                lines.append(f"FLUSH {ev.line}")
            elif isinstance(ev, Fence):
                lines.append("FENCE")
            else:
                lines.append(f"MARK {ev.label}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def parse(cls, text: str) -> PersistTrace:
        events: list[Event] = []
        for raw in text.splitlines():
            parts = raw.split()
            if not parts:
                continue
            kind = parts[0]
            if kind == "STORE":
                data = bytes.fromhex(parts[3]) if len(parts) > 3 else b""
                if len(data) != int(parts[2]):
                    raise ValueError(f"length mismatch in trace line: {raw!r}")
                events.append(Store(int(parts[1]), data))
            elif kind == "FLUSH":
                events.append(Flush(int(parts[1])))
            elif kind == "FENCE":
                events.append(Fence())
            elif kind == "MARK":
                events.append(Mark(raw.split(None, 1)[1]))
            else:
                raise ValueError(f"unknown trace line: {raw!r}")
        return cls(events)

    def segment(self, label: str) -> list[Event]:
        """Events between ``MARK begin:<label>`` and the matching end marker."""
        begin, end = f"begin:{label}", f"end:{label}"
        out: list[Event] = []
        depth = 0
        for ev in self.events:
            if isinstance(ev, Mark) and ev.label == begin:
                depth += 1
                if depth == 1:
                    continue
            if isinstance(ev, Mark) and ev.label == end:
                depth -= 1
                if depth == 0:
                    break
            if depth:
                out.append(ev)
        return out

    def clear(self) -> None:
        self.events.clear()


def count_events(events: list[Event]) -> dict[str, int]:
    counts = {"stores": 0, "flushes": 0, "fences": 0}
    for ev in events:
        if isinstance(ev, Store):
            counts["stores"] += 1
        elif isinstance(ev, Flush):
            counts["flushes"] += 1
        elif isinstance(ev, Fence):
            counts["fences"] += 1
    return counts


@dataclass(frozen=True)
class Chunk:
    """An outstanding (not yet durable) store of at most one aligned word."""

    seq: int
    offset: int
    data: bytes
    flushed: bool = False


class _Pending:
    __slots__ = ("seq", "offset", "data", "flushed")

    def __init__(self, seq: int, offset: int, data: bytes) -> None:
        self.seq = seq
        self.offset = offset
        self.data = data
        self.flushed = False


@dataclass(frozen=True)
class Snapshot:
    """Immutable copy of durable media plus the outstanding chunks."""

    media: bytes
    chunks: tuple[Chunk, ...]
    epoch: int


@dataclass(frozen=True)
class CrashState:
    image: bytes
    applied: tuple[int, ...]  # seq numbers of the chunks that reached media
    bitmap: int  # bit i set when the i-th enumerated chunk was applied
    nchunks: int

    def describe(self) -> str:
        width = max(1, (self.nchunks + 3) // 4)
        return f"{self.nchunks}:0x{self.bitmap:0{width}x}"


FenceHook = Callable[["PmDevice"], None]


class PmDevice:
    def __init__(self, capacity: int, *, trace: bool = False, image: bytes | bytearray | None = None) -> None:
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if image is not None and len(image) != capacity:
            raise ValueError("image length does not match capacity")
        self.capacity = capacity
        self.media = bytearray(capacity) if image is None else bytearray(image)
        self._view = bytearray(self.media)
        self._pending: dict[int, list[_Pending]] = {}
        self._seq = 0
        self.epoch = 0
        self.trace: PersistTrace | None = PersistTrace() if trace else None
        self.fence_hooks: list[FenceHook] = []
        self.mounted = False
        self.stats = {"stores": 0, "flushes": 0, "fences": 0}

    # construction / persistence of the image itself

    @classmethod
    def from_image(cls, image: bytes | bytearray, *, trace: bool = False) -> PmDevice:
        return cls(len(image), trace=trace, image=image)

    @classmethod
    def load(cls, path: str | Path, *, trace: bool = False) -> PmDevice:
        return cls.from_image(Path(path).read_bytes(), trace=trace)

    def save(self, path: str | Path) -> None:
        """Write the durable media (not the cache) to ``path``."""
        Path(path).write_bytes(bytes(self.media))

    # bounds

    def _check(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.capacity:
            raise AddressError(
                f"range [{offset}, {offset + length}) outside device of {self.capacity} bytes"
            )

    # the x86-style persistence primitives

    def store(self, offset: int, data: bytes) -> None:
        """Store ``data`` into the cache.

        Writes of up to 8 bytes must sit inside one aligned word; longer
        writes are split at word boundaries.
        """
        n = len(data)
        self._check(offset, n)
        if n == 0:
            return
        if n <= WORD_SIZE and (offset % WORD_SIZE) + n > WORD_SIZE:
            raise AddressError(f"{n}-byte store at {offset} straddles an 8-byte boundary")
        self._store_split(offset, bytes(data))

    def memcpy(self, offset: int, data: bytes) -> None:
        """Like :meth:`store` but any length/alignment is split into word pieces."""
        self._check(offset, len(data))
        if data:
            self._store_split(offset, bytes(data))

    def _store_split(self, offset: int, data: bytes) -> None:
        end = offset + len(data)
        self._view[offset:end] = data
        pos = offset
        trace = self.trace
        while pos < end:
            nxt = min(end, (pos // WORD_SIZE + 1) * WORD_SIZE)
            piece = data[pos - offset : nxt - offset]
            self._seq += 1
            self._pending.setdefault(pos // LINE_SIZE, []).append(_Pending(self._seq, pos, piece))
            self.stats["stores"] += 1
            if trace is not None:
                trace.events.append(Store(pos, piece))
            pos = nxt

    def flush(self, offset: int, length: int) -> None:
        """Write back every line overlapping the range. Clean lines are skipped."""
        self._check(offset, length)
        if length == 0:
            return
        first, last = offset // LINE_SIZE, (offset + length - 1) // LINE_SIZE
        if last - first + 1 > len(self._pending):
            lines = sorted(ln for ln in self._pending if first <= ln <= last)
        else:
            lines = [ln for ln in range(first, last + 1) if ln in self._pending]
        for line in lines:
            entries = self._pending[line]
            dirty = False
            for p in entries:
                if not p.flushed:
                    p.flushed = True
                    dirty = True
            if dirty:
                self.stats["flushes"] += 1
                if self.trace is not None:
                    self.trace.events.append(Flush(line))

    def fence(self) -> None:
        """Retire every flushed chunk to the media."""
        for hook in list(self.fence_hooks):
            hook(self)
        retired: list[_Pending] = []
        for line in list(self._pending):
            entries = self._pending[line]
            keep = [p for p in entries if not p.flushed]
            if len(keep) != len(entries):
                retired.extend(p for p in entries if p.flushed)
                if keep:
                    self._pending[line] = keep
                else:
                    del self._pending[line]
        retired.sort(key=lambda p: p.seq)
        media = self.media
        for p in retired:
            media[p.offset : p.offset + len(p.data)] = p.data
        self.epoch += 1
        self.stats["fences"] += 1
        if self.trace is not None:
            self.trace.events.append(Fence())

    def mark(self, label: str) -> None:
        if self.trace is not None:
            self.trace.events.append(Mark(label))

    def persist_all(self) -> None:
        for line in sorted(self._pending):
            self.flush(line * LINE_SIZE, LINE_SIZE)
        self.fence()

    # reads

    def read(self, offset: int, length: int) -> bytes:
        """Program-visible contents: media overlaid with cached stores."""
        self._check(offset, length)
        return bytes(self._view[offset : offset + length])

    def read_durable(self, offset: int, length: int) -> bytes:
        self._check(offset, length)
        return bytes(self.media[offset : offset + length])

    def view(self) -> memoryview:
        return memoryview(self._view)

    # crash states

    def pending_chunks(self) -> tuple[Chunk, ...]:
        out = [
            Chunk(p.seq, p.offset, p.data, p.flushed)
            for entries in self._pending.values()
            for p in entries
        ]
        out.sort(key=lambda c: c.seq)
        return tuple(out)

    def has_pending(self) -> bool:
        return bool(self._pending)

    def snapshot(self) -> Snapshot:
        return Snapshot(bytes(self.media), self.pending_chunks(), self.epoch)

    def enumerate_crash_states(
        self, cap: int = 4096, seed: int = 0, *, skip_noop: bool = False
    ) -> Iterator[CrashState]:
        return enumerate_crash_states(self.snapshot(), cap, seed, skip_noop=skip_noop)


def _effective(snap: Snapshot) -> list[Chunk]:
    """Drop chunks whose application can never change the image."""
    words: dict[int, int] = {}
    for c in snap.chunks:
        w = c.offset // WORD_SIZE
        words[w] = words.get(w, 0) + 1
    out = []
    for c in snap.chunks:
        if words[c.offset // WORD_SIZE] == 1:
            if snap.media[c.offset : c.offset + len(c.data)] == c.data:
                continue
        out.append(c)
    return out


def enumerate_crash_states(
    snap: Snapshot, cap: int = 4096, seed: int = 0, *, skip_noop: bool = False
) -> Iterator[CrashState]:
    """Yield durable images reachable by a crash at the snapshot point.

    Every subset of outstanding chunks is a candidate; chunks are applied in
    issue order so later stores to the same word win. When there are more
    than ``cap`` subsets, a seeded sample of ``cap`` masks is drawn which
    always contains the empty and the full subset.
    """
    if cap < 2:
        raise ValueError("cap must be at least 2")
    chunks = _effective(snap) if skip_noop else list(snap.chunks)
    n = len(chunks)
    full = (1 << n) - 1
    if n == 0:
        yield CrashState(snap.media, (), 0, 0)
        return
    if n < 63 and (1 << n) <= cap:
        masks = list(range(1 << n))
    else:
        rng = random.Random(seed)
        chosen = [0, full]
        seen = {0, full}
        while len(chosen) < cap:
            m = rng.getrandbits(n)
            if m not in seen:
                seen.add(m)
                chosen.append(m)
        masks = chosen
    for mask in masks:
        img = bytearray(snap.media)
        applied = []
        m = mask
        i = 0
        while m:
            if m & 1:
                c = chunks[i]
                img[c.offset : c.offset + len(c.data)] = c.data
                applied.append(c.seq)
            m >>= 1
            i += 1
        yield CrashState(bytes(img), tuple(applied), mask, n)
