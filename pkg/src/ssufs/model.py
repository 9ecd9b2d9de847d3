"""Explicit-state bounded model checker for the ordering protocol.

The model abstracts the file system to a small pool of inodes, directory
entries and page groups. Each object carries a durable value, a cached value
and a persistence state. Operations run as programs of store segments, flushes
and fences, may interleave (each locks what it touches when it starts), and a
crash may happen between any two steps: every object not yet clean
independently either reaches the media or not. Recovery then runs as its own
labeled transitions. Invariants I1 to I4 are checked on the durable values of
every reachable state, and strict link counts right after recovery.

States are immutable tuples, successor generation is sorted, and the search
is breadth-first, so results and counterexample traces are deterministic.
"""

from __future__ import annotations

import functools
import time
from collections import deque
from collections.abc import Iterator
from dataclasses import dataclass, field

# object values; references are stored as index + 1 so that 0 means null
# inode:  (kind, links, has_data)           kind 0 free, 1 file, 2 dir
# dentry: (parent, name, ino, rename_ptr)
# pages:  (owner, written)
FILE, DIR = 1, 2
CLEAN, DIRTY, INFLIGHT = 0, 1, 2
PNAMES = ("Clean", "Dirty", "InFlight")
NAMES = ("a", "b")

Value = tuple[int, ...]
Obj = tuple[Value, Value, int]  # durable, cached, persistence
Update = tuple[str, int, int, int]  # (kind, object, field, value)
Step = tuple[str, tuple[str, ...], tuple[Update, ...]]
OpState = tuple[str, tuple[int, ...], int]  # (kind, args, pc)

PHASE_RUN, PHASE_CRASHED, PHASE_SWEEP, PHASE_LINKS, PHASE_REBUILD = range(5)


@dataclass(frozen=True)
class Bounds:
    ops: int = 2
    objects: int = 8
    steps: int = 24

    def __post_init__(self) -> None:
        if self.ops < 0 or self.objects < 1 or self.steps < 0:
            raise ValueError("bounds must be positive")


@dataclass(frozen=True)
class Toggles:
    rename_recovery: bool = True
    recovery: bool = True
    crashes: int = 1


@dataclass(frozen=True)
class Pool:
    inodes: int
    dentries: int
    pages: int

    @classmethod
    def split(cls, n: int) -> Pool:
        pages = n // 8
        dentries = (n - pages) // 2
        return cls(max(1, n - pages - dentries), dentries, pages)

    @property
    def size(self) -> int:
        return self.inodes + self.dentries + self.pages

    def ino(self, i: int) -> int:
        return i

    def den(self, i: int) -> int:
        return self.inodes + i

    def pg(self, i: int) -> int:
        return self.inodes + self.dentries + i

    def kind(self, obj: int) -> str:
        if obj < self.inodes:
            return "inode"
        if obj < self.inodes + self.dentries:
            return "dentry"
        return "pages"

    def label(self, obj: int) -> str:
        k = self.kind(obj)
        if k == "inode":
            return f"I{obj}"
        if k == "dentry":
            return f"D{obj - self.inodes}"
        return f"G{obj - self.inodes - self.dentries}"


@dataclass(frozen=True)
class State:
    objs: tuple[Obj, ...]
    ops: tuple[OpState, ...]
    started: int
    crashes: int
    phase: int

    def key(self) -> tuple[object, ...]:
        return (self.objs, self.ops, self.started, self.crashes, self.phase)


@dataclass
class Result:
    ok: bool
    states: int
    transitions: int
    depth: int
    seconds: float
    violation: str = ""
    trace: list[str] = field(default_factory=list)
    final: State | None = None
    bound_exceeded: bool = False
    # first counterexample per violation class, e.g. "I1" or "REAPPEAR"
    found: dict[str, tuple[str, list[str]]] = field(default_factory=dict)

    def render(self) -> str:
        head = "PASS" if self.ok else ("BOUND" if self.bound_exceeded else "COUNTEREXAMPLE")
        lines = [f"{head} states={self.states} transitions={self.transitions} depth={self.depth}"]
        if not self.ok:
            lines.append(f"violation {self.violation}")
        for cls, (msg, trace) in sorted(self.found.items()):
            if msg != self.violation:
                lines.append(f"also {msg} (depth {len(trace)})")
        return "\n".join(lines) + "\n"


# the abstract file system view


class View:
    """Derived relations over one set of object values."""

    def __init__(self, pool: Pool, vals: tuple[Value, ...]) -> None:
        self.pool = pool
        self.vals = vals
        dens = range(pool.inodes, pool.inodes + pool.dentries)
        self.superseded = {
            vals[o][3] - 1 + pool.inodes for o in dens if vals[o][3] and vals[o][2]
        }
        self.valid = [o for o in dens if vals[o][2] and o not in self.superseded]
        self.reachable: set[int] = set()
        self.refs: dict[int, int] = {}
        self.subdirs: dict[int, int] = {}
        self.parent: dict[int, int] = {}
        if vals[0][0] == DIR:
            self.reachable.add(0)
            todo = [0]
            while todo:
                d = todo.pop()
                for o in self.valid:
                    if vals[o][0] - 1 != d:
                        continue
                    child = vals[o][2] - 1
                    self.refs[child] = self.refs.get(child, 0) + 1
                    if vals[child][0] == DIR:
                        self.subdirs[d] = self.subdirs.get(d, 0) + 1
                    if child not in self.reachable and vals[child][0]:
                        self.reachable.add(child)
                        self.parent[child] = d
                        if vals[child][0] == DIR:
                            todo.append(child)

    def true_links(self, ino: int) -> int:
        refs = 1 if ino == 0 else self.refs.get(ino, 0)
        if self.vals[ino][0] == DIR:
            return refs + 1 + self.subdirs.get(ino, 0)
        return refs

    def lookup(self, d: int, name: int) -> int | None:
        for o in self.valid:
            if self.vals[o][0] == d + 1 and self.vals[o][1] == name:
                return o
        return None

    def children(self, d: int) -> list[int]:
        return [o for o in self.valid if self.vals[o][0] == d + 1]

    def pages_of(self, ino: int) -> list[int]:
        p = self.pool
        return [o for o in range(p.pg(0), p.size) if self.vals[o][0] == ino + 1]


def check_invariants(pool: Pool, vals: tuple[Value, ...], strict: bool = False) -> str | None:
    v = View(pool, vals)
    if vals[0][0] != DIR:
        return "I2 root inode is not initialized"
    for ino in sorted(v.reachable):
        true = v.true_links(ino)
        have = vals[ino][1]
        if have < true:
            who = ",".join(
                pool.label(o) for o in v.valid if vals[o][2] - 1 == ino
            )
            return f"I1 {pool.label(ino)} has {have} links but is referenced by {who or 'nothing'} (true {true})"
        if strict and have != true:
            return f"I1 {pool.label(ino)} has {have} links after recovery, true {true}"
    for o in range(pool.inodes, pool.inodes + pool.dentries):
        par, _, ino, ptr = vals[o]
        if ino and not vals[ino - 1][0]:
            return f"I2 {pool.label(o)} points at uninitialized {pool.label(ino - 1)}"
        if ptr and not any(vals[ptr - 1 + pool.inodes]):
            return f"I2 {pool.label(o)} rename pointer targets free {pool.label(ptr - 1 + pool.inodes)}"
        if ino and par and vals[par - 1][0] != DIR:
            return f"I3 {pool.label(o)} is a live entry inside freed {pool.label(par - 1)}"
    for o in range(pool.pg(0), pool.size):
        owner = vals[o][0]
        if owner and not vals[owner - 1][0]:
            return f"I2 {pool.label(o)} backpointer to uninitialized {pool.label(owner - 1)}"
    for ino in sorted(v.reachable):
        if vals[ino][0] == FILE and vals[ino][2]:
            if not any(vals[o][1] for o in v.pages_of(ino)):
                return f"I2 {pool.label(ino)} size points past its pages"
    targets: set[int] = set()
    for o in range(pool.inodes, pool.inodes + pool.dentries):
        ptr = vals[o][3]
        if not ptr:
            continue
        if ptr in targets:
            return f"I4 two rename pointers target {pool.label(ptr - 1 + pool.inodes)}"
        targets.add(ptr)
        seen = {o}
        cur = ptr - 1 + pool.inodes
        while vals[cur][3]:
            if cur in seen:
                return f"I4 rename pointer cycle through {pool.label(o)}"
            seen.add(cur)
            cur = vals[cur][3] - 1 + pool.inodes
    if strict:
        for ino in range(pool.inodes):
            if vals[ino][0] and ino not in v.reachable:
                return f"I1 {pool.label(ino)} is an orphan after recovery"
    return None


# programs


def _set(obj: int, fld: int, val: int) -> Update:
    return ("set", obj, fld, val)


def _add(obj: int, fld: int, delta: int) -> Update:
    return ("add", obj, fld, delta)


def _zero(obj: int) -> Update:
    return ("zero", obj, 0, 0)


def _segment(labels: tuple[str, ...], updates: tuple[Update, ...]) -> list[Step]:
    objs = tuple(sorted({u[1] for u in updates}))
    return [
        ("seg", labels, updates),
        ("flush", ("flush",), tuple(("flush", o, 0, 0) for o in objs)),
        ("fence", ("fence",), ()),
    ]


def _lbl(pool: Pool, name: str, *objs: int) -> str:
    return f"{name}({','.join(pool.label(o) for o in objs)})"


@functools.lru_cache(maxsize=None)
def program(pool: Pool, kind: str, args: tuple[int, ...]) -> tuple[Step, ...]:
    """The step list of one operation; ``args`` carries every object it uses."""
    L = functools.partial(_lbl, pool)
    steps: list[Step] = []
    if kind in ("create", "mkdir"):
        parent, name, ino, den = args
        links = 2 if kind == "mkdir" else 1
        ups: list[Update] = [
            _set(ino, 0, DIR if kind == "mkdir" else FILE), _set(ino, 1, links),
            _set(den, 0, parent + 1), _set(den, 1, name),
        ]
        labels = [L("acquire_free_inode", ino), L("acquire_free_dentry", den),
                  L("init_inode", ino), L("set_name", den)]
        if kind == "mkdir":
            ups.append(_add(parent, 1, 1))
            labels.append(L("inc_link", parent))
        steps += _segment(tuple(labels), tuple(ups))
        steps += _segment((L("commit_dentry", den, ino),), (_set(den, 2, ino + 1),))
    elif kind == "append":
        ino, pg = args
        steps += _segment(
            (L("alloc_pages", pg, ino), L("write_pages", pg)),
            (_set(pg, 0, ino + 1), _set(pg, 1, 1)),
        )
        steps += _segment((L("set_size", ino, pg),), (_set(ino, 2, 1),))
    elif kind in ("unlink", "rmdir"):
        parent, den, ino, *pages = args
        steps += _segment((L("clear_ino", den),), (_set(den, 2, 0),))
        steps += _teardown(pool, ino, 2 if kind == "rmdir" else 1, (den,), tuple(pages),
                           extra=((parent,) if kind == "rmdir" else ()))
    return tuple(steps)


def _teardown(
    pool: Pool, ino: int, by: int, dentries: tuple[int, ...], pages: tuple[int, ...],
    extra: tuple[int, ...] = (),
) -> list[Step]:
    L = functools.partial(_lbl, pool)
    ups: list[Update] = [_add(ino, 1, -by)]
    labels = [L("dec_link", ino)]
    for p in extra:
        ups.append(_add(p, 1, -1))
        labels.append(L("dec_link", p))
    for d in dentries:
        ups.append(_zero(d))
        labels.append(L("dealloc_dentry", d))
    for g in pages:
        ups.append(_set(g, 0, 0))
        labels.append(L("clear_backpointers", g))
    steps = _segment(tuple(labels), tuple(ups))
    if pages:
        steps += _segment(
            (L("unmap_pages", ino, *pages),) + tuple(L("dealloc_pages", g) for g in pages),
            tuple(_zero(g) for g in pages),
        )
    else:
        steps[-3] = ("seg", steps[-3][1] + (L("unmap_pages", ino),), steps[-3][2])
    steps += _segment((L("dealloc_inode", ino),), (_zero(ino),))
    return steps


@functools.lru_cache(maxsize=None)
def rename_program(pool: Pool, args: tuple[int, ...]) -> tuple[Step, ...]:
    sp, dp, dname, src, dst, moved, is_dir, old, old_ino, *pages = args
    L = functools.partial(_lbl, pool)
    cross = bool(is_dir) and sp != dp
    old_dir = bool(old) and is_dir
    steps: list[Step] = []
    steps += _segment(
        (L("acquire_free_dentry", dst), L("set_name", dst)),
        (_set(dst, 0, dp + 1), _set(dst, 1, dname)),
    )
    ups: list[Update] = [_set(dst, 3, src - pool.inodes + 1)]
    labels = [L("set_rename_pointer", dst, src)]
    if cross:
        ups.append(_add(dp, 1, 1))
        labels.append(L("inc_link", dp))
    steps += _segment(tuple(labels), tuple(ups))
    steps += _segment((L("commit_rename", dst, moved),), (_set(dst, 2, moved + 1),))
    ups = [_set(src, 2, 0)]
    labels = [L("clear_ino", src)]
    if old:
        ups.append(_set(old, 2, 0))
        labels.append(L("clear_ino", old))
    steps += _segment(tuple(labels), tuple(ups))
    ups = [_set(dst, 3, 0)]
    labels = [L("clear_rename_pointer", dst)]
    if cross:
        ups.append(_add(sp, 1, -1))
        labels.append(L("dec_link", sp))
    if old_dir:
        ups.append(_add(dp, 1, -1))
        labels.append(L("dec_link", dp))
    steps += _segment(tuple(labels), tuple(ups))
    if old:
        steps += _teardown(pool, old_ino, 2 if old_dir else 1, (src, old), tuple(pages))
    else:
        steps += _segment((L("dealloc_dentry", src),), (_zero(src),))
    return tuple(steps)


def steps_of(pool: Pool, op: OpState) -> tuple[Step, ...]:
    kind, args, _ = op
    if kind == "rename":
        return rename_program(pool, args)
    return program(pool, kind, args)


def held_objects(op: OpState) -> set[int]:
    kind, args, _ = op
    if kind in ("create", "mkdir"):
        return {args[0], args[2], args[3]}
    if kind == "append":
        return set(args)
    if kind in ("unlink", "rmdir"):
        return set(args)
    sp, dp, _, src, dst, moved, _, old, old_ino, *pages = args
    out = {sp, dp, src, dst, moved, *pages}
    if old:
        out |= {old, old_ino}
    return out


# the transition system


class Model:
    def __init__(self, bounds: Bounds, toggles: Toggles | None = None) -> None:
        self.bounds = bounds
        self.toggles = toggles or Toggles()
        self.pool = Pool.split(bounds.objects)

    def initial(self) -> State:
        p = self.pool
        vals: list[Value] = [(0, 0, 0)] * p.inodes + [(0, 0, 0, 0)] * p.dentries + [(0, 0)] * p.pages
        vals[0] = (DIR, 2, 0)
        # seed a file "a" and a directory "b" under the root when they fit
        if p.inodes >= 2 and p.dentries >= 1:
            vals[1] = (FILE, 1, 0)
            vals[p.den(0)] = (1, 1, 2, 0)
        if p.inodes >= 3 and p.dentries >= 2:
            vals[2] = (DIR, 2, 0)
            vals[p.den(1)] = (1, 2, 3, 0)
            vals[0] = (DIR, 3, 0)
        objs = tuple((v, v, CLEAN) for v in vals)
        return State(objs, (), 0, 0, PHASE_RUN)

    # helpers

    def _cur(self, s: State) -> tuple[Value, ...]:
        return tuple(o[1] for o in s.objs)

    def _dur(self, s: State) -> tuple[Value, ...]:
        return tuple(o[0] for o in s.objs)

    def _held(self, s: State) -> set[int]:
        out: set[int] = set()
        for op in s.ops:
            out |= held_objects(op)
        return out

    def _free(self, vals: tuple[Value, ...], held: set[int], lo: int, hi: int) -> int | None:
        for o in range(lo, hi):
            if not any(vals[o]) and o not in held:
                return o
        return None

    # operation starts

    def starts(self, s: State) -> Iterator[OpState]:
        if s.phase != PHASE_RUN or s.started >= self.bounds.ops:
            return
        p = self.pool
        cur = self._cur(s)
        v = View(p, cur)
        held = self._held(s)
        dirs = sorted(i for i in v.reachable if cur[i][0] == DIR)
        free_ino = self._free(cur, held, 1, p.inodes)
        free_den = self._free(cur, held, p.den(0), p.den(p.dentries))
        free_pg = self._free(cur, held, p.pg(0), p.size)

        def ok(objs: set[int]) -> bool:
            return not objs & held

        for d in dirs:
            for n in (1, 2):
                hit = v.lookup(d, n)
                if hit is None and free_ino is not None and free_den is not None:
                    for kind in ("create", "mkdir"):
                        op: OpState = (kind, (d, n, free_ino, free_den), 0)
                        if ok(held_objects(op)):
                            yield op
                if hit is None:
                    continue
                ino = cur[hit][2] - 1
                if cur[ino][0] == FILE:
                    op = ("unlink", (d, hit, ino, *v.pages_of(ino)), 0)
                    if ok(held_objects(op)):
                        yield op
                elif not v.children(ino):
                    op = ("rmdir", (d, hit, ino, *v.pages_of(ino)), 0)
                    if ok(held_objects(op)):
                        yield op
                if free_den is not None:
                    yield from self._renames(s, v, d, hit, ino, dirs, free_den, held)
        if free_pg is not None:
            for ino in sorted(v.reachable):
                if cur[ino][0] == FILE and not cur[ino][2]:
                    op = ("append", (ino, free_pg), 0)
                    if ok(held_objects(op)):
                        yield op

    def _renames(
        self, s: State, v: View, sp: int, src: int, moved: int, dirs: list[int],
        free_den: int, held: set[int],
    ) -> Iterator[OpState]:
        cur = v.vals
        is_dir = cur[moved][0] == DIR
        for dp in dirs:
            if is_dir and (dp == moved or self._under(v, dp, moved)):
                continue
            for n in (1, 2):
                old = v.lookup(dp, n)
                if old == src:
                    continue
                old_ino = 0
                pages: list[int] = []
                if old is not None:
                    old_ino = cur[old][2] - 1
                    if (cur[old_ino][0] == DIR) != is_dir:
                        continue
                    if is_dir and v.children(old_ino):
                        continue
                    pages = v.pages_of(old_ino)
                args = (sp, dp, n, src, free_den, moved, int(is_dir), old or 0, old_ino, *pages)
                op: OpState = ("rename", args, 0)
                if not held_objects(op) & held:
                    yield op

    def _under(self, v: View, d: int, anc: int) -> bool:
        while d != 0:
            if d == anc:
                return True
            d = v.parent.get(d, 0)
        return False

    # successors

    def successors(self, s: State) -> list[tuple[str, State]]:
        out: list[tuple[str, State]] = []
        p = self.pool
        if s.phase != PHASE_RUN:
            return self._recovery(s)
        for op in self.starts(s):
            out.append((f"start {op[0]}{self._args(op)}", State(
                s.objs, tuple(sorted(s.ops + (op,))), s.started + 1, s.crashes, s.phase)))
        for i, op in enumerate(s.ops):
            steps = steps_of(p, op)
            kind, labels, ups = steps[op[2]]
            objs = list(s.objs)
            if kind == "seg":
                for u in ups:
                    objs[u[1]] = self._apply(objs[u[1]], u)
            elif kind == "flush":
                for u in ups:
                    dur, cur, ps = objs[u[1]]
                    if ps == DIRTY:
                        objs[u[1]] = (dur, cur, INFLIGHT)
            else:
                objs = [(c, c, CLEAN) if ps == INFLIGHT else (d, c, ps) for d, c, ps in objs]
            nxt = (op[0], op[1], op[2] + 1)
            ops = list(s.ops)
            if nxt[2] == len(steps):
                ops.pop(i)
            else:
                ops[i] = nxt
            label = " ".join(labels) if kind == "seg" else f"{labels[0]} [{op[0]}]"
            out.append((label, State(tuple(objs), tuple(sorted(ops)), s.started, s.crashes, s.phase)))
        if s.crashes < self.toggles.crashes:
            out += self._crashes(s)
        out.sort(key=lambda t: t[0])
        return out

    def _args(self, op: OpState) -> str:
        kind, args, _ = op
        p = self.pool
        if kind in ("create", "mkdir"):
            return f"({p.label(args[0])}/{NAMES[args[1] - 1]} -> {p.label(args[2])},{p.label(args[3])})"
        if kind == "rename":
            sp, dp, n, src, dst = args[:5]
            return f"({p.label(src)} -> {p.label(dp)}/{NAMES[n - 1]} via {p.label(dst)})"
        return "(" + ",".join(p.label(a) for a in args[1:] if kind != "append") + \
            ",".join(p.label(a) for a in args if kind == "append") + ")"

    def _apply(self, obj: Obj, u: Update) -> Obj:
        dur, cur, _ = obj
        kind, _, fld, val = u
        if kind == "zero":
            new = tuple(0 for _ in cur)
        else:
            lst = list(cur)
            lst[fld] = val if kind == "set" else lst[fld] + val
            if lst[fld] < 0:
                raise AssertionError("link count underflow in the model")
            new = tuple(lst)
        return (dur, new, DIRTY)

    def _crashes(self, s: State) -> list[tuple[str, State]]:
        pending = [i for i, o in enumerate(s.objs) if o[2] != CLEAN]
        out = []
        for mask in range(1 << len(pending)):
            objs = list(s.objs)
            kept = []
            for bit, i in enumerate(pending):
                dur, cur, _ = objs[i]
                if mask >> bit & 1:
                    objs[i] = (cur, cur, CLEAN)
                    kept.append(self.pool.label(i))
                else:
                    objs[i] = (dur, dur, CLEAN)
            label = f"crash persisted={{{','.join(kept)}}}"
            phase = PHASE_CRASHED if self.toggles.recovery else PHASE_REBUILD
            out.append((label, State(tuple(objs), (), s.started, s.crashes + 1, phase)))
        return out

    # recovery

    def _recovery(self, s: State) -> list[tuple[str, State]]:
        p = self.pool
        vals = list(self._dur(s))
        P = p.inodes

        def done(phase: int, label: str) -> list[tuple[str, State]]:
            objs = tuple((v, v, CLEAN) for v in vals)
            return [(label, State(objs, (), s.started, s.crashes, phase))]

        if s.phase == PHASE_CRASHED:
            if self.toggles.rename_recovery:
                for dst in range(P, P + p.dentries):
                    ptr = vals[dst][3]
                    if not ptr:
                        continue
                    src = ptr - 1 + P
                    if vals[dst][2]:
                        vals[src] = (vals[src][0], vals[src][1], 0, vals[src][3])
                        for o in range(P, P + p.dentries):
                            if o != dst and vals[o][:2] == vals[dst][:2] and vals[o][2] and not vals[o][3]:
                                vals[o] = (vals[o][0], vals[o][1], 0, 0)
                        vals[dst] = vals[dst][:3] + (0,)
                        vals[src] = (0, 0, 0, 0)
                        return done(PHASE_CRASHED, _lbl(p, "recover_complete_rename", dst, src))
                    vals[dst] = (0, 0, 0, 0)
                    return done(PHASE_CRASHED, _lbl(p, "recover_rollback_rename", dst))
            return done(PHASE_SWEEP, "recover_scan")
        if s.phase == PHASE_SWEEP:
            v = View(p, tuple(vals))
            freed = []
            targets = {vals[o][3] - 1 + P for o in range(P, P + p.dentries) if vals[o][3]}
            for o in range(P, P + p.dentries):
                par, _, ino, ptr = vals[o]
                if any(vals[o]) and not ino and not ptr and o not in targets:
                    vals[o] = (0, 0, 0, 0)
                    freed.append(o)
                elif ino and (par - 1) not in v.reachable:
                    vals[o] = (par, vals[o][1], 0, ptr)
            for g in range(p.pg(0), p.size):
                owner = vals[g][0]
                keep = owner and (owner - 1) in v.reachable and vals[owner - 1][0] == FILE and vals[owner - 1][2]
                if any(vals[g]) and not keep:
                    vals[g] = (0, 0)
                    freed.append(g)
            for i in range(1, P):
                if vals[i][0] and i not in v.reachable:
                    vals[i] = (0, 0, 0)
                    freed.append(i)
            return done(PHASE_LINKS, _lbl(p, "recover_sweep", *freed))
        if s.phase == PHASE_LINKS:
            v = View(p, tuple(vals))
            fixed = []
            for i in sorted(v.reachable):
                true = v.true_links(i)
                if vals[i][1] > true:
                    vals[i] = (vals[i][0], true, vals[i][2])
                    fixed.append(i)
            return done(PHASE_REBUILD, _lbl(p, "recover_links", *fixed))
        return done(PHASE_RUN, "rebuild")

    # invariant hooks

    def violation(self, prev: State, s: State, label: str) -> str | None:
        strict = label == "rebuild" and self.toggles.recovery
        dur = self._dur(s)
        bad = check_invariants(self.pool, dur, strict=strict)
        if bad:
            return bad
        # an entry that a committed rename superseded must never become valid again
        before = View(self.pool, self._dur(prev)).superseded
        if before:
            back = before & set(View(self.pool, dur).valid)
            if back:
                o = min(back)
                return f"REAPPEAR superseded entry {self.pool.label(o)} is valid again"
        return None


def check(
    bounds: Bounds | None = None,
    toggles: Toggles | None = None,
    max_states: int = 5_000_000,
) -> Result:
    """Breadth-first search of every state reachable within ``bounds``."""
    bounds = bounds or Bounds()
    model = Model(bounds, toggles)
    t0 = time.monotonic()
    init = model.initial()
    parent: dict[tuple[object, ...], tuple[tuple[object, ...] | None, str]] = {init.key(): (None, "")}
    frontier = deque([(init, 0)])
    transitions = 0
    depth = 0
    bad = check_invariants(model.pool, model._dur(init))
    if bad:
        return Result(False, 1, 0, 0, 0.0, bad, [], init, found={bad.split()[0]: (bad, [])})
    found: dict[str, tuple[str, list[str]]] = {}
    first: tuple[str, list[str], State] | None = None
    while frontier:
        s, d = frontier.popleft()
        depth = max(depth, d)
        if d >= bounds.steps:
            continue
        for label, nxt in model.successors(s):
            transitions += 1
            k = nxt.key()
            if k in parent:
                continue
            parent[k] = (s.key(), label)
            bad = model.violation(s, nxt, label)
            if bad:
                # record it and prune; other classes may still be reachable
                trace = _trace(parent, k)
                found.setdefault(bad.split()[0], (bad, trace))
                if first is None:
                    first = (bad, trace, nxt)
                continue
            if len(parent) > max_states:
                return Result(False, len(parent), transitions, d, time.monotonic() - t0,
                              f"state cap {max_states} exceeded", [], None, bound_exceeded=True)
            frontier.append((nxt, d + 1))
    secs = time.monotonic() - t0
    if first is not None:
        return Result(False, len(parent), transitions, depth, secs, first[0], first[1], first[2], found=found)
    return Result(True, len(parent), transitions, depth, secs)


def _trace(parent: dict[tuple[object, ...], tuple[tuple[object, ...] | None, str]], k: tuple[object, ...]) -> list[str]:
    out = []
    cur: tuple[object, ...] | None = k
    while cur is not None:
        prev, label = parent[cur]
        if prev is not None:
            out.append(label)
        cur = prev
    return out[::-1]


def replay(bounds: Bounds, toggles: Toggles | None, trace: list[str]) -> State:
    """Follow ``trace`` labels from the initial state."""
    model = Model(bounds, toggles)
    s = model.initial()
    for label in trace:
        for lab, nxt in model.successors(s):
            if lab == label:
                s = nxt
                break
        else:
            raise ValueError(f"no successor labeled {label!r}")
    return s


def print_trace(result: Result, cls: str | None = None) -> str:
    """Numbered step labels of the counterexample, or of class ``cls``."""
    if result.ok:
        return ""
    msg, trace = (result.violation, result.trace) if cls is None else result.found[cls]
    if not trace:
        return ""
    lines = [f"{i:3d}  {label}" for i, label in enumerate(trace, 1)]
    lines.append(f"     => {msg}")
    return "\n".join(lines) + "\n"


def transition_names() -> set[str]:
    """Typestate transition names used by the model's programs, over every branch."""
    pool = Pool.split(8)
    g = pool.pg(0)
    d0, d1, d2 = pool.den(0), pool.den(1), pool.den(2)
    ops: list[OpState] = [
        ("create", (0, 1, 3, d2), 0),
        ("mkdir", (0, 1, 3, d2), 0),
        ("append", (1, g), 0),
        ("unlink", (0, d0, 1, g), 0),
        ("rmdir", (0, d1, 2), 0),
        ("rename", (0, 2, 1, d1, d2, 2, 1, 0, 0), 0),
        ("rename", (0, 0, 2, d0, d2, 1, 0, d1, 3, g), 0),
    ]
    names: set[str] = set()
    for op in ops:
        for _, labels, _ in steps_of(pool, op):
            names |= {lab.split("(")[0] for lab in labels}
    return names


def describe_state(pool: Pool, s: State) -> str:
    lines = []
    for i, (dur, cur, ps) in enumerate(s.objs):
        lines.append(f"{pool.label(i)} {PNAMES[ps]} durable={dur} cached={cur}")
    return "\n".join(lines) + "\n"
