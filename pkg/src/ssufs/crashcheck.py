"""Crash-consistency harness and offline checker.

``fsck`` checks the four consistency invariants on a raw image:

* I1: every live inode has a legal link count (never below the number of
  references to it; equal after recovery);
* I2: nothing points at an uninitialized object;
* I3: freed objects point at nothing;
* I4: rename pointers form no cycles and no entry is targeted twice.

``run_crash_test`` replays a workload on a recording device, takes a crash
snapshot before every fence and at the end of every operation, and for each
reachable durable image checks it before recovery, recovers it, checks it
again strictly, and compares the visible tree with the states just before
and just after the interrupted operation.
"""

from __future__ import annotations

import hashlib
import random
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from pathlib import Path

from . import layout as L
from .errors import FsError
from .fsops import Fs, split_path
from .pmem import PmDevice, Snapshot, enumerate_crash_states
from .volatile import MediaScan, scan_media

INVARIANTS = ("I1", "I2", "I3", "I4")


@dataclass(frozen=True)
class Violation:
    invariant: str
    where: str
    detail: str

    def __str__(self) -> str:
        return f"{self.invariant} {self.where}: {self.detail}"


@dataclass
class FsckReport:
    violations: list[Violation] = field(default_factory=list)
    orphans: int = 0
    overcounted: int = 0
    rename_pointers: int = 0
    strict: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations

    def passed(self, invariant: str) -> bool:
        return not any(v.invariant == invariant for v in self.violations)

    def add(self, invariant: str, where: str, detail: str) -> None:
        self.violations.append(Violation(invariant, where, detail))

    def render(self) -> str:
        lines = [f"{inv} {'pass' if self.passed(inv) else 'FAIL'}" for inv in (*INVARIANTS, "S")]
        lines.append(f"orphans {self.orphans}")
        lines.append(f"overcounted {self.overcounted}")
        lines.append(f"rename_pointers {self.rename_pointers}")
        lines += [f"violation {v}" for v in self.violations]
        return "\n".join(lines) + "\n"


def _initialized(rec: L.InodeRecord | None, ino: int) -> bool:
    return rec is not None and rec.ino == ino and (rec.is_dir or rec.is_file)


def fsck(image: bytes | bytearray | memoryview, strict: bool = True) -> FsckReport:
    """Check ``image`` read-only.

    With ``strict`` the image must look freshly recovered: exact link counts,
    no orphans, no half-built entries, no rename pointers left behind.
    Structural problems are reported under the pseudo-invariant ``S``.
    """
    buf = bytes(image)
    sb = L.Superblock.decode(buf[: L.SUPERBLOCK_SIZE])
    if sb.magic != L.MAGIC:
        raise L.CorruptImage(f"bad magic {sb.magic:#x}")
    geo = L.geometry_from_superblock(sb, len(buf))
    sc = scan_media(buf, geo)
    rep = FsckReport(strict=strict)

    root = sc.inodes.get(L.ROOT_INO)
    if not _initialized(root, L.ROOT_INO) or root is None or not root.is_dir:
        rep.add("I2", "inode 1", "root directory is not initialized")
        return rep

    _check_links(sc, rep, strict)
    _check_pointers(sc, rep)
    _check_freed(sc, buf, rep)
    _check_renames(sc, rep, strict)
    _check_structure(sc, rep, strict)
    return rep


def _check_links(sc: MediaScan, rep: FsckReport, strict: bool) -> None:
    for ino in sorted(sc.reachable):
        rec = sc.inodes[ino]
        true = sc.true_links(ino)
        if rec.link_count < true:
            rep.add("I1", f"inode {ino}", f"link count {rec.link_count} below {true} references")
        elif rec.link_count > true:
            rep.overcounted += 1
            if strict:
                rep.add("I1", f"inode {ino}", f"link count {rec.link_count} above {true} after recovery")
        minimum = 2 if rec.is_dir else 1
        if rec.link_count < minimum:
            rep.add("I1", f"inode {ino}", f"link count {rec.link_count} illegal for its kind")


def _check_pointers(sc: MediaScan, rep: FsckReport) -> None:
    for off, d in sorted(sc.dentries.items()):
        if d.ino and not _initialized(sc.inodes.get(d.ino), d.ino):
            rep.add("I2", f"dentry {off}", f"references uninitialized inode {d.ino}")
        if d.rename_ptr and d.rename_ptr not in sc.dentries:
            rep.add("I2", f"dentry {off}", f"rename pointer to free slot {d.rename_ptr}")
    for page, desc in sorted(sc.descs.items()):
        if desc.owner_ino and not _initialized(sc.inodes.get(desc.owner_ino), desc.owner_ino):
            rep.add("I2", f"page {page}", f"backpointer to uninitialized inode {desc.owner_ino}")
    # a size is a pointer to data: every page below it must exist
    for ino in sorted(sc.reachable):
        rec = sc.inodes[ino]
        if not rec.is_file or rec.size == 0:
            continue
        have = sc.file_pages.get(ino, {})
        for off in range(0, rec.size, L.PAGE_SIZE):
            if off not in have:
                rep.add("I2", f"inode {ino}", f"size {rec.size} not backed by a page at {off}")
                break


def _check_freed(sc: MediaScan, buf: bytes, rep: FsckReport) -> None:
    geo = sc.geo
    for page, desc in sorted(sc.descs.items()):
        if desc.owner_ino == 0 and desc.kind == L.KIND_DIR:
            base = geo.page_offset(page)
            for s in range(L.DENTRIES_PER_PAGE):
                raw = buf[base + s * L.DENTRY_SIZE : base + (s + 1) * L.DENTRY_SIZE]
                if L.DentryRecord.decode(raw).ino:
                    rep.add("I3", f"page {page}", f"freed directory page still holds entry {s}")
                    break
    for ino, rec in sorted(sc.inodes.items()):
        if rec.ino == 0 and any(
            d.ino == ino for d in sc.dentries.values()
        ):
            rep.add("I3", f"inode {ino}", "partially freed inode is still referenced")


def _check_renames(sc: MediaScan, rep: FsckReport, strict: bool) -> None:
    targets: dict[int, int] = {}
    for off in sc.renames:
        rep.rename_pointers += 1
        tgt = sc.dentries[off].rename_ptr
        if tgt in targets:
            rep.add("I4", f"dentry {tgt}", f"targeted by rename pointers at {targets[tgt]} and {off}")
        targets[tgt] = off
    for start in sc.renames:
        seen = {start}
        cur = sc.dentries[start].rename_ptr
        while cur in sc.dentries and sc.dentries[cur].rename_ptr:
            if cur in seen:
                rep.add("I4", f"dentry {start}", "rename pointers form a cycle")
                break
            seen.add(cur)
            cur = sc.dentries[cur].rename_ptr
    if strict and sc.renames:
        rep.add("I4", f"dentry {sc.renames[0]}", "rename pointer left after recovery")


def _check_structure(sc: MediaScan, rep: FsckReport, strict: bool) -> None:
    for ino in sorted(sc.reachable):
        rec = sc.inodes[ino]
        if not rec.is_dir:
            continue
        names: set[bytes] = set()
        for off, d in sc.dir_entries(ino):
            if (strict or d.ino) and (not d.name or b"/" in d.name or b"\0" in d.name):
                rep.add("S", f"dentry {off}", "invalid name")
            if sc.valid_dentry(off):
                if d.name in names:
                    rep.add("S", f"dentry {off}", f"duplicate name {d.name!r}")
                names.add(d.name)
        if ino in sc.file_pages:
            rep.add("S", f"inode {ino}", "directory owns data pages")
    for ino in sorted(sc.reachable):
        if sc.inodes[ino].is_file and ino in sc.dir_pages:
            rep.add("S", f"inode {ino}", "file owns directory pages")
    orphans = [i for i in sc.inodes if i not in sc.reachable]
    rep.orphans = len(orphans)
    if not strict:
        return
    for ino in sorted(orphans):
        rep.add("S", f"inode {ino}", "allocated but unreachable")
    for off, d in sorted(sc.dentries.items()):
        if d.ino == 0:
            rep.add("S", f"dentry {off}", "allocated entry that never committed")
    for page, desc in sorted(sc.descs.items()):
        owner = sc.inodes.get(desc.owner_ino)
        if desc.owner_ino not in sc.reachable or owner is None:
            rep.add("S", f"page {page}", "allocated page without a live owner")
        elif owner.is_file and desc.offset >= owner.size:
            rep.add("S", f"page {page}", f"page at {desc.offset} beyond size {owner.size}")


# workloads


@dataclass(frozen=True)
class Op:
    name: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return " ".join((self.name, *self.args))


OP_ARITY = {"create": 1, "mkdir": 1, "write": 4, "unlink": 1, "rmdir": 1, "rename": 2}


@dataclass
class Workload:
    ops: list[Op]
    name: str = "workload"
    seed: int = 0

    def dump(self) -> str:
        return "".join(f"{op}\n" for op in self.ops)

    @classmethod
    def parse(cls, text: str, name: str = "workload") -> Workload:
        ops = []
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            arity = OP_ARITY.get(parts[0])
            if arity is None or len(parts) - 1 not in (arity, arity - 1 if parts[0] == "write" else arity):
                raise ValueError(f"line {n}: cannot parse {raw!r}")
            ops.append(Op(parts[0], tuple(parts[1:])))
        return cls(ops, name)

    @classmethod
    def load(cls, path: str | Path) -> Workload:
        p = Path(path)
        return cls.parse(p.read_text(), p.name)


def write_payload(length: int, seed: int) -> bytes:
    return random.Random(seed).randbytes(length)


def apply_op(fs: Fs, op: Op) -> None:
    a = op.args
    if op.name == "create":
        fs.create(a[0])
    elif op.name == "mkdir":
        fs.mkdir(a[0])
    elif op.name == "write":
        seed = int(a[3]) if len(a) > 3 else 0
        fs.write(fs.lookup(a[0]), int(a[1]), write_payload(int(a[2]), seed))
    elif op.name == "unlink":
        fs.unlink(a[0])
    elif op.name == "rmdir":
        fs.rmdir(a[0])
    elif op.name == "rename":
        fs.rename(a[0], a[1])
    else:
        raise ValueError(f"unknown operation {op.name!r}")


def run_workload(fs: Fs, wl: Workload, stop_on_error: bool = False) -> int:
    """Apply every op; failing calls are skipped. Returns the number that succeeded."""
    done = 0
    for op in wl.ops:
        try:
            apply_op(fs, op)
            done += 1
        except FsError:
            if stop_on_error:
                raise
    return done


# generation


NAMES = ("a", "b", "c", "d", "e", "f", "g", "h")
MAX_DEPTH = 4


class _Shadow:
    """Namespace model used only to pick valid operations."""

    def __init__(self) -> None:
        self.kind: dict[str, str] = {"": "dir"}
        self.size: dict[str, int] = {}

    def dirs(self) -> list[str]:
        return sorted(p for p, k in self.kind.items() if k == "dir")

    def files(self) -> list[str]:
        return sorted(p for p, k in self.kind.items() if k == "file")

    def children(self, d: str) -> list[str]:
        pre = d + "/"
        return [p for p in self.kind if p.startswith(pre) and "/" not in p[len(pre):]]

    def under(self, p: str, anc: str) -> bool:
        return p == anc or p.startswith(anc + "/")


def generate_workloads(profile: str, n: int, seed: int, length: int = 16) -> list[Workload]:
    """``n`` random valid workloads of ``length`` ops each.

    ``mixed`` draws uniformly among applicable operations; ``rename-heavy``
    makes at least half of them renames.
    """
    if profile not in ("mixed", "rename-heavy"):
        raise ValueError(f"unknown profile {profile!r}")
    rng = random.Random(seed)
    return [
        Workload(_one(rng, profile, length), f"{profile}-{seed}-{i}", seed) for i in range(n)
    ]


def _one(rng: random.Random, profile: str, length: int) -> list[Op]:
    sh = _Shadow()
    ops: list[Op] = []
    renames = 0
    while len(ops) < length:
        want_rename = profile == "rename-heavy" and renames * 2 < len(ops) + 1
        op = _rename(rng, sh) if want_rename else None
        if op is None:
            choice = rng.choice(["create", "mkdir", "write", "write", "unlink", "rmdir", "rename"])
            op = _pick(rng, sh, choice)
        if op is None:
            continue
        if op.name == "rename":
            renames += 1
        ops.append(op)
    return ops


def _free_name(rng: random.Random, sh: _Shadow, d: str) -> str | None:
    free = [n for n in NAMES if f"{d}/{n}" not in sh.kind]
    return f"{d}/{rng.choice(free)}" if free else None


def _pick(rng: random.Random, sh: _Shadow, choice: str) -> Op | None:
    if choice in ("create", "mkdir"):
        dirs = [d for d in sh.dirs() if d.count("/") < MAX_DEPTH]
        p = _free_name(rng, sh, rng.choice(dirs))
        if p is None:
            return None
        sh.kind[p] = "file" if choice == "create" else "dir"
        if choice == "create":
            sh.size[p] = 0
        return Op(choice, (p,))
    if choice == "write":
        files = sh.files()
        if not files:
            return None
        p = rng.choice(files)
        off = rng.choice([0, sh.size[p], rng.randint(0, sh.size[p])])
        ln = rng.choice([1, 100, 1024, 4096, 5000])
        sh.size[p] = max(sh.size[p], off + ln)
        return Op("write", (p, str(off), str(ln), str(rng.randrange(1 << 16))))
    if choice == "unlink":
        files = sh.files()
        if not files:
            return None
        p = rng.choice(files)
        del sh.kind[p], sh.size[p]
        return Op("unlink", (p,))
    if choice == "rmdir":
        empty = [d for d in sh.dirs() if d and not sh.children(d)]
        if not empty:
            return None
        p = rng.choice(empty)
        del sh.kind[p]
        return Op("rmdir", (p,))
    return _rename(rng, sh)


def _rename(rng: random.Random, sh: _Shadow) -> Op | None:
    srcs = [p for p in sh.kind if p]
    if not srcs:
        return None
    src = rng.choice(sorted(srcs))
    kind = sh.kind[src]
    dirs = [
        d for d in sh.dirs()
        if not (kind == "dir" and sh.under(d, src)) and d.count("/") < MAX_DEPTH
    ]
    d = rng.choice(dirs)
    dst = f"{d}/{rng.choice(NAMES)}"
    if dst == src:
        return None
    if dst in sh.kind:
        if sh.kind[dst] != kind or (kind == "dir" and sh.children(dst)):
            return None
    moved = {p: k for p, k in sh.kind.items() if sh.under(p, src)}
    sizes = {p: s for p, s in sh.size.items() if sh.under(p, src)}
    if dst in sh.kind:
        del sh.kind[dst]
        sh.size.pop(dst, None)
    for p in moved:
        del sh.kind[p]
        sh.size.pop(p, None)
    for p, k in moved.items():
        q = dst + p[len(src):]
        sh.kind[q] = k
        if p in sizes:
            sh.size[q] = sizes[p]
    return Op("rename", (src, dst))


# the harness


@dataclass(frozen=True)
class Failure:
    workload: str
    prefix: int
    epoch: int
    subset: str
    invariant: str
    detail: str
    image: bytes = field(repr=False, default=b"")

    def render(self) -> str:
        return (
            f"FAIL workload={self.workload} prefix={self.prefix} epoch={self.epoch} "
            f"subset={self.subset} invariant={self.invariant} detail={self.detail}"
        )


@dataclass
class Verdict:
    workload: str
    states: int = 0
    unique_images: int = 0
    snapshots: int = 0
    failures: list[Failure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def render(self) -> str:
        head = (
            f"{'PASS' if self.ok else 'FAIL'} workload={self.workload} snapshots={self.snapshots} "
            f"states={self.states} unique={self.unique_images} failures={len(self.failures)}"
        )
        return "\n".join([head] + [f.render() for f in self.failures]) + "\n"


Signature = dict[str, tuple[int, str, int, str]]


def tree_signature(fs: Fs, skip_content: int = 0) -> Signature:
    """``path -> (ino, kind, size, content digest)`` for the visible tree."""
    out: Signature = {}

    def visit(ino: int, path: str) -> None:
        st = fs.stat(ino)
        if st.is_dir:
            out[path] = (ino, "dir", 0, "")
            for name, ent in sorted(fs.vol.entries(ino).items()):
                visit(ent.ino, f"{path.rstrip('/')}/{name.decode('utf-8', 'surrogateescape')}")
        else:
            digest = "" if ino == skip_content else hashlib.sha1(fs.read(ino, 0, st.size)).hexdigest()
            out[path] = (ino, "file", st.size, digest)

    visit(L.ROOT_INO, "/")
    return out


FsFactory = Callable[[PmDevice], Fs]


def _default_factory(dev: PmDevice) -> Fs:
    return Fs.mount(dev, clock=lambda: 0)


@dataclass
class _Expect:
    pre: Signature
    post: Signature
    write_target: int = 0
    write_offset: int = 0
    pre_prefix: bytes = b""


def run_crash_test(
    workload: Workload,
    cap: int = 4096,
    seed: int = 0,
    *,
    capacity: int = L.MIN_CAPACITY,
    factory: FsFactory | None = None,
    only: Iterable[int] | None = None,
    max_failures: int = 20,
) -> Verdict:
    """Crash every op of ``workload`` at every fence and at its end.

    ``only`` restricts checking to the given op indices (the others still run).
    """
    factory = factory or _default_factory
    dev = PmDevice(capacity)
    L.mkfs(dev)
    fs = factory(dev)
    verdict = Verdict(workload.name)
    seen: set[tuple[int, int, bytes]] = set()
    targets = None if only is None else set(only)
    for idx, op in enumerate(workload.ops):
        if targets is not None and idx not in targets:
            try:
                apply_op(fs, op)
            except FsError:
                pass
            continue
        exp = _expectation(fs, op)
        snaps: list[Snapshot] = []

        def hook(d: PmDevice) -> None:
            snaps.append(d.snapshot())

        dev.fence_hooks.append(hook)
        try:
            apply_op(fs, op)
            exp.post = tree_signature(fs, exp.write_target)
        except FsError:
            pass
        finally:
            dev.fence_hooks.remove(hook)
        snaps.append(dev.snapshot())
        verdict.snapshots += len(snaps)
        for epoch, snap in enumerate(snaps):
            final = epoch == len(snaps) - 1
            spots = sorted({(c.offset // 8) * 8 for c in snap.chunks})
            for cs in enumerate_crash_states(snap, cap, seed * 7919 + idx * 131 + epoch, skip_noop=True):
                verdict.states += 1
                # images of one snapshot can only differ where chunks land
                img = cs.image
                key = (idx, epoch, b"".join(img[o : o + 8] for o in spots))
                if key in seen:
                    continue
                seen.add(key)
                verdict.unique_images += 1
                problem = check_crash_image(cs.image, exp, final)
                if problem is not None:
                    inv, detail = problem
                    verdict.failures.append(
                        Failure(workload.name, idx, epoch, cs.describe(), inv, detail, cs.image)
                    )
                    if len(verdict.failures) >= max_failures:
                        return verdict
    return verdict


def _expectation(fs: Fs, op: Op) -> _Expect:
    target = 0
    offset = 0
    prefix = b""
    if op.name == "write":
        try:
            target = fs.lookup(op.args[0])
            offset = int(op.args[1])
            prefix = fs.read(target, 0, offset)
        except FsError:
            target = 0
    pre = tree_signature(fs, target)
    return _Expect(pre, pre, target, offset, prefix)


def check_crash_image(image: bytes, exp: _Expect, final: bool) -> tuple[str, str] | None:
    # before recovery only the four invariants must hold; a same-name pair in
    # a directory is legal while a rename pointer disambiguates it
    before = [v for v in fsck(image, strict=False).violations if v.invariant in INVARIANTS]
    if before:
        v = before[0]
        return f"pre-{v.invariant}", f"{v.where}: {v.detail}".replace(" ", "_")
    dev = PmDevice.from_image(image)
    try:
        fs = Fs.mount(dev, clock=lambda: 0)
    except Exception as e:  # recovery must never fail on a reachable image
        return "recover", f"{type(e).__name__}:{e}".replace(" ", "_")
    after = fsck(dev.read_durable(0, dev.capacity), strict=True)
    if not after.ok:
        v = after.violations[0]
        return v.invariant, f"{v.where}: {v.detail}".replace(" ", "_")
    got = tree_signature(fs, exp.write_target)
    if exp.write_target:
        path = next((p for p, v in exp.post.items() if v[0] == exp.write_target), None)
        if path is not None and path in got:
            size = got[path][2]
            if size not in (exp.pre[path][2], exp.post[path][2]):
                return "oracle", f"size_{size}_of_{path}_neither_old_nor_new"
            if fs.read(exp.write_target, 0, exp.write_offset) != exp.pre_prefix:
                return "oracle", f"bytes_before_write_offset_changed_in_{path}"
            got[path] = exp.post[path]
    if final and got != exp.post:
        return "durability", "completed_operation_not_visible_after_crash"
    if got != exp.pre and got != exp.post:
        return "oracle", "recovered_tree_is_neither_before_nor_after_state"
    return None
