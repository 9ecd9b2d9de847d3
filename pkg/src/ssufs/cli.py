"""Command-line entry points.

Exit codes: 0 ok, 1 usage or a failed call, 2 consistency failure, 3 internal.
Errors are printed as a single ``error: code=NAME msg=TEXT`` line on stderr.
"""

from __future__ import annotations

import argparse
import shlex
import statistics
import sys
import time
from collections.abc import Callable, Iterable, Sequence
from pathlib import Path
from typing import TextIO

from . import crashcheck as cc
from . import layout as L
from . import model
from .errors import FsError
from .faults import FAULTS, faulty_factory
from .fsops import Fs, RecoveryReport
from .pmem import PmDevice

EXIT_OK, EXIT_USAGE, EXIT_INCONSISTENT, EXIT_INTERNAL = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: str, msg: str, status: int = EXIT_USAGE) -> None:
        super().__init__(msg)
        self.code = code
        self.msg = msg
        self.status = status


def _error_line(code: str, msg: str) -> str:
    return f"error: code={code} msg={' '.join(msg.split())}"


def _load(path: str) -> PmDevice:
    p = Path(path)
    if not p.exists():
        raise CliError("ENOENT", f"no image at {path}")
    return PmDevice.load(p)


def _clock(wall: bool) -> Callable[[], int]:
    if wall:
        return lambda: int(time.time())
    return lambda: 0


# mkfs


def cmd_mkfs(args: argparse.Namespace) -> int:
    path = Path(args.image)
    if path.exists() and not args.force:
        raise CliError("EEXIST", f"{path} exists; pass --force to overwrite")
    try:
        dev = PmDevice(args.size)
        geo = L.mkfs(dev)
    except L.LayoutError as e:
        raise CliError("EINVAL", str(e)) from None
    dev.save(path)
    print(f"formatted {path}: {geo.num_inodes} inodes, {geo.num_pages} pages")
    return EXIT_OK


def cmd_geometry(args: argparse.Namespace) -> int:
    try:
        geo = L.compute_geometry(args.size)
    except L.LayoutError as e:
        raise CliError("EINVAL", str(e)) from None
    sys.stdout.write(geo.describe())
    return EXIT_OK


# shell


class Shell:
    """Interprets shell commands against one mounted file system."""

    def __init__(self, fs: Fs, out: TextIO) -> None:
        self.fs = fs
        self.out = out
        self.done = False

    def run_line(self, line: str) -> None:
        for part in line.split(";"):
            words = shlex.split(part, comments=True)
            if words:
                self.run(words)

    def run(self, words: list[str]) -> None:
        cmd, *rest = words
        handler = getattr(self, f"do_{cmd}", None)
        if handler is None:
            raise CliError("EINVAL", f"unknown command {cmd!r}")
        try:
            handler(*rest)
        except TypeError:
            raise CliError("EINVAL", f"bad arguments for {cmd}") from None

    def _p(self, text: str) -> None:
        self.out.write(text + "\n")

    def do_ls(self, path: str = "/") -> None:
        ino = self.fs.lookup(path)
        if not self.fs.stat(ino).is_dir:
            self._p(path.rstrip("/").rsplit("/", 1)[-1])
            return
        for name, _ in self.fs.readdir(ino)[2:]:
            self._p(name.decode("utf-8", "surrogateescape"))

    def do_mkdir(self, path: str) -> None:
        self.fs.mkdir(path)

    def do_touch(self, path: str) -> None:
        try:
            self.fs.lookup(path)
        except FsError:
            self.fs.create(path)

    def do_write(self, path: str, length: str, offset: str = "0", seed: str = "0") -> None:
        try:
            ino = self.fs.lookup(path)
        except FsError:
            ino = self.fs.create(path)
        self.fs.write(ino, int(offset), cc.write_payload(int(length), int(seed)))

    def do_cat(self, path: str) -> None:
        ino = self.fs.lookup(path)
        data = self.fs.read(ino, 0, self.fs.stat(ino).size)
        self._p(data.hex())

    def do_rm(self, path: str) -> None:
        self.fs.unlink(path)

    def do_rmdir(self, path: str) -> None:
        self.fs.rmdir(path)

    def do_mv(self, src: str, dst: str) -> None:
        self.fs.rename(src, dst)

    def do_stat(self, path: str) -> None:
        st = self.fs.stat(self.fs.lookup(path))
        kind = "dir" if st.is_dir else "file"
        self._p(f"ino={st.ino} kind={kind} size={st.size} links={st.link_count} mode={st.mode:o}")

    def do_sync(self, path: str = "/") -> None:
        self.fs.fsync(self.fs.lookup(path))

    def do_tree(self) -> None:
        self.out.write(self.fs.tree())

    def do_quit(self) -> None:
        self.done = True

    do_exit = do_quit


def _run_lines(sh: Shell, lines: Iterable[str]) -> int:
    status = EXIT_OK
    for line in lines:
        try:
            sh.run_line(line)
        except FsError as e:
            print(_error_line(e.name, e.strerror or ""), file=sys.stderr)
            status = EXIT_USAGE
        except CliError as e:
            print(_error_line(e.code, e.msg), file=sys.stderr)
            status = EXIT_USAGE
        if sh.done:
            break
    return status


def cmd_shell(args: argparse.Namespace) -> int:
    dev = _load(args.image)
    fs = Fs.mount(dev, clock=_clock(args.time))
    if fs.recovery is not None and fs.recovery.changed:
        print("recovered: " + " ".join(fs.recovery.render().split("\n")).strip(), file=sys.stderr)
    sh = Shell(fs, sys.stdout)
    if args.replay:
        wl = cc.Workload.load(args.replay)
        n = cc.run_workload(fs, wl)
        print(f"replayed {n}/{len(wl.ops)} ops")
        status = EXIT_OK
    elif args.script:
        status = _run_lines(sh, Path(args.script).read_text().splitlines())
    else:
        interactive = sys.stdin.isatty()

        def lines() -> Iterable[str]:
            while True:
                try:
                    yield input("ssufs> ") if interactive else input()
                except EOFError:
                    return

        status = _run_lines(sh, lines())
    fs.unmount()
    if args.persist:
        dev.save(args.image)
    return status


# fsck


def cmd_fsck(args: argparse.Namespace) -> int:
    dev = _load(args.image)
    sb = L.read_superblock(dev, durable=True)
    dirty = sb.clean_unmount != 1
    if dirty and not args.repair:
        rep = cc.fsck(dev.view(), strict=False)
        sys.stdout.write("state dirty\n" + rep.render())
        return EXIT_INCONSISTENT
    report: RecoveryReport | None = None
    if dirty:
        fs = Fs.mount(dev, clock=_clock(False))
        report = fs.recovery
        fs.unmount()
        dev.save(args.image)
    rep = cc.fsck(dev.view(), strict=True)
    sys.stdout.write(f"state {'repaired' if dirty else 'clean'}\n")
    if report is not None:
        sys.stdout.write(report.render())
    sys.stdout.write(rep.render())
    return EXIT_OK if rep.ok else EXIT_INCONSISTENT


# bench

BENCH_OPS = ("create", "mkdir", "rename", "append1k", "append16k", "read1k", "read16k", "unlink")


def _bench_setup(fs: Fs, op: str, n: int) -> None:
    fs.mkdir("/bench")
    if op in ("rename", "unlink"):
        for i in range(n):
            fs.create(f"/bench/f{i}")
    elif op.startswith("read"):
        size = 1024 if op == "read1k" else 16384
        ino = fs.create("/bench/data")
        fs.write(ino, 0, cc.write_payload(size, 0))
    elif op.startswith("append"):
        fs.create("/bench/data")


def _bench_step(fs: Fs, op: str, i: int) -> None:
    if op == "create":
        fs.create(f"/bench/f{i}")
    elif op == "mkdir":
        fs.mkdir(f"/bench/d{i}")
    elif op == "rename":
        fs.rename(f"/bench/f{i}", f"/bench/g{i}")
    elif op == "unlink":
        fs.unlink(f"/bench/f{i}")
    elif op.startswith("append"):
        size = 1024 if op == "append1k" else 16384
        ino = fs.lookup("/bench/data")
        fs.write(ino, fs.stat(ino).size, cc.write_payload(size, i))
    else:
        size = 1024 if op == "read1k" else 16384
        fs.read(fs.lookup("/bench/data"), 0, size)


def cmd_bench(args: argparse.Namespace) -> int:
    dev = _load(args.image)
    fs = Fs.mount(dev, clock=_clock(False))
    try:
        _bench_setup(fs, args.op, args.iters)
    except FsError as e:
        raise CliError(e.name, f"bench setup: {e}") from None
    times: list[float] = []
    fences: list[int] = []
    flushes: list[int] = []
    for i in range(args.iters):
        before = dict(dev.stats)
        t0 = time.perf_counter()
        try:
            _bench_step(fs, args.op, i)
        except FsError as e:
            raise CliError(e.name, f"bench iteration {i}: {e}") from None
        times.append(time.perf_counter() - t0)
        fences.append(dev.stats["fences"] - before["fences"])
        flushes.append(dev.stats["flushes"] - before["flushes"])
    us = [t * 1e6 for t in times]
    print(f"op {args.op} iters {args.iters}")
    print(f"latency_us mean {statistics.fmean(us):.1f} min {min(us):.1f} max {max(us):.1f}")
    print(f"fences mean {statistics.fmean(fences):.2f} min {min(fences)} max {max(fences)}")
    print(f"flushes mean {statistics.fmean(flushes):.2f} min {min(flushes)} max {max(flushes)}")
    return EXIT_OK


# crashtest


def cmd_crashtest(args: argparse.Namespace) -> int:
    if args.workload:
        workloads = [cc.Workload.load(args.workload)]
    else:
        workloads = cc.generate_workloads(args.gen, args.count, args.seed, args.length)
    factory = None
    if args.inject:
        factory = faulty_factory(args.inject)
    failed = 0
    for wl in workloads:
        v = cc.run_crash_test(wl, args.cap, args.seed, factory=factory, max_failures=args.max_failures)
        sys.stdout.write(v.render())
        if not v.ok:
            failed += 1
            if args.repro_dir:
                _write_repro(Path(args.repro_dir), wl, v)
    print(f"{'PASS' if not failed else 'FAIL'} workloads={len(workloads)} failed={failed}")
    return EXIT_OK if not failed else EXIT_INCONSISTENT


def _write_repro(root: Path, wl: cc.Workload, v: cc.Verdict) -> None:
    root.mkdir(parents=True, exist_ok=True)
    stem = wl.name.replace("/", "_")
    (root / f"{stem}.workload").write_text(wl.dump())
    first = v.failures[0]
    (root / f"{stem}.failure").write_text(first.render() + "\n")
    (root / f"{stem}.img").write_bytes(first.image)
    print(f"reproducer written to {root / stem}.*")


# modelcheck


def cmd_modelcheck(args: argparse.Namespace) -> int:
    bounds = model.Bounds(args.ops, args.objects, args.steps)
    toggles = model.Toggles(rename_recovery=not args.disable_rename_recovery)
    res = model.check(bounds, toggles)
    sys.stdout.write(res.render())
    print(f"seconds {res.seconds:.2f}")
    if res.ok:
        return EXIT_OK
    if res.bound_exceeded:
        raise CliError("E2BIG", res.violation, EXIT_INTERNAL)
    text = "".join(
        f"# {cls}\n{model.print_trace(res, cls)}\n" for cls in sorted(res.found)
    )
    out = Path(args.trace_out)
    out.write_text(text)
    sys.stdout.write(model.print_trace(res))
    print(f"trace written to {out}")
    return EXIT_INCONSISTENT


# argument parsing


def _size(text: str) -> int:
    units = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30}
    t = text.strip().lower().rstrip("ib")
    mult = units.get(t[-1:], 1)
    if mult != 1:
        t = t[:-1]
    try:
        return int(t) * mult
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(_error_line("EUSAGE", message), file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ssufs", description="Crash-consistent persistent-memory file system tools.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mkfs", help="format a new image file")
    p.add_argument("--image", required=True)
    p.add_argument("--size", required=True, type=_size)
    p.add_argument("--force", action="store_true", help="overwrite an existing image")
    p.set_defaults(func=cmd_mkfs)

    p = sub.add_parser("geometry", help="print the layout for a device size")
    p.add_argument("--size", type=_size, default=L.MIN_CAPACITY)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("shell", help="run commands against a mounted image")
    p.add_argument("--image", required=True)
    p.add_argument("--persist", action="store_true", help="write the image back on exit")
    p.add_argument("--script", help="file of shell commands")
    p.add_argument("--replay", help="operation-log file in workload format")
    p.add_argument("--time", action="store_true", help="stamp inodes with wall-clock time")
    p.set_defaults(func=cmd_shell)

    p = sub.add_parser("fsck", help="check an image, optionally running recovery")
    p.add_argument("--image", required=True)
    p.add_argument("--repair", action="store_true")
    p.set_defaults(func=cmd_fsck)

    p = sub.add_parser("bench", help="time one operation")
    p.add_argument("--image", required=True)
    p.add_argument("--op", required=True, choices=BENCH_OPS)
    p.add_argument("--iters", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("crashtest", help="enumerate crash states of workloads")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--workload", help="workload file")
    src.add_argument("--gen", choices=("mixed", "rename-heavy"), help="generate workloads")
    p.add_argument("--count", type=int, default=4, help="generated workloads")
    p.add_argument("--length", type=int, default=16, help="ops per generated workload")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=4096, help="crash states per fence")
    p.add_argument("--inject", choices=sorted(FAULTS), help="run a deliberately broken build")
    p.add_argument("--repro-dir", help="where to write reproducers for failures")
    p.add_argument("--max-failures", type=int, default=20)
    p.set_defaults(func=cmd_crashtest)

    p = sub.add_parser("modelcheck", help="bounded model check of the ordering protocol")
    p.add_argument("--ops", type=int, default=2)
    p.add_argument("--objects", type=int, default=8)
    p.add_argument("--steps", type=int, default=24)
    p.add_argument("--disable-rename-recovery", action="store_true")
    p.add_argument("--trace-out", default="modelcheck-trace.txt")
    p.set_defaults(func=cmd_modelcheck)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        status: int = args.func(args)
        return status
    except CliError as e:
        print(_error_line(e.code, e.msg), file=sys.stderr)
        return e.status
    except FsError as e:
        print(_error_line(e.name, e.strerror or ""), file=sys.stderr)
        return EXIT_USAGE
    except (L.CorruptImage, L.LayoutError) as e:
        print(_error_line("ECORRUPT", str(e)), file=sys.stderr)
        return EXIT_INCONSISTENT
    except Exception as e:  # noqa: BLE001 - last-resort reporting
        print(_error_line("EINTERNAL", f"{type(e).__name__}: {e}"), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
