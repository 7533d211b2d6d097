"""Command-line entry point.

Exit codes: 0 success (or property proved), 1 violation or bug found,
2 usage error, 3 infrastructure failure (missing files, solver trouble,
inconclusive results).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

from . import __version__
from .isa import (AsmError, Image, ImageError, assemble, decode, disassemble,
                  pack_image, unpack_image)
from .policy import (FAMILIES, PROFILES, Profile, ProfileError, REF_OFFSET,
                     census_closed_form, parse_profile_text)

EXIT_OK = 0
EXIT_FOUND = 1
EXIT_USAGE = 2
EXIT_INFRA = 3


@dataclass(frozen=True)
class Config:
    """Resolved common options shared by the subcommands."""
    profile: Profile
    solver_cmd: str | None
    workers: int
    seed: int
    verbose: bool


class _UsageError(Exception):
    pass


class _InfraError(Exception):
    pass


def _load_profile(spec: str) -> Profile:
    if spec in PROFILES:
        return PROFILES[spec]
    if spec.startswith("file:"):
        path = spec[5:]
        try:
            with open(path, encoding="utf-8") as fh:
                return parse_profile_text(fh.read())
        except OSError as e:
            raise _InfraError(f"cannot read profile {path}: {e}") from None
        except ProfileError as e:
            raise _UsageError(f"bad profile file {path}: {e}") from None
    raise _UsageError(
        f"unknown profile {spec!r} (use sparse, dense, or file:PATH)")


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise _InfraError(str(e)) from None


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise _InfraError(str(e)) from None


def _write_out(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as e:
        raise _InfraError(str(e)) from None


def _parse_word(text: str) -> int:
    try:
        word = int(text, 16)
    except ValueError:
        raise _UsageError(f"not a hex word: {text!r}") from None
    if not 0 <= word < (1 << 32):
        raise _UsageError(f"word out of range: {text!r}")
    return word


def _solver_cmd(args) -> str:
    cmd = args.solver_cmd or os.environ.get("SFI_SOLVER_CMD", "")
    if not cmd:
        raise _UsageError(
            "a solver command is required: pass --solver-cmd or set "
            "SFI_SOLVER_CMD to an SMT-LIB2 solver invocation")
    return cmd


def _cmd_decode(args) -> int:
    for text in args.word:
        instr = decode(_parse_word(text))
        print(disassemble(instr) if instr else "undecodable")
    return EXIT_OK


def _cmd_asm(args) -> int:
    profile = _load_profile(args.profile)
    try:
        code, labels = assemble(_read_text(args.input))
    except AsmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FOUND
    if args.entry is None:
        entry = 0
    elif args.entry in labels:
        entry = labels[args.entry]
    else:
        try:
            entry = int(args.entry, 0)
        except ValueError:
            raise _UsageError(f"entry {args.entry!r} is neither a label "
                              "nor a number") from None
    try:
        blob = pack_image(Image(profile.name, entry, code))
    except ImageError as e:
        raise _UsageError(str(e)) from None
    try:
        with open(args.output, "wb") as fh:
            fh.write(blob)
    except OSError as e:
        raise _InfraError(str(e)) from None
    if args.verbose:
        print(f"{len(code)} code bytes, entry {entry:#x}", file=sys.stderr)
    return EXIT_OK


def _cmd_disasm(args) -> int:
    try:
        image = unpack_image(_read_bytes(args.input))
    except ImageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FOUND
    print(f"; profile {image.profile}, entry {image.entry:#x}")
    for i in range(0, len(image.code), 4):
        word = int.from_bytes(image.code[i:i + 4], "little")
        instr = decode(word)
        text = disassemble(instr) if instr else ".word 0x%08x" % word
        print(f"+{i:#06x}  {word:08x}  {text}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verifier import format_report, verify_image
    try:
        image = unpack_image(_read_bytes(args.input))
    except ImageError as e:
        if args.json:
            print(json.dumps({"ok": False, "error": str(e)}))
        else:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_FOUND
    report = verify_image(image, _load_profile(args.profile))
    if args.json:
        print(json.dumps(report.to_json()))
    else:
        print(format_report(report))
    return EXIT_OK if report.ok else EXIT_FOUND


def _cmd_rewrite(args) -> int:
    from .rewriter import RewriteError, render, rewrite
    _load_profile(args.profile)   # validated for interface symmetry
    try:
        lines = rewrite(_read_text(args.input))
    except (AsmError, RewriteError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FOUND
    _write_out(args.output, render(lines))
    return EXIT_OK


def _cmd_run(args) -> int:
    from .sandboxsim import BootError, Exit, boot, run, status_text
    image = _read_bytes(args.input)
    profile = _load_profile(args.profile) if args.profile else None
    try:
        box = boot(image, profile=profile, base=args.base,
                   host_in=sys.stdin.buffer.read() if args.stdin else b"")
    except (ImageError, BootError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FOUND
    status = run(box, max_steps=args.max_steps)
    if args.trace:
        for record in box.trace:
            print(json.dumps(record))
    else:
        sys.stdout.buffer.write(bytes(box.host_out))
        sys.stdout.buffer.flush()
    print(status_text(status), file=sys.stderr)
    return EXIT_OK if isinstance(status, Exit) else EXIT_FOUND


def _cmd_fuzz(args) -> int:
    from .fuzz import FuzzFailure, fuzz
    profile = _load_profile(args.profile)
    if args.mutation is not None and args.mutation not in _mutation_names():
        raise _UsageError(f"unknown mutation {args.mutation!r}")
    try:
        report = fuzz(args.seed, args.iters, profile, args.mutation)
    except FuzzFailure as e:
        print(f"FAILURE: {e}", file=sys.stderr)
        return EXIT_FOUND
    print(report.summary())
    return EXIT_FOUND if report.violation_count else EXIT_OK


def _mutation_names() -> tuple[str, ...]:
    from .mutations import MUTATIONS
    return tuple(MUTATIONS)


def _prove_subjects(args) -> list:
    if args.cls:
        if args.word:
            raise _UsageError("give --class or words, not both")
        if args.cls == "all":
            return list(FAMILIES)
        if args.cls in FAMILIES:
            return [args.cls]
        if args.cls in _mutation_names():
            from .mutations import MUTATIONS
            return [MUTATIONS[args.cls]]
        raise _UsageError(f"unknown class {args.cls!r}")
    if not args.word:
        raise _UsageError("nothing to prove: give --class or hex words")
    subjects = []
    for text in args.word:
        instr = decode(_parse_word(text))
        if instr is None:
            raise _UsageError(f"word {text} is undecodable")
        subjects.append(instr)
    return subjects


def _cmd_prove(args) -> int:
    from .mutations import Mutation, run_mutation
    from .prover import ProverError, prove, prove_range
    solver_cmd = _solver_cmd(args)
    profile = _load_profile(args.profile)
    subjects = _prove_subjects(args)
    try:
        reports = []
        for subject in subjects:
            if isinstance(subject, Mutation):
                reports.append(run_mutation(subject, solver_cmd,
                                            timeout=args.timeout))
        plain = [s for s in subjects if not isinstance(s, Mutation)]
        if len(plain) == 1:
            reports.append(prove(plain[0], profile, solver_cmd,
                                 timeout=args.timeout))
        elif plain:
            reports.extend(prove_range(plain, profile, solver_cmd,
                                       workers=args.workers))
    except ProverError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_INFRA
    worst = EXIT_OK
    for rep in reports:
        line = (f"{rep.subject_id:<16} {rep.profile:<8} {rep.verdict:<8} "
                f"{rep.solver_ms:6.0f} ms")
        if rep.verdict == "Refuted" and rep.counterexample:
            ce = rep.counterexample
            line += (f"  {ce.violated} on `{disassemble(ce.instr)}`"
                     f" (replay {ce.replay})")
            worst = max(worst, EXIT_FOUND)
        elif rep.verdict == "Unknown":
            worst = EXIT_INFRA
        print(line)
    return worst


def _cmd_emit_smt(args) -> int:
    from .prover import build_obligation, emit_smt
    profile = _load_profile(args.profile)
    if args.cls:
        if args.cls in FAMILIES:
            subject = args.cls
        elif args.cls in _mutation_names():
            from .mutations import MUTATIONS
            subject = MUTATIONS[args.cls].family
        else:
            raise _UsageError(f"unknown class {args.cls!r}")
    elif args.word:
        subject = decode(_parse_word(args.word))
        if subject is None:
            raise _UsageError(f"word {args.word} is undecodable")
    else:
        raise _UsageError("give --class or a hex word")
    obligation = build_obligation(subject, profile)
    _write_out(args.output, emit_smt(obligation, vacuity=args.vacuity))
    return EXIT_OK


def _cmd_census(args) -> int:
    from .kernels import backend_name, census_sweep, sweep_range
    profile = _load_profile(args.profile)
    backend = args.backend or backend_name()
    if args.limit:
        dec, acc = 0, 0
        start = 0
        while start < args.limit:
            n = min(args.limit - start, 1 << 22)
            d, a, _ = sweep_range(start, n, args.offset, backend)
            dec += int(d.sum())
            acc += int(a.sum())
            start += n
        print(f"partial census of first {args.limit} words "
              f"({backend}): decodable={dec} accepted={acc}")
        return EXIT_OK
    swept = census_sweep(profile, args.offset, backend)
    expected = census_closed_form(profile, args.offset)
    print(f"census at offset {args.offset:#x} ({backend} backend)")
    print(f"{'class':<10}{'decodable':>14}{'accepted':>14}{'expected':>14}")
    ok = True
    for cls in sorted(swept.decodable):
        want = expected.accepted.get(cls, 0)
        got = swept.accepted.get(cls, 0)
        ok &= want == got
        print(f"{cls:<10}{swept.decodable.get(cls, 0):>14}{got:>14}"
              f"{want:>14}")
    print(f"{'total':<10}{swept.total_decodable:>14}"
          f"{swept.total_accepted:>14}{expected.total_accepted:>14}")
    print("closed-form cross-check:", "match" if ok else "MISMATCH")
    return EXIT_OK if ok else EXIT_FOUND


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="sbx64",
        description="SBX64 sandbox toolchain: assembler, verifier, "
                    "rewriter, prover, simulator, fuzzer.")
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True)

    def profile_arg(p, default="sparse", required_default=True):
        p.add_argument("--profile", default=default if required_default
                       else None, help="sparse, dense, or file:PATH")

    p = sub.add_parser("decode", help="disassemble hex words")
    p.add_argument("word", nargs="+")
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("asm", help="assemble a program into an image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--entry", help="entry label or byte offset (default 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    profile_arg(p)
    p.set_defaults(fn=_cmd_asm)

    p = sub.add_parser("disasm", help="disassemble an image")
    p.add_argument("input")
    p.set_defaults(fn=_cmd_disasm)

    p = sub.add_parser("verify", help="check an image against the policy")
    p.add_argument("input")
    p.add_argument("--json", action="store_true")
    profile_arg(p)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("rewrite", help="guard a program for verifiability")
    p.add_argument("input")
    p.add_argument("-o", "--output", default=None)
    profile_arg(p)
    p.set_defaults(fn=_cmd_rewrite)

    p = sub.add_parser("run", help="boot and execute an image")
    p.add_argument("input")
    p.add_argument("--base", type=lambda s: int(s, 0), default=1 << 32)
    p.add_argument("--max-steps", type=int, default=1_000_000)
    p.add_argument("--trace", action="store_true",
                   help="print runtime-call records as JSON lines instead "
                        "of the guest's output bytes")
    p.add_argument("--stdin", action="store_true",
                   help="make stdin available to the read runtime call")
    profile_arg(p, required_default=False)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("fuzz", help="differential single-step fuzzing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--mutation", default=None, metavar="Mk")
    profile_arg(p)
    p.set_defaults(fn=_cmd_fuzz)

    p = sub.add_parser("prove", help="discharge safety obligations")
    p.add_argument("word", nargs="*", help="ground instruction hex words")
    p.add_argument("--class", dest="cls", default=None,
                   help="family name, mutation name, or 'all'")
    p.add_argument("--solver-cmd", default=None,
                   help="SMT-LIB2 solver command (or set SFI_SOLVER_CMD)")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--timeout", type=float, default=None)
    profile_arg(p)
    p.set_defaults(fn=_cmd_prove)

    p = sub.add_parser("emit-smt", help="print one obligation as SMT-LIB2")
    p.add_argument("word", nargs="?", default=None)
    p.add_argument("--class", dest="cls", default=None)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--vacuity", action="store_true",
                   help="emit the assumption-satisfiability variant")
    profile_arg(p)
    p.set_defaults(fn=_cmd_emit_smt)

    p = sub.add_parser("census", help="count decodable/accepted encodings")
    p.add_argument("--offset", type=lambda s: int(s, 0), default=REF_OFFSET)
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)
    p.add_argument("--limit", type=int, default=0,
                   help="sweep only the first N words (development aid)")
    profile_arg(p)
    p.set_defaults(fn=_cmd_census)
    return top


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except _InfraError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFRA
    except KeyboardInterrupt:
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
