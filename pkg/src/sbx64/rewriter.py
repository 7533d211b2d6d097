"""Assembly-to-assembly transformation that makes programs verifiable.

Unsafe memory and control instructions are expanded into short sequences
built around the guard instruction `add x18, x21, wN, uxtw`, which rebases
the low 32 bits of a register onto the sandbox. r17 serves as the fixed
scratch register for folding offsets, so input programs must not use r17,
r18, or r21 as ordinary data; such uses are rejected rather than silently
broken. Every inserted instruction is itself accepted by the verifier, so
rewriting is idempotent: running it on its own output changes nothing.
"""
from __future__ import annotations

from dataclasses import replace

from .isa import Instr, SourceLine, disassemble, parse_program
from .policy import REG_SRC, TRAMP_OFFSETS


class RewriteError(ValueError):
    """The program violates a rewriting precondition."""


_RESERVED_DATA = (17, 18, 21)    # never ordinary sources
_RESERVED_DEST = (18, 21, 30)    # never ordinary destinations


def _line(instr: Instr) -> SourceLine:
    return SourceLine("instr", instr=instr)


def _guard(rm: int) -> SourceLine:
    """add x18, x21, w<rm>, uxtw"""
    return _line(Instr("add_uxtw", rd=18, rn=21, rm=rm))


def _sp_guard(rm: int) -> SourceLine:
    """add sp, x21, w<rm>, uxtw"""
    return _line(Instr("add_uxtw", rd=31, rn=21, rm=rm))


def _fold(rd: int, rn: int, imm: int) -> SourceLine:
    """rd := rn + imm for imm in [-4095, 4095]"""
    if imm >= 0:
        return _line(Instr("alu_imm", f="add", rd=rd, rn=rn, imm12=imm))
    return _line(Instr("alu_imm", f="sub", rd=rd, rn=rn, imm12=-imm))


def _err(instr: Instr, why: str) -> RewriteError:
    return RewriteError(f"{why}: {disassemble(instr)}")


def _check_sources(instr: Instr, *regs: int) -> None:
    for r in regs:
        if r in _RESERVED_DATA:
            raise _err(instr, f"r{r} used as ordinary data")


def _rewrite_alu(i: Instr) -> list[SourceLine] | None:
    if i.rd in _RESERVED_DEST:
        raise _err(i, f"write to reserved register r{i.rd}")
    if i.kind == "alu_reg":
        _check_sources(i, i.rn, i.rm)
    elif not (i.rn == 17 or (i.rn == 18 and i.rd == 17)):
        # `op rd, x17, #imm` moves the scratch; `op x17, x18, #imm` folds
        # an offset off the address register -- both appear in inserted
        # sequences and must pass through unchanged
        _check_sources(i, i.rn)
    if i.rd == 31:
        return [_line(replace(i, rd=17)), _sp_guard(17)]
    return None


def _rewrite_uxtw(i: Instr) -> list[SourceLine] | None:
    if i.rn == 21:
        if i.rd in (18, 30, 31):
            return None              # the guard idiom itself
        raise _err(i, "r21 used as ordinary data")
    if i.rd in _RESERVED_DEST:
        raise _err(i, f"write to reserved register r{i.rd}")
    _check_sources(i, i.rn, i.rm)
    if i.rd == 31:
        return [_line(replace(i, rd=17)), _sp_guard(17)]
    return None


def _is_trampoline(i: Instr) -> bool:
    return (i.kind == "load" and i.size == 8 and i.mode == "offset"
            and i.rt == 30 and i.rn == 21 and i.simm9 in TRAMP_OFFSETS)


def _rewrite_mem(i: Instr) -> list[SourceLine] | None:
    if i.rt not in REG_SRC:
        raise _err(i, "unsupported transfer register")
    if i.kind == "load":
        if i.rt == 30 and not _is_trampoline(i):
            raise _err(i, "load into reserved register r30")
        if i.rt in (18, 21):
            raise _err(i, f"load into reserved register r{i.rt}")
    else:
        _check_sources(i, i.rt)

    if i.rn == 17:
        raise _err(i, "r17 used as ordinary data")
    if i.rn == 21:
        if _is_trampoline(i):
            return None
        raise _err(i, "r21 used as ordinary data")
    if i.rn == 30 and i.mode in ("pre", "post"):
        raise _err(i, "write to reserved register r30")
    if i.rn == 31:
        if i.mode == "base":           # [sp] -> [sp, #0], directly verifiable
            return [_line(replace(i, mode="offset", simm9=0))]
        return None                    # sp offset/pre/post forms are safe
    if i.rn == 18 and i.mode == "base":
        return None                    # the safe base form

    op = _line(replace(i, mode="base", rn=18, simm9=0))
    if i.mode == "base" or (i.mode == "offset" and i.simm9 == 0):
        return [_guard(i.rn), op]
    if i.mode == "offset":
        return [_fold(17, i.rn, i.simm9), _guard(17), op]
    if i.mode == "pre":
        if i.rn == 18:
            # the guard doubles as the base-register update
            if i.simm9:
                return [_fold(17, 18, i.simm9), _guard(17), op]
            return [_guard(18), op]
        if i.simm9 == 0 and not (i.kind == "load" and i.rt == i.rn):
            return [_guard(i.rn), op]
        seq = [_fold(17, i.rn, i.simm9), _guard(17)]
        wb = _fold(i.rn, 17, 0)
        if i.kind == "load" and i.rt != i.rn:
            return seq + [wb, op]      # keeps x17 intact when rt is 17
        return seq + [op, wb]          # rt == rn: the base update wins
    # post-index: access the old base, then apply the update
    if i.rn == 18:
        if i.kind == "load" and i.rt == 17 and i.simm9:
            raise _err(i, "post-index update of r18 needs the r17 scratch")
        seq = [_guard(18), op]
        if i.simm9:
            seq += [_fold(17, 18, i.simm9), _guard(17)]
        return seq
    if i.kind == "load" and i.rt == i.rn:
        # save base+imm first: the update overrides the loaded value
        return [_fold(17, i.rn, i.simm9), _guard(i.rn), op,
                _fold(i.rn, 17, 0)]
    seq = [_guard(i.rn), op]
    if i.simm9:
        seq.append(_fold(i.rn, i.rn, i.simm9))
    return seq


def _rewrite_instr(i: Instr) -> list[SourceLine] | None:
    """Replacement lines for one instruction, None if already safe."""
    k = i.kind
    if k in ("udf", "nop"):
        return None
    if k in ("alu_reg", "alu_imm"):
        return _rewrite_alu(i)
    if k == "add_uxtw":
        return _rewrite_uxtw(i)
    if k in ("load", "store"):
        return _rewrite_mem(i)
    if k in ("b", "bl"):
        return None                    # displacements re-resolved below
    if k in ("cbz", "cbnz"):
        if i.rt in (18, 21):           # rt 17 appears in inserted sequences
            raise _err(i, f"r{i.rt} used as ordinary data")
        if i.rt == 31:                 # compare sp through the scratch
            return [_fold(17, 31, 0), _line(replace(i, rt=17))]
        return None
    if k == "br":
        if i.rn in (18, 30):
            return None
        if i.rn in (17, 21):
            raise _err(i, f"r{i.rn} used as ordinary data")
        return [_guard(i.rn), _line(Instr("br", rn=18))]
    raise _err(i, "unsupported instruction")


_BRANCH_KINDS = ("b", "bl", "cbz", "cbnz")


def rewrite(program: str | list[SourceLine]) -> list[SourceLine]:
    """Expand unsafe instructions into guarded sequences.

    Labels are preserved and symbolic branch targets re-resolve at
    assembly time. Numeric branch displacements stay anchored to the word
    they originally named; rewriting fails if a target falls outside the
    program or a re-anchored displacement no longer fits its field.
    """
    lines = parse_program(program) if isinstance(program, str) else program
    n_words = sum(1 for l in lines if l.kind in ("word", "instr"))

    out: list[SourceLine] = []
    new_index: dict[int, int] = {}    # original word index -> output index
    # numeric branches: (position in out, output word index, original word
    # index, original displacement in words, kind)
    numeric: list[tuple[int, int, int, int, str]] = []
    out_words = 0
    orig_words = 0
    for line in lines:
        if line.kind not in ("word", "instr"):
            out.append(line)
            continue
        new_index[orig_words] = out_words
        if line.kind == "word":
            emitted = [line]
        else:
            repl = _rewrite_instr(line.instr)
            if repl is None:
                emitted = [line]
            elif line.instr.kind in _BRANCH_KINDS:
                # keep the original symbolic target on the branch line
                emitted = repl[:-1] + [replace(repl[-1], target=line.target)]
            else:
                emitted = repl
        for el in emitted:
            if (el.kind == "instr" and el.instr.kind in _BRANCH_KINDS
                    and not el.target):
                j = el.instr
                disp = j.simm26 if j.kind in ("b", "bl") else j.simm19
                numeric.append((len(out), out_words, orig_words, disp,
                                j.kind))
            out.append(el)
            out_words += 1
        orig_words += 1
    new_index[orig_words] = out_words        # one-past-the-end anchor

    for pos, word, orig, disp, kind in numeric:
        target = orig + disp
        if not 0 <= target <= n_words:
            raise RewriteError(
                "numeric branch target outside the program: "
                + disassemble(out[pos].instr))
        new_disp = new_index[target] - word
        limit = 1 << (25 if kind in ("b", "bl") else 18)
        if not -limit <= new_disp < limit:
            raise RewriteError(
                "displacement overflow after expansion: "
                + disassemble(out[pos].instr))
        if kind in ("b", "bl"):
            patched = replace(out[pos].instr, simm26=new_disp)
        else:
            patched = replace(out[pos].instr, simm19=new_disp)
        out[pos] = replace(out[pos], instr=patched)
    return out


def render(lines: list[SourceLine]) -> str:
    """Assembly text for a program, one line per element."""
    chunks: list[str] = []
    for line in lines:
        if line.kind == "label":
            chunks.append(f"{line.label}:")
        elif line.kind == "word":
            chunks.append(f".word 0x{line.value:08x}")
        elif line.kind == "instr":
            if line.target:
                i = line.instr
                if i.kind in ("b", "bl"):
                    chunks.append(f"{i.kind} {line.target}")
                else:
                    reg = "sp" if i.rt == 31 else f"x{i.rt}"
                    chunks.append(f"{i.kind} {reg}, {line.target}")
            else:
                chunks.append(disassemble(line.instr))
    return "\n".join(chunks) + "\n"
