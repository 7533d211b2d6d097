"""Bitvector/boolean term DAG with two interpretations.

Terms are immutable and shared; the prover renders them to SMT-LIB2 text
and the differential tests evaluate them concretely under an assignment.
Width 0 encodes the boolean sort. Rendering is deterministic: identical
DAGs produce byte-identical text.
"""
from __future__ import annotations

from dataclasses import dataclass

BOOL = 0


@dataclass(frozen=True)
class Term:
    op: str
    width: int
    args: tuple["Term", ...] = ()
    attr: object = None        # const value, symbol name, or (hi, lo)

    def __repr__(self) -> str:
        if self.op == "const":
            return f"<{self.attr}:{self.width}>"
        if self.op == "sym":
            return f"<{self.attr}>"
        return f"<{self.op}/{len(self.args)}>"


def const(width: int, value: int) -> Term:
    return Term("const", width, attr=value & ((1 << width) - 1))


TRUE = Term("const", BOOL, attr=1)
FALSE = Term("const", BOOL, attr=0)


def sym(width: int, name: str) -> Term:
    return Term("sym", width, attr=name)


def _bv2(op: str, a: Term, b: Term) -> Term:
    if a.width != b.width or a.width == BOOL:
        raise ValueError(f"{op}: width mismatch {a.width} vs {b.width}")
    return Term(op, a.width, (a, b))


def add(a: Term, b: Term) -> Term:
    return _bv2("add", a, b)


def sub(a: Term, b: Term) -> Term:
    return _bv2("sub", a, b)


def band(a: Term, b: Term) -> Term:
    return _bv2("band", a, b)


def bor(a: Term, b: Term) -> Term:
    return _bv2("bor", a, b)


def bxor(a: Term, b: Term) -> Term:
    return _bv2("bxor", a, b)


def eq(a: Term, b: Term) -> Term:
    if a.width != b.width:
        raise ValueError(f"eq: width mismatch {a.width} vs {b.width}")
    return Term("eq", BOOL, (a, b))


def _cmp(op: str, a: Term, b: Term) -> Term:
    if a.width != b.width or a.width == BOOL:
        raise ValueError(f"{op}: width mismatch {a.width} vs {b.width}")
    return Term(op, BOOL, (a, b))


def ult(a: Term, b: Term) -> Term:
    return _cmp("ult", a, b)


def ule(a: Term, b: Term) -> Term:
    return _cmp("ule", a, b)


def lnot(a: Term) -> Term:
    if a is TRUE:
        return FALSE
    if a is FALSE:
        return TRUE
    return Term("lnot", BOOL, (a,))


def _flat(op: str, parts) -> Term:
    args = []
    for p in parts:
        if p.width != BOOL:
            raise ValueError(f"{op} needs booleans")
        args.append(p)
    return Term(op, BOOL, tuple(args))


def land(*parts: Term) -> Term:
    kept = [p for p in parts if p is not TRUE]
    if any(p is FALSE for p in kept):
        return FALSE
    if not kept:
        return TRUE
    if len(kept) == 1:
        return kept[0]
    return _flat("land", kept)


def lor(*parts: Term) -> Term:
    kept = [p for p in parts if p is not FALSE]
    if any(p is TRUE for p in kept):
        return TRUE
    if not kept:
        return FALSE
    if len(kept) == 1:
        return kept[0]
    return _flat("lor", kept)


def implies(a: Term, b: Term) -> Term:
    return _flat("implies", (a, b))


def ite(c: Term, a: Term, b: Term) -> Term:
    if c.width != BOOL:
        raise ValueError("ite condition must be boolean")
    if a.width != b.width:
        raise ValueError(f"ite: width mismatch {a.width} vs {b.width}")
    if c is TRUE:
        return a
    if c is FALSE:
        return b
    return Term("ite", a.width, (c, a, b))


def zext(a: Term, width: int) -> Term:
    if width < a.width or a.width == BOOL:
        raise ValueError("zext must widen a bitvector")
    if width == a.width:
        return a
    return Term("zext", width, (a,))


def sext_t(a: Term, width: int) -> Term:
    if width < a.width or a.width == BOOL:
        raise ValueError("sext must widen a bitvector")
    if width == a.width:
        return a
    return Term("sext", width, (a,))


def extract(a: Term, hi: int, lo: int) -> Term:
    if not 0 <= lo <= hi < a.width:
        raise ValueError(f"extract [{hi}:{lo}] out of range for {a.width}")
    return Term("extract", hi - lo + 1, (a,), (hi, lo))


def concat(hi: Term, lo: Term) -> Term:
    if hi.width == BOOL or lo.width == BOOL:
        raise ValueError("concat needs bitvectors")
    return Term("concat", hi.width + lo.width, (hi, lo))


def shl(a: Term, b: Term) -> Term:
    return _bv2("shl", a, b)


def evaluate(term: Term, env: dict[str, int]) -> int:
    """Concrete value of a term: booleans as 0/1, bitvectors as unsigned
    ints. env maps symbol names to unsigned values."""
    memo: dict[int, int] = {}

    def go(t: Term) -> int:
        key = id(t)
        got = memo.get(key)
        if got is not None:
            return got
        mask = (1 << t.width) - 1 if t.width else 1
        op = t.op
        if op == "const":
            v = t.attr
        elif op == "sym":
            try:
                v = env[t.attr] & mask
            except KeyError:
                raise KeyError(f"unassigned symbol {t.attr!r}") from None
        elif op == "add":
            v = (go(t.args[0]) + go(t.args[1])) & mask
        elif op == "sub":
            v = (go(t.args[0]) - go(t.args[1])) & mask
        elif op == "band":
            v = go(t.args[0]) & go(t.args[1])
        elif op == "bor":
            v = go(t.args[0]) | go(t.args[1])
        elif op == "bxor":
            v = go(t.args[0]) ^ go(t.args[1])
        elif op == "shl":
            v = (go(t.args[0]) << go(t.args[1])) & mask
        elif op == "eq":
            v = int(go(t.args[0]) == go(t.args[1]))
        elif op == "ult":
            v = int(go(t.args[0]) < go(t.args[1]))
        elif op == "ule":
            v = int(go(t.args[0]) <= go(t.args[1]))
        elif op == "lnot":
            v = 1 - go(t.args[0])
        elif op == "land":
            v = int(all(go(a) for a in t.args))
        elif op == "lor":
            v = int(any(go(a) for a in t.args))
        elif op == "implies":
            v = int(not go(t.args[0]) or go(t.args[1]))
        elif op == "ite":
            v = go(t.args[1]) if go(t.args[0]) else go(t.args[2])
        elif op == "zext":
            v = go(t.args[0])
        elif op == "sext":
            a = t.args[0]
            v = go(a)
            if v & (1 << (a.width - 1)):
                v |= mask ^ ((1 << a.width) - 1)
        elif op == "extract":
            hi, lo = t.attr
            v = (go(t.args[0]) >> lo) & mask
        elif op == "concat":
            v = (go(t.args[0]) << t.args[1].width) | go(t.args[1])
        else:
            raise ValueError(f"unknown op {op!r}")
        memo[key] = v
        return v

    return go(term)


_SMT_OP = {"add": "bvadd", "sub": "bvsub", "band": "bvand", "bor": "bvor",
           "bxor": "bvxor", "shl": "bvshl", "eq": "=", "ult": "bvult",
           "ule": "bvule", "lnot": "not", "land": "and", "lor": "or",
           "implies": "=>", "ite": "ite"}


def render(term: Term) -> str:
    """SMT-LIB2 text for a term. Deterministic; no let-bindings, shared
    subterms are re-rendered (cached per node, so cost stays linear)."""
    memo: dict[int, str] = {}

    def go(t: Term) -> str:
        key = id(t)
        got = memo.get(key)
        if got is not None:
            return got
        op = t.op
        if op == "const":
            if t.width == BOOL:
                s = "true" if t.attr else "false"
            elif t.width % 4 == 0:
                s = f"#x{t.attr:0{t.width // 4}x}"
            else:
                s = f"#b{t.attr:0{t.width}b}"
        elif op == "sym":
            s = t.attr
        elif op == "zext":
            s = (f"((_ zero_extend {t.width - t.args[0].width}) "
                 f"{go(t.args[0])})")
        elif op == "sext":
            s = (f"((_ sign_extend {t.width - t.args[0].width}) "
                 f"{go(t.args[0])})")
        elif op == "extract":
            hi, lo = t.attr
            s = f"((_ extract {hi} {lo}) {go(t.args[0])})"
        elif op == "concat":
            s = f"(concat {go(t.args[0])} {go(t.args[1])})"
        else:
            s = f"({_SMT_OP[op]} {' '.join(go(a) for a in t.args)})"
        memo[key] = s
        return s

    return go(term)


def symbols_of(term: Term) -> list[Term]:
    """Every distinct symbol in a term, in first-encounter order."""
    seen: set[int] = set()
    out: list[Term] = []

    def go(t: Term) -> None:
        if id(t) in seen:
            return
        seen.add(id(t))
        if t.op == "sym":
            out.append(t)
        for a in t.args:
            go(a)

    go(term)
    return out
