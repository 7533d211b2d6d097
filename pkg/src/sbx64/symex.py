"""Symbolic execution of one instruction over the term domain.

sym_step interprets the same effects() description as the concrete engine,
but instruction fields may be term symbols (class-mode proofs quantify over
whole whitelist families). The result is a set of guarded paths: at most
one fault path (trap guaranteed by an unmapped or permission-denied byte,
or udf) and one or two fall-through paths (branch taken/untaken).

Every path carries its byte events with activity conditions, a termination
term (fault, runtime call, or code-region exit), and a bad-exec term (the
next pc escapes the modeled range without being a runtime-call address).
Loads introduce fresh 8-bit symbols for the bytes read; reads that land in
the runtime-call page are pinned to the rt words by side assumptions.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from . import terms as T
from .isa import MASK32, Instr
from .policy import RT_PAGE, SANDBOX_SIZE, Profile
from .semantics import NREGS, effects, normalize
from .terms import Term


def in_range(x: Term, lo: Term, length: Term) -> Term:
    """lo <= x < lo+length with modular 64-bit wraparound."""
    return T.ult(T.sub(x, lo), length)


def c64(v: int) -> Term:
    return T.const(64, v)


@dataclass(frozen=True)
class SymState:
    regs: tuple[Term, ...]
    sp: Term
    pc: Term

    def read(self, idx) -> Term:
        if isinstance(idx, int):
            return self.sp if idx == 31 else self.regs[idx]
        val = self.sp
        for i in range(NREGS - 1, -1, -1):
            val = T.ite(T.eq(idx, T.const(idx.width, i)), self.regs[i], val)
        return val

    def write(self, cond, idx, value: Term) -> "SymState":
        cond = _bool(cond)
        if isinstance(idx, int):
            if idx == 31:
                return replace(self, sp=T.ite(cond, value, self.sp))
            regs = list(self.regs)
            regs[idx] = T.ite(cond, value, regs[idx])
            return replace(self, regs=tuple(regs))
        regs = [T.ite(T.land(cond, T.eq(idx, T.const(idx.width, i))),
                      value, r) for i, r in enumerate(self.regs)]
        sp = T.ite(T.land(cond, T.eq(idx, T.const(idx.width, 31))),
                   value, self.sp)
        return SymState(tuple(regs), sp, self.pc)


def _bool(v) -> Term:
    if isinstance(v, Term):
        return v
    return T.TRUE if v else T.FALSE


def initial_state() -> SymState:
    """Fully symbolic machine state with the canonical symbol names."""
    return SymState(tuple(T.sym(64, f"r{i}") for i in range(NREGS)),
                    T.sym(64, "sp"), T.sym(64, "pc"))


@dataclass(frozen=True)
class SymLayout:
    """Symbolic sandbox placement: base and code_end are 64-bit symbols,
    rt holds the three runtime-call address symbols."""
    base: Term
    code_end: Term
    rt: tuple[Term, Term, Term]
    profile: Profile

    def in_sandbox(self, addr: Term) -> Term:
        return in_range(addr, self.base, c64(SANDBOX_SIZE))

    def in_data(self, addr: Term) -> Term:
        length = T.sub(c64(SANDBOX_SIZE), T.sub(self.code_end, self.base))
        return in_range(addr, self.code_end, length)

    def in_modeled(self, addr: Term) -> Term:
        g = self.profile.guard
        return in_range(addr, T.sub(self.base, c64(g)),
                        c64(SANDBOX_SIZE + 2 * g))

    def is_rt(self, addr: Term) -> Term:
        return T.lor(*(T.eq(addr, r) for r in self.rt))

    def executable(self, addr: Term) -> Term:
        code_len = T.sub(T.sub(self.code_end, self.base), c64(RT_PAGE))
        return in_range(addr, T.add(self.base, c64(RT_PAGE)), code_len)

    def rt_byte(self, addr: Term) -> Term:
        """The known byte at a runtime-call-page offset in [0, 24)."""
        d = T.sub(addr, self.base)
        val = T.extract(self.rt[2], 63, 56)  # offset 23
        for off in range(22, -1, -1):
            word, byte = divmod(off, 8)
            val = T.ite(T.eq(d, c64(off)),
                        T.extract(self.rt[word], 8 * byte + 7, 8 * byte), val)
        return val


def ambient_assumptions(layout: SymLayout) -> list[Term]:
    """Placement facts every obligation may assume: alignment, code-region
    bounds, and runtime-call addresses outside the modeled range."""
    span = T.sub(layout.code_end, layout.base)
    out = [
        T.eq(T.band(layout.base, c64(SANDBOX_SIZE - 1)), c64(0)),
        T.ule(c64(RT_PAGE), span),
        T.ule(span, c64(SANDBOX_SIZE)),
        T.eq(T.band(span, c64(3)), c64(0)),
    ]
    out.extend(T.lnot(layout.in_modeled(r)) for r in layout.rt)
    return out


def invariant_terms(state: SymState, layout: SymLayout) -> list[Term]:
    """The five safety conjuncts over a symbolic state; mirrors
    policy.invariant_conjuncts bit for bit."""
    slack = layout.profile.slack
    band_lo = T.sub(layout.base, c64(slack))
    band_len = c64(SANDBOX_SIZE + 2 * slack)
    return [
        T.eq(state.regs[21], layout.base),
        in_range(state.regs[18], band_lo, band_len),
        in_range(state.sp, band_lo, band_len),
        T.land(layout.executable(state.pc),
               T.eq(T.band(state.pc, c64(3)), c64(0))),
        T.lor(T.ule(T.sub(state.regs[30], layout.base), c64(SANDBOX_SIZE)),
              layout.is_rt(state.regs[30])),
    ]


class SymOps:
    """The effects() value domain over terms; fields may be ints or
    symbols and are lifted lazily."""

    def lift(self, v, width, signed=False):
        if isinstance(v, Term):
            return T.sext_t(v, 64) if signed else T.zext(v, 64)
        return c64(v)

    def add(self, a, b):
        return T.add(a, b)

    def sub(self, a, b):
        return T.sub(a, b)

    def alu(self, f, names, a, b):
        if isinstance(f, int):
            return self._alu_one(names[f], a, b)
        val = self._alu_one(names[-1], a, b)
        for i in range(len(names) - 2, -1, -1):
            val = T.ite(T.eq(f, T.const(f.width, i)),
                        self._alu_one(names[i], a, b), val)
        return val

    @staticmethod
    def _alu_one(name, a, b):
        return {"add": T.add, "sub": T.sub, "and": T.band,
                "orr": T.bor, "xor": T.bxor}[name](a, b)

    def uxtw(self, a):
        return T.band(a, c64(MASK32))

    def scaled(self, simm, bits):
        if isinstance(simm, Term):
            return T.shl(T.sext_t(simm, 64), c64(2))
        return c64(simm * 4)

    def size_bytes(self, sz):
        if isinstance(sz, int):
            return 1 << sz
        val = c64(8)
        for i in range(2, -1, -1):
            val = T.ite(T.eq(sz, T.const(sz.width, i)), c64(1 << i), val)
        return val

    def eqv(self, a, b):
        if isinstance(a, Term):
            return T.eq(a, T.const(a.width, b))
        return a == b

    def member(self, a, values):
        if isinstance(a, Term):
            return T.lor(*(T.eq(a, T.const(a.width, v)) for v in values))
        return a in values

    def is_zero(self, a):
        return T.eq(a, c64(0))

    def taken(self, pol, zero):
        if isinstance(pol, int):
            return zero if pol == 0 else T.lnot(zero)
        return T.ite(T.eq(pol, T.const(pol.width, 0)), zero, T.lnot(zero))

    def pick(self, cond, a, b):
        if isinstance(cond, Term):
            return T.ite(cond, a, b)
        return a if cond else b


_SYM_OPS = SymOps()


@dataclass(frozen=True)
class SymEvent:
    kind: str       # "read" | "write"
    addr: Term
    active: Term    # boolean: this byte is part of the access


@dataclass(frozen=True)
class SymPath:
    """One guarded execution path of a single instruction."""
    kind: str            # "fault" | "flow"
    guard: Term
    post: SymState       # pre-state on fault paths (nothing commits)
    events: tuple[SymEvent, ...]
    terminated: Term     # fault, runtime call, or leaving the code region
    bad_exec: Term       # next pc outside the modeled range and not rt
    bad_mem: Term        # the access touches a byte outside the modeled
                         # range (traps-last: checked on fault paths too)


@dataclass(frozen=True)
class SymResult:
    paths: tuple[SymPath, ...]
    assumptions: tuple[Term, ...]   # runtime-call-page read pinning
    fresh: tuple[Term, ...]         # loaded-byte symbols, creation order


class NameSupply:
    def __init__(self) -> None:
        self.n = 0

    def fresh(self, width: int, prefix: str) -> Term:
        t = T.sym(width, f"{prefix}{self.n}")
        self.n += 1
        return t


def sym_step(state: SymState, subject, layout: SymLayout,
             ns: NameSupply | None = None) -> SymResult:
    """Symbolically execute one instruction (a ground Instr or a
    (shape, fields) pair with term-valued fields)."""
    ns = ns or NameSupply()
    if isinstance(subject, Instr):
        shape, fld = normalize(subject)
    else:
        shape, fld = subject
    e = effects(shape, fld, state.read, state.pc, _SYM_OPS)

    paths: list[SymPath] = []
    assumptions: list[Term] = []
    fresh: list[Term] = []
    not_udf = T.TRUE
    udf = _bool(e.udf)
    if udf is not T.FALSE:
        paths.append(SymPath("fault", udf, state, (), T.TRUE, T.FALSE,
                             T.FALSE))
        not_udf = T.lnot(udf)
    if udf is T.TRUE:
        return SymResult(tuple(paths), (), ())

    events: tuple[SymEvent, ...] = ()
    trap = T.FALSE
    bad_mem = T.FALSE
    new = state
    if e.access is not None:
        a = e.access
        kind = "read" if a.kind == "load" else "write"
        if isinstance(a.size_bytes, int):
            count, size_t = a.size_bytes, c64(a.size_bytes)
            active = [T.TRUE] * count
        else:
            count, size_t = 8, a.size_bytes
            active = [T.ult(c64(i), size_t) for i in range(8)]
        addrs = [T.add(a.addr, c64(i)) if i else a.addr for i in range(count)]
        events = tuple(SymEvent(kind, addr, act)
                       for addr, act in zip(addrs, active))
        # a run of consecutive bytes lies inside a contiguous modular band
        # exactly when its first and last bytes do, so range checks only
        # need the two endpoints
        last = (addrs[count - 1] if isinstance(a.size_bytes, int)
                else T.add(a.addr, T.sub(size_t, c64(1))))
        allowed = (layout.in_sandbox if a.kind == "load" else layout.in_data)
        trap = T.lor(T.lnot(allowed(a.addr)), T.lnot(allowed(last)))
        bad_mem = T.lor(T.lnot(layout.in_modeled(a.addr)),
                        T.lnot(layout.in_modeled(last)))
        paths.append(SymPath("fault", T.land(not_udf, trap), state, events,
                             T.TRUE, T.FALSE, bad_mem))
        if a.kind == "load":
            byte_syms = [ns.fresh(8, "mem") for _ in range(count)]
            fresh.extend(byte_syms)
            for addr, act, b in zip(addrs, active, byte_syms):
                hit_rt = T.land(act, in_range(addr, layout.base,
                                              c64(8 * len(layout.rt))))
                assumptions.append(
                    T.implies(hit_rt, T.eq(b, layout.rt_byte(addr))))
            val = _assemble(byte_syms, size_t, a.size_bytes)
            new = new.write(True, a.rt, val)
        if _bool(a.wb_cond) is not T.FALSE:
            new = new.write(a.wb_cond, a.wb_reg, a.wb_val)

    for cond, reg, val in e.writes:
        new = new.write(cond, reg, val)

    no_trap = T.land(not_udf, T.lnot(trap)) if trap is not T.FALSE else not_udf
    seq_pc = T.add(state.pc, c64(4))
    if e.control[0] == "seq":
        flows = [(no_trap, seq_pc)]
    elif e.control[0] == "jump":
        flows = [(no_trap, e.control[1])]
    else:
        _, taken, target = e.control
        taken = _bool(taken)
        flows = [(T.land(no_trap, taken), target),
                 (T.land(no_trap, T.lnot(taken)), seq_pc)]

    for guard, pc_next in flows:
        post = replace(new, pc=pc_next)
        is_rt = layout.is_rt(pc_next)
        ok = T.land(layout.executable(pc_next),
                    T.eq(T.band(pc_next, c64(3)), c64(0)))
        terminated = T.lor(is_rt, T.lnot(ok))
        bad_exec = T.land(T.lnot(layout.in_modeled(pc_next)), T.lnot(is_rt))
        paths.append(SymPath("flow", guard, post, events, terminated,
                             bad_exec, bad_mem))
    return SymResult(tuple(paths), tuple(assumptions), tuple(fresh))


def _assemble(byte_syms: list[Term], size_t: Term, size) -> Term:
    """Little-endian value of the loaded bytes, zero-extended to 64 bits."""
    def join(n: int) -> Term:
        val = byte_syms[0]
        for b in byte_syms[1:n]:
            val = T.concat(b, val)
        return T.zext(val, 64)

    if isinstance(size, int):
        return join(size)
    val = join(8)
    for n in (4, 2, 1):
        val = T.ite(T.eq(size_t, c64(n)), join(n), val)
    return val
