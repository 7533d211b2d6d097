"""Sandbox geometry and the stateless instruction whitelist.

A sandbox is a 2^32-byte window at a 2^32-aligned base, flanked by unmapped
guard regions of profile-dependent size:

    [base - guard, base)            guard_lo   unmapped
    [base, base + 4096)             rt         read-only, holds the three
                                               runtime-call words at +0/+8/+16
    [base + 4096, code_end)         code       read + execute
    [code_end, base + 2^32)         data       read + write
    [base + 2^32, base + 2^32 + g)  guard_hi   unmapped
    anything else                   outside    host memory, never guaranteed
                                               to fault

Register conventions: r18 is the addressing register, r21 the sandbox base,
r30 the link register; field value 31 means sp. The whitelist accepts only
instructions whose effects provably stay inside the window above, one
instruction at a time, with no cross-instruction state.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from .isa import (Instr, MASK64, REG_ADDR, REG_BASE, REG_LINK, REG_SP,
                  sext)

SANDBOX_SIZE = 1 << 32
BASE_ALIGN = 1 << 32
RT_PAGE = 4096
RT_COUNT = 3
RT_SLOT_OFFSETS = (0, 8, 16)
REF_OFFSET = 1 << 31  # census reference position, mid-sandbox

# minimum redzone below/above any in-band pointer: 255 byte offset + 8 byte
# access + one spare word
MIN_SLACK = 264


class ProfileError(ValueError):
    """Raised when a profile violates the sandbox inequalities."""


@dataclass(frozen=True)
class Profile:
    """Sandbox sizing knobs. guard/slack in bytes."""
    name: str
    guard: int
    slack: int
    rt_page: int = RT_PAGE


SPARSE = Profile("sparse", guard=1 << 32, slack=1 << 27)
DENSE = Profile("dense", guard=1 << 14, slack=1 << 13)
PROFILES = {"sparse": SPARSE, "dense": DENSE}


def validate_profile(p: Profile) -> None:
    """Check the inequalities that make the guard regions absorb every
    whitelisted dereference. Raises ProfileError naming the violation."""
    if p.slack < MIN_SLACK:
        raise ProfileError(f"slack < {MIN_SLACK} (slack={p.slack})")
    if p.guard < p.slack + MIN_SLACK:
        raise ProfileError(
            f"guard < slack+{MIN_SLACK} (guard={p.guard}, slack={p.slack})")
    if p.rt_page != RT_PAGE:
        raise ProfileError(f"rt_page != {RT_PAGE} (rt_page={p.rt_page})")


def format_profile(p: Profile) -> str:
    return (f"name={p.name}\nguard={p.guard}\nslack={p.slack}\n"
            f"rt_page={p.rt_page}\n")


def parse_profile_text(text: str) -> Profile:
    """Parse a key=value profile file (name, guard, slack, rt_page)."""
    fields: dict[str, str] = {}
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProfileError(f"line {i}: expected key=value")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        p = Profile(name=fields.get("name", "custom"),
                    guard=int(fields["guard"], 0),
                    slack=int(fields["slack"], 0),
                    rt_page=int(fields.get("rt_page", str(RT_PAGE)), 0))
    except KeyError as e:
        raise ProfileError(f"missing profile key {e.args[0]!r}") from None
    except ValueError as e:
        raise ProfileError(str(e)) from None
    validate_profile(p)
    return p


@dataclass(frozen=True)
class Layout:
    """One concrete sandbox placement: absolute base and code end."""
    base: int
    code_end: int
    profile: Profile

    def __post_init__(self) -> None:
        if self.base % BASE_ALIGN:
            raise ValueError(f"base {self.base:#x} not {BASE_ALIGN:#x}-aligned")
        span = (self.code_end - self.base) & MASK64
        if not RT_PAGE <= span <= SANDBOX_SIZE:
            raise ValueError(f"code_end {self.code_end:#x} outside sandbox")
        if span % 4:
            raise ValueError("code_end must be 4-aligned")

    def region_of(self, addr: int) -> str:
        """Region name for one byte address; offsets are modular 64-bit so
        sandboxes near the address-space edges behave like any other."""
        d = (addr - self.base) & MASK64
        if d < self.profile.rt_page:
            return "rt"
        if d < (self.code_end - self.base) & MASK64:
            return "code"
        if d < SANDBOX_SIZE:
            return "data"
        if (addr - (self.base - self.profile.guard)) & MASK64 < self.profile.guard:
            return "guard_lo"
        if (addr - (self.base + SANDBOX_SIZE)) & MASK64 < self.profile.guard:
            return "guard_hi"
        return "outside"

    def readable(self, addr: int) -> bool:
        return ((addr - self.base) & MASK64) < SANDBOX_SIZE

    def writable(self, addr: int) -> bool:
        d = (addr - self.base) & MASK64
        return ((self.code_end - self.base) & MASK64) <= d < SANDBOX_SIZE

    def executable(self, addr: int) -> bool:
        d = (addr - self.base) & MASK64
        return RT_PAGE <= d < ((self.code_end - self.base) & MASK64)

    def in_modeled(self, addr: int) -> bool:
        """Inside sandbox or either guard: the range where every byte's
        fate (mapped permissions or guaranteed fault) is known."""
        g = self.profile.guard
        return ((addr - (self.base - g)) & MASK64) < SANDBOX_SIZE + 2 * g


# conjunct numbers reported by invariant diagnostics
CONJ_BASE = 1       # r21 == base
CONJ_ADDR = 2       # r18 within slack band
CONJ_SP = 3         # sp within slack band
CONJ_PC = 4         # pc in code region, 4-aligned
CONJ_LINK = 5       # r30 in [base, base+2^32] or a runtime-call address


def invariant_conjuncts(state, layout: Layout,
                        rt_addrs: tuple[int, ...]) -> list[bool]:
    """The five safety conjuncts, evaluated on a concrete state.

    state needs regs (index 0..30), sp, and pc attributes. Bands use
    modular 64-bit offsets, mirroring the prover's bitvector rendering.
    """
    base, slack = layout.base, layout.profile.slack
    band = SANDBOX_SIZE + 2 * slack

    def in_band(v: int) -> bool:
        return ((v - (base - slack)) & MASK64) < band

    code_len = ((layout.code_end - base) & MASK64) - RT_PAGE
    pc_off = (state.pc - (base + RT_PAGE)) & MASK64
    return [
        state.regs[21] == base,
        in_band(state.regs[18]),
        in_band(state.sp),
        pc_off < code_len and state.pc % 4 == 0,
        ((state.regs[30] - base) & MASK64) <= SANDBOX_SIZE
        or state.regs[30] in rt_addrs,
    ]


def invariant_holds(state, layout: Layout, rt_addrs: tuple[int, ...]) -> bool:
    return all(invariant_conjuncts(state, layout, rt_addrs))


RESERVED_WRITE = (REG_ADDR, REG_BASE, REG_LINK, REG_SP)

_WRITE_REASON = {18: "WritesAddrReg", 21: "WritesBase", 30: "WritesLink",
                 31: "WritesSp"}

TRAMP_OFFSETS = RT_SLOT_OFFSETS


@dataclass(frozen=True)
class Verdict:
    """Whitelist decision for one word: accept, or reject with a reason."""
    accept: bool
    reason: str = ""


ACCEPT = Verdict(True)


def _reject(reason: str) -> Verdict:
    return Verdict(False, reason)


def accepts(instr: Instr | None, offset: int, profile: Profile) -> Verdict:
    """Stateless whitelist decision for one instruction at one code offset.

    offset is the instruction's byte offset from the sandbox base; it only
    matters for direct branches. The profile parameter is part of the
    interface but no rule depends on it: guard and slack sizes change what
    the proofs absorb, not which instructions are allowed.
    """
    del profile
    if instr is None:
        return _reject("Undecodable")
    k = instr.kind
    if k in ("udf", "nop"):
        return ACCEPT
    if k in ("alu_reg", "alu_imm"):
        if instr.rd in RESERVED_WRITE:
            return _reject(_WRITE_REASON[instr.rd])
        return ACCEPT
    if k == "add_uxtw":
        if instr.rd == REG_BASE:
            return _reject("WritesBase")
        if instr.rd in (REG_ADDR, REG_LINK, REG_SP):
            # guard form: rebase a 32-bit offset onto the sandbox base
            if instr.rn == REG_BASE:
                return ACCEPT
            return _reject("BadGuardSource")
        return ACCEPT
    if k == "load":
        if instr.rt in (REG_ADDR, REG_BASE):
            return _reject(_WRITE_REASON[instr.rt])
        if instr.rt == REG_LINK:
            if (instr.rn == REG_BASE and instr.mode == "offset"
                    and instr.size == 8 and instr.simm9 in TRAMP_OFFSETS):
                return ACCEPT  # runtime-call trampoline
            if instr.rn == REG_BASE:
                return _reject("BadTrampolineForm")
            return _reject("WritesLink")
        return _address_base_ok(instr)
    if k == "store":
        return _address_base_ok(instr)
    if k in ("b", "bl"):
        return _branch_in_range(offset, instr.simm26)
    if k in ("cbz", "cbnz"):
        return _branch_in_range(offset, instr.simm19)
    if k == "br":
        if instr.rn in (REG_ADDR, REG_LINK):
            return ACCEPT
        return _reject("BranchTargetOutOfSandbox")
    raise ValueError(f"unknown kind {k!r}")


def _address_base_ok(instr: Instr) -> Verdict:
    if instr.mode == "base" and instr.rn == REG_ADDR:
        return ACCEPT
    if instr.mode in ("offset", "pre", "post") and instr.rn == REG_SP:
        return ACCEPT
    return _reject("BadAddressBase")


def _branch_in_range(offset: int, simm: int) -> Verdict:
    target = offset + simm * 4
    if 0 <= target < SANDBOX_SIZE:
        return ACCEPT
    return _reject("BranchTargetOutOfSandbox")


# ---------------------------------------------------------------------------
# Whitelisted class families
#
# The whitelist above partitions the accepted instructions into 13 shapes.
# Each family lists its encoding fields with either a finite choice set or a
# free bit-width; the table drives class-mode proofs, exhaustive/sampled
# enumeration, the closed-form census, and the fuzzer's instruction sampler.

GP_FREE = tuple(r for r in range(31) if r not in (18, 21, 30))   # 28 regs
REG_ALL = tuple(range(32))
REG_SRC = tuple(range(31))                                       # 31 regs


@dataclass(frozen=True)
class Field:
    name: str
    width: int                         # bit width of the encoding field
    choices: tuple[int, ...] | None    # None: all 2^width values (signed
    signed: bool = False               # fields span the two's complement range)

    def count(self) -> int:
        return len(self.choices) if self.choices is not None else 1 << self.width

    def values(self):
        if self.choices is not None:
            return self.choices
        lo = -(1 << (self.width - 1)) if self.signed else 0
        return range(lo, lo + (1 << self.width))

    def sample(self, rng) -> int:
        if self.choices is not None:
            return rng.choice(self.choices)
        v = rng.getrandbits(self.width)
        return sext(v, self.width) if self.signed else v


@dataclass(frozen=True)
class Family:
    name: str
    fields: tuple[Field, ...]

    def count(self) -> int:
        n = 1
        for f in self.fields:
            n *= f.count()
        return n

    def is_heavy(self, threshold: int = 10_000) -> bool:
        return self.count() > threshold

    def instr_of(self, a: dict[str, int]) -> Instr:
        return _FAMILY_BUILDERS[self.name](a)

    def enumerate_instrs(self):
        names = [f.name for f in self.fields]
        for combo in product(*(f.values() for f in self.fields)):
            yield self.instr_of(dict(zip(names, combo)))

    def sample(self, rng) -> Instr:
        return self.instr_of({f.name: f.sample(rng) for f in self.fields})

    def class_counts(self) -> dict[str, int]:
        """Accepted encodings this family contributes, by census class."""
        n = self.count()
        if self.name == "branch":
            return {"b": n // 2, "bl": n // 2}
        if self.name == "cbranch":
            return {"cbz": n // 2, "cbnz": n // 2}
        sample = self.instr_of(
            {f.name: next(iter(f.values())) for f in self.fields})
        return {sample.cls: n}


_SZ = {0: 1, 1: 2, 2: 4, 3: 8}
_MODE = {0: "base", 1: "offset", 2: "pre", 3: "post"}

_FAMILY_BUILDERS = {
    "sys": lambda a: Instr("udf" if a["payload"] == 0 else "nop"),
    "alu_reg": lambda a: Instr("alu_reg", f=("add", "sub", "and", "orr",
                                             "xor")[a["f"]],
                               rd=a["rd"], rn=a["rn"], rm=a["rm"]),
    "alu_imm": lambda a: Instr("alu_imm", f=("add", "sub")[a["f"]],
                               rd=a["rd"], rn=a["rn"], imm12=a["imm12"]),
    "add_uxtw_plain": lambda a: Instr("add_uxtw", rd=a["rd"], rn=a["rn"],
                                      rm=a["rm"]),
    "add_uxtw_guard": lambda a: Instr("add_uxtw", rd=a["rd"], rn=a["rn"],
                                      rm=a["rm"]),
    "load_base": lambda a: Instr("load", size=_SZ[a["sz"]], mode="base",
                                 rt=a["rt"], rn=a["rn"], simm9=0),
    "load_sp": lambda a: Instr("load", size=_SZ[a["sz"]],
                               mode=_MODE[a["mode"]], rt=a["rt"], rn=a["rn"],
                               simm9=a["simm9"]),
    "load_rtcall": lambda a: Instr("load", size=8, mode="offset", rt=30,
                                   rn=21, simm9=a["simm9"]),
    "store_base": lambda a: Instr("store", size=_SZ[a["sz"]], mode="base",
                                  rt=a["rt"], rn=a["rn"], simm9=0),
    "store_sp": lambda a: Instr("store", size=_SZ[a["sz"]],
                                mode=_MODE[a["mode"]], rt=a["rt"], rn=a["rn"],
                                simm9=a["simm9"]),
    "branch": lambda a: Instr("b" if a["link"] == 0 else "bl",
                              simm26=a["simm26"]),
    "cbranch": lambda a: Instr("cbz" if a["pol"] == 0 else "cbnz",
                               rt=a["rt"], simm19=a["simm19"]),
    "br_reg": lambda a: Instr("br", rn=a["rn"]),
}

FAMILIES: dict[str, Family] = {f.name: f for f in (
    Family("sys", (Field("payload", 1, (0, 1)),)),
    Family("alu_reg", (Field("f", 4, (0, 1, 2, 3, 4)),
                       Field("rd", 5, GP_FREE), Field("rn", 5, REG_ALL),
                       Field("rm", 5, REG_ALL))),
    Family("alu_imm", (Field("f", 4, (0, 1)), Field("rd", 5, GP_FREE),
                       Field("rn", 5, REG_ALL), Field("imm12", 12, None))),
    Family("add_uxtw_plain", (Field("rd", 5, GP_FREE),
                              Field("rn", 5, REG_ALL),
                              Field("rm", 5, REG_ALL))),
    Family("add_uxtw_guard", (Field("rd", 5, (18, 30, 31)),
                              Field("rn", 5, (21,)),
                              Field("rm", 5, REG_ALL))),
    Family("load_base", (Field("sz", 2, (0, 1, 2, 3)),
                         Field("rt", 5, GP_FREE), Field("rn", 5, (18,)))),
    Family("load_sp", (Field("sz", 2, (0, 1, 2, 3)),
                       Field("mode", 2, (1, 2, 3)), Field("rt", 5, GP_FREE),
                       Field("rn", 5, (31,)),
                       Field("simm9", 9, None, signed=True))),
    Family("load_rtcall", (Field("simm9", 9, (0, 8, 16)),)),
    Family("store_base", (Field("sz", 2, (0, 1, 2, 3)),
                          Field("rt", 5, REG_SRC), Field("rn", 5, (18,)))),
    Family("store_sp", (Field("sz", 2, (0, 1, 2, 3)),
                        Field("mode", 2, (1, 2, 3)), Field("rt", 5, REG_SRC),
                        Field("rn", 5, (31,)),
                        Field("simm9", 9, None, signed=True))),
    Family("branch", (Field("link", 1, (0, 1)),
                      Field("simm26", 26, None, signed=True))),
    Family("cbranch", (Field("pol", 1, (0, 1)), Field("rt", 5, REG_SRC),
                       Field("simm19", 19, None, signed=True))),
    Family("br_reg", (Field("rn", 5, (18, 30)),)),
)}

assert len(FAMILIES) == 13


# decodable encodings per class, straight from the bit layout
_DECODABLE = {
    "sys": 2,
    "alu_reg": 5 * 32 * 32 * 32,
    "alu_imm": 2 * 32 * 32 * 4096,
    "add_uxtw": 32 * 32 * 32,
    "load": 4 * (31 * 32 + 3 * 31 * 32 * 512),
    "store": 4 * (31 * 32 + 3 * 31 * 32 * 512),
    "b": 1 << 26,
    "bl": 1 << 26,
    "cbz": 31 * (1 << 19),
    "cbnz": 31 * (1 << 19),
    "br": 32,
}

_CLASS_OF_FAMILY = {
    "sys": "sys", "alu_reg": "alu_reg", "alu_imm": "alu_imm",
    "add_uxtw_plain": "add_uxtw", "add_uxtw_guard": "add_uxtw",
    "load_base": "load", "load_sp": "load", "load_rtcall": "load",
    "store_base": "store", "store_sp": "store", "br_reg": "br",
}


def _branch_count(offset: int, bits: int) -> int:
    """Accepted displacements for one direct branch class at one offset."""
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    s_lo = max(lo, -(offset // 4))
    s_hi = min(hi, (SANDBOX_SIZE - 4 - offset) // 4)
    return max(0, s_hi - s_lo + 1)


@dataclass(frozen=True)
class CensusReport:
    """Per-class decodable and accepted encoding counts at one offset."""
    profile: str
    offset: int
    decodable: dict[str, int]
    accepted: dict[str, int]

    @property
    def total_decodable(self) -> int:
        return sum(self.decodable.values())

    @property
    def total_accepted(self) -> int:
        return sum(self.accepted.values())


def census_closed_form(profile: Profile, offset: int = REF_OFFSET) -> CensusReport:
    """Census computed from the family table and the layout arithmetic,
    with no enumeration. Branch classes account for the offset."""
    if offset % 4:
        raise ValueError("offset must be 4-aligned")
    accepted = {c: 0 for c in _DECODABLE}
    for fam in FAMILIES.values():
        if fam.name == "branch":
            accepted["b"] += _branch_count(offset, 26)
            accepted["bl"] += _branch_count(offset, 26)
        elif fam.name == "cbranch":
            accepted["cbz"] += 31 * _branch_count(offset, 19)
            accepted["cbnz"] += 31 * _branch_count(offset, 19)
        else:
            for cls, n in fam.class_counts().items():
                accepted[cls] += n
    return CensusReport(profile.name, offset, dict(_DECODABLE), accepted)
