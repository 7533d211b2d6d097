"""Instruction semantics with one effects description and two engines.

effects() maps a normalized instruction to a value-level description
(register writes, at most one memory access, control) through a small ops
interface. ConcreteOps instantiates it over plain 64-bit ints for the
step() engine here; symex.SymOps instantiates the same description over
terms for the prover. Instruction fields may therefore be ints or term
symbols; everything downstream of the ops interface is agnostic.

step() is the concrete engine: it expands the access into byte events,
enforces region permissions with fault atomicity (a faulting instruction
commits nothing, but its attempted byte events are still recorded), and
classifies the next pc as Next, RuntimeCall, or Fault.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .isa import ALU_IMM_OPS, ALU_OPS, MASK32, MASK64, MODES, SIZES, Instr
from .policy import Layout

NREGS = 31  # r0..r30; index 31 addresses sp


@dataclass(frozen=True)
class MachineState:
    """Full register state. regs holds r0..r30; sp and pc are separate."""
    regs: tuple[int, ...]
    sp: int
    pc: int

    def read(self, idx: int) -> int:
        return self.sp if idx == 31 else self.regs[idx]

    def write(self, idx: int, value: int) -> "MachineState":
        value &= MASK64
        if idx == 31:
            return replace(self, sp=value)
        regs = list(self.regs)
        regs[idx] = value
        return replace(self, regs=tuple(regs))


def zero_state(pc: int = 0, sp: int = 0) -> MachineState:
    return MachineState(regs=(0,) * NREGS, sp=sp & MASK64, pc=pc & MASK64)


@dataclass(frozen=True)
class Event:
    """One byte touched by an access, successful or not."""
    kind: str        # "read" | "write"
    addr: int
    instr_class: str


@dataclass(frozen=True)
class Next:
    state: MachineState


@dataclass(frozen=True)
class Fault:
    kind: str        # "Undefined" | "MemUnmapped" | "MemPermission" | "BadPc"
    pc: int
    addr: int = 0
    outside_model: bool = False


@dataclass(frozen=True)
class RuntimeCall:
    index: int
    state: MachineState   # pc already at the runtime-call address


Outcome = Next | Fault | RuntimeCall


def normalize(instr: Instr) -> tuple[str, dict[str, int]]:
    """Collapse the 12 instruction kinds into the 9 semantic shapes, with
    ints for every field (mnemonic fields become indices)."""
    k = instr.kind
    if k in ("udf", "nop"):
        return "sys", {"payload": 0 if k == "udf" else 1}
    if k == "alu_reg":
        return "alu_reg", {"f": ALU_OPS.index(instr.f), "rd": instr.rd,
                           "rn": instr.rn, "rm": instr.rm}
    if k == "alu_imm":
        return "alu_imm", {"f": ALU_IMM_OPS.index(instr.f), "rd": instr.rd,
                           "rn": instr.rn, "imm12": instr.imm12}
    if k == "add_uxtw":
        return "add_uxtw", {"rd": instr.rd, "rn": instr.rn, "rm": instr.rm}
    if k in ("load", "store"):
        return k, {"sz": SIZES.index(instr.size),
                   "mode": MODES.index(instr.mode), "rt": instr.rt,
                   "rn": instr.rn, "simm9": instr.simm9}
    if k in ("b", "bl"):
        return "branch", {"link": 0 if k == "b" else 1, "simm26": instr.simm26}
    if k in ("cbz", "cbnz"):
        return "cbranch", {"pol": 0 if k == "cbz" else 1, "rt": instr.rt,
                           "simm19": instr.simm19}
    if k == "br":
        return "br", {"rn": instr.rn}
    raise ValueError(f"unknown kind {k!r}")


class ConcreteOps:
    """The effects() value domain over unsigned 64-bit python ints."""

    def lift(self, v, width, signed=False):
        return v & MASK64

    def add(self, a, b):
        return (a + b) & MASK64

    def sub(self, a, b):
        return (a - b) & MASK64

    def alu(self, f, names, a, b):
        name = names[f]
        if name == "add":
            return (a + b) & MASK64
        if name == "sub":
            return (a - b) & MASK64
        if name == "and":
            return a & b
        if name == "orr":
            return a | b
        return a ^ b

    def uxtw(self, a):
        return a & MASK32

    def scaled(self, simm, bits):
        return (simm * 4) & MASK64

    def size_bytes(self, sz):
        return 1 << sz

    def eqv(self, a, b):
        return a == b

    def member(self, a, values):
        return a in values

    def is_zero(self, a):
        return a == 0

    def taken(self, pol, zero):
        return zero if pol == 0 else not zero

    def pick(self, cond, a, b):
        return a if cond else b


@dataclass
class Access:
    kind: str                 # "load" | "store"
    addr: object              # effective address
    size_bytes: object        # int, or a 64-bit term under SymOps
    rt: object = None         # load destination register
    store_val: object = None  # store source value
    wb_cond: object = False   # writeback active (pre/post modes)
    wb_reg: object = None
    wb_val: object = None


@dataclass
class Effects:
    """What one instruction does, before memory/fault interpretation."""
    udf: object = False                 # trap before any effect
    writes: tuple = ()                  # (cond, reg, value), applied in order
    access: Access | None = None        # rt write precedes writeback
    control: tuple = ("seq",)           # ("seq",) | ("jump", target)
                                        # | ("cond", taken, target)


def effects(shape: str, fld: dict, read, pc, ops) -> Effects:
    """The single semantic description both engines interpret.

    read(reg) yields a register value (index 31 is sp); pc is the current
    instruction address in the same domain.
    """
    if shape == "sys":
        return Effects(udf=ops.eqv(fld["payload"], 0))
    if shape == "alu_reg":
        val = ops.alu(fld["f"], ALU_OPS, read(fld["rn"]), read(fld["rm"]))
        return Effects(writes=((True, fld["rd"], val),))
    if shape == "alu_imm":
        imm = ops.lift(fld["imm12"], 12)
        val = ops.alu(fld["f"], ALU_IMM_OPS, read(fld["rn"]), imm)
        return Effects(writes=((True, fld["rd"], val),))
    if shape == "add_uxtw":
        val = ops.add(read(fld["rn"]), ops.uxtw(read(fld["rm"])))
        return Effects(writes=((True, fld["rd"], val),))
    if shape in ("load", "store"):
        rn_val = read(fld["rn"])
        disp = ops.add(rn_val, ops.lift(fld["simm9"], 9, signed=True))
        addr = ops.pick(ops.eqv(fld["mode"], 3), rn_val, disp)  # post: base
        acc = Access(kind=shape, addr=addr,
                     size_bytes=ops.size_bytes(fld["sz"]),
                     wb_cond=ops.member(fld["mode"], (2, 3)),
                     wb_reg=fld["rn"], wb_val=disp)
        if shape == "load":
            acc.rt = fld["rt"]
        else:
            acc.store_val = read(fld["rt"])
        return Effects(access=acc)
    if shape == "branch":
        target = ops.add(pc, ops.scaled(fld["simm26"], 26))
        link = (ops.eqv(fld["link"], 1), 30, ops.add(pc, ops.lift(4, 64)))
        return Effects(writes=(link,), control=("jump", target))
    if shape == "cbranch":
        target = ops.add(pc, ops.scaled(fld["simm19"], 19))
        taken = ops.taken(fld["pol"], ops.is_zero(read(fld["rt"])))
        return Effects(control=("cond", taken, target))
    if shape == "br":
        return Effects(control=("jump", read(fld["rn"])))
    raise ValueError(f"unknown shape {shape!r}")


_CONCRETE_OPS = ConcreteOps()


def classify_pc(pc: int, state: MachineState, layout: Layout,
                rt_addrs: tuple[int, ...]) -> Outcome:
    """Outcome of transferring control to pc with the given state."""
    if pc in rt_addrs:
        return RuntimeCall(rt_addrs.index(pc), replace(state, pc=pc))
    if pc % 4 == 0 and layout.executable(pc):
        return Next(replace(state, pc=pc))
    return Fault("BadPc", pc=state.pc, addr=pc,
                 outside_model=not layout.in_modeled(pc))


def step(state: MachineState, instr: Instr, layout: Layout,
         rt_addrs: tuple[int, ...], memory) -> tuple[Outcome, list[Event]]:
    """Execute one instruction concretely.

    memory provides load_byte(addr) -> int and store_byte(addr, value).
    Returns the outcome and the byte events the instruction attempted,
    in address order, including the events of a faulting access.
    """
    shape, fld = normalize(instr)
    e = effects(shape, fld, state.read, state.pc, _CONCRETE_OPS)
    if e.udf:
        return Fault("Undefined", pc=state.pc), []

    events: list[Event] = []
    new = state
    if e.access is not None:
        a = e.access
        kind = "read" if a.kind == "load" else "write"
        addrs = [(a.addr + i) & MASK64 for i in range(a.size_bytes)]
        events = [Event(kind, addr, instr.cls) for addr in addrs]
        ok = layout.readable if a.kind == "load" else layout.writable
        bad = [addr for addr in addrs if not ok(addr)]
        if bad:
            regions = {layout.region_of(addr) for addr in bad}
            unmapped = regions & {"guard_lo", "guard_hi", "outside"}
            fkind = "MemUnmapped" if unmapped else "MemPermission"
            return Fault(fkind, pc=state.pc, addr=bad[0]), events
        if a.kind == "load":
            val = 0
            for i, addr in enumerate(addrs):
                val |= (memory.load_byte(addr) & 0xFF) << (8 * i)
            new = new.write(a.rt, val)
        else:
            for i, addr in enumerate(addrs):
                memory.store_byte(addr, (a.store_val >> (8 * i)) & 0xFF)
        if a.wb_cond:
            new = new.write(a.wb_reg, a.wb_val)

    for cond, reg, val in e.writes:
        if cond:
            new = new.write(reg, val)

    if e.control[0] == "seq":
        pc_next = (state.pc + 4) & MASK64
    elif e.control[0] == "jump":
        pc_next = e.control[1]
    else:
        _, taken, target = e.control
        pc_next = target if taken else (state.pc + 4) & MASK64
    return classify_pc(pc_next, new, layout, rt_addrs), events
