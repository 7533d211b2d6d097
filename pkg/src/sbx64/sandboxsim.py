"""Trusted-runtime simulator.

Boots verified images into a concrete sandbox (runtime-call page, code,
zeroed data, virtual guards), executes them with the concrete interpreter,
and dispatches the three runtime calls. A safety monitor asserts that no
successfully executed guest access ever touches memory outside
[base, base + 2^32) — the property the prover establishes — so any such
access aborts the simulator rather than being absorbed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .isa import MASK32, MASK64, Image, decode, unpack_image
from .policy import (Layout, PROFILES, Profile, RT_PAGE, SANDBOX_SIZE,
                     invariant_holds)
from .semantics import (Fault, MachineState, NREGS, Next, RuntimeCall, step)
from .verifier import format_report, verify_image

DEFAULT_BASE = 1 << 32
DEFAULT_RT = (1 << 60, (1 << 60) + 8, (1 << 60) + 16)

_PAGE = 1 << 16


class BootError(ValueError):
    """The image, base, or runtime-call table cannot be booted."""


@dataclass(frozen=True)
class Exit:
    code: int


@dataclass(frozen=True)
class StepLimit:
    steps: int


ExitStatus = Exit | Fault | StepLimit


class SparseMemory:
    """Byte store that behaves as fully allocated and zeroed, backed by
    chunks materialized on first touch."""

    def __init__(self) -> None:
        self._chunks: dict[int, bytearray] = {}

    def load_byte(self, addr: int) -> int:
        addr &= MASK64
        chunk = self._chunks.get(addr // _PAGE)
        return chunk[addr % _PAGE] if chunk is not None else 0

    def store_byte(self, addr: int, value: int) -> None:
        addr &= MASK64
        key = addr // _PAGE
        chunk = self._chunks.get(key)
        if chunk is None:
            chunk = self._chunks[key] = bytearray(_PAGE)
        chunk[addr % _PAGE] = value & 0xFF

    def load_bytes(self, addr: int, n: int) -> bytes:
        return bytes(self.load_byte(addr + i) for i in range(n))

    def store_bytes(self, addr: int, data: bytes) -> None:
        for i, b in enumerate(data):
            self.store_byte(addr + i, b)

    def load_word(self, addr: int) -> int:
        return int.from_bytes(self.load_bytes(addr, 4), "little")


@dataclass
class Sandbox:
    """One booted sandbox instance."""
    layout: Layout
    rt: tuple[int, int, int]
    mem: SparseMemory
    state: MachineState
    trace: list[dict] = field(default_factory=list)
    host_in: bytes = b""
    host_out: bytearray = field(default_factory=bytearray)
    steps: int = 0
    _in_pos: int = 0


def boot(image: bytes | Image, profile: Profile | None = None,
         base: int = DEFAULT_BASE, rt: tuple[int, int, int] = DEFAULT_RT,
         host_in: bytes = b"", unchecked: bool = False) -> Sandbox:
    """Lay out and validate a sandbox ready to run.

    The image must pass the verifier; `unchecked` skips that refusal (for
    differential tests that run unverifiable originals). The runtime-call
    table must hold three distinct addresses outside the modeled range.
    """
    if isinstance(image, bytes):
        image = unpack_image(image)
    if profile is None:
        profile = PROFILES[image.profile]
    if not unchecked:
        report = verify_image(image, profile)
        if not report.ok:
            raise BootError("image rejected by the verifier:\n"
                            + format_report(report))

    code_end = base + RT_PAGE + -(-len(image.code) // RT_PAGE) * RT_PAGE
    layout = Layout(base, code_end, profile)  # validates base and span
    if len(rt) != 3 or len(set(rt)) != 3:
        raise BootError("runtime-call table needs three distinct addresses")
    for a in rt:
        if layout.in_modeled(a):
            raise BootError(f"runtime-call address {a:#x} inside the "
                            "modeled range")

    mem = SparseMemory()
    for i, value in enumerate(rt):
        mem.store_bytes(base + 8 * i, value.to_bytes(8, "little"))
    mem.store_bytes(base + RT_PAGE, image.code)

    state = MachineState(regs=(0,) * NREGS, sp=(base + SANDBOX_SIZE) & MASK64,
                         pc=base + RT_PAGE + image.entry)
    state = state.write(21, base)
    state = state.write(18, base)   # reserved registers start on the base,
    state = state.write(30, base)   # placing the boot state inside the bands
    box = Sandbox(layout, tuple(rt), mem, state, host_in=host_in)
    assert invariant_holds(box.state, layout, box.rt)
    return box


def _monitor(box: Sandbox, events) -> None:
    base = box.layout.base
    for ev in events:
        assert (ev.addr - base) & MASK64 < SANDBOX_SIZE, (
            f"successful access escaped the sandbox: {ev}")


def _runtime_call(box: Sandbox, call: RuntimeCall) -> ExitStatus | None:
    """Dispatch one runtime call; None means execution resumes."""
    st = call.state
    base = box.layout.base
    if call.index == 0:
        code = st.regs[0] & MASK32
        box.trace.append({"call": "exit", "code": code})
        return Exit(code)

    # transfer window: [base + r0 mod 2^32, ...) clamped to the sandbox,
    # and for host-to-guest transfers further to the writable data region,
    # so the runtime itself can never alter the code or runtime-call page
    off = st.regs[0] & MASK32
    want = st.regs[1]
    start = base + off
    limit = min(want, SANDBOX_SIZE - off)
    if call.index == 1:
        data = box.mem.load_bytes(start, limit)
        box.host_out.extend(data)
    else:
        if not box.layout.writable(start):
            limit = 0
        data = box.host_in[box._in_pos:box._in_pos + limit]
        box._in_pos += len(data)
        box.mem.store_bytes(start, data)
    name = "write" if call.index == 1 else "read"
    record = {"call": name, "ptr": start, "len": len(data),
              "data": data.hex()}

    resume = (base + (st.regs[9] & MASK32)) & MASK64
    record["resume"] = resume
    box.trace.append(record)
    new_state = st.write(0, len(data))
    if resume % 4 or not box.layout.executable(resume):
        return Fault("BadPc", pc=st.pc, addr=resume,
                     outside_model=not box.layout.in_modeled(resume))
    box.state = replace(new_state, pc=resume)
    return None


def run(box: Sandbox, max_steps: int = 1_000_000) -> ExitStatus:
    """Execute until exit, fault, or step budget exhaustion."""
    for _ in range(max_steps):
        box.steps += 1
        word = box.mem.load_word(box.state.pc)
        instr = decode(word)
        if instr is None:
            return Fault("Undefined", pc=box.state.pc)
        outcome, events = step(box.state, instr, box.layout, box.rt, box.mem)
        if not isinstance(outcome, Fault):
            _monitor(box, events)
        if isinstance(outcome, Next):
            box.state = outcome.state
            continue
        if isinstance(outcome, Fault):
            return outcome
        status = _runtime_call(box, outcome)
        if status is not None:
            return status
    return StepLimit(max_steps)


def status_text(status: ExitStatus) -> str:
    if isinstance(status, Exit):
        return f"Exit{{{status.code}}}"
    if isinstance(status, StepLimit):
        return f"StepLimit after {status.steps} steps"
    out = f"Fault{{{status.kind}}} at pc={status.pc:#x}"
    if status.kind in ("MemUnmapped", "MemPermission", "BadPc"):
        out += f" addr={status.addr:#x}"
    return out
