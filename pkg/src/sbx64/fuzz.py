"""Differential fuzzer for single instruction steps.

Each iteration samples a sandbox placement, a runtime-call table, a
machine state satisfying the SFI invariant, and one instruction the
verifier accepts at the sampled pc; executes it concretely; and checks
three things:

* safety — no access or control transfer leaves the modeled range, and
  non-exiting steps re-establish the invariant (the proved theorem);
* the simulator monitor — successful accesses stay inside the sandbox;
* engine agreement — the symbolic executor, evaluated on the sampled
  concrete values, predicts the same path, events, and post-state.

Safety failures abort with reproduction data, unless a mutation is being
fuzzed, in which case they are recorded as the mutation's signature.
Engine disagreement always aborts: the two interpreters must match even
on broken instruction sets. Band registers (r18, sp) are sampled with a
bias toward the slack-band edges, where profile bugs hide.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .isa import MASK64, Instr, disassemble
from .mutations import MUTATIONS
from .policy import (BASE_ALIGN, FAMILIES, Family, Layout, PROFILES, Profile,
                     RT_PAGE, SANDBOX_SIZE, accepts, invariant_conjuncts)
from .prover import _CLASS_FIXED, instr_from_fields
from .sandboxsim import SparseMemory
from .semantics import Fault, MachineState, NREGS, Next, RuntimeCall, step
from .symex import SymLayout, initial_state, sym_step
from . import terms as T
from .terms import evaluate


class FuzzFailure(AssertionError):
    """A safety or agreement check failed outside mutation fuzzing."""


@dataclass(frozen=True)
class Violation:
    iteration: int
    kind: str        # BadRead | BadWrite | BadExec | InvariantBroken{i}
    instr: str


@dataclass(frozen=True)
class FuzzReport:
    seed: int
    iterations: int
    profile: str
    mutation: str
    counts: tuple[tuple[str, int], ...]   # per instruction class, sorted
    violations: tuple[Violation, ...]     # first ten
    violation_count: int

    def summary(self) -> str:
        head = (f"seed={self.seed} iterations={self.iterations} "
                f"profile={self.profile}")
        if self.mutation:
            head += f" mutation={self.mutation}"
        lines = [head]
        lines += [f"  {cls:<8} {n}" for cls, n in self.counts]
        lines.append(f"  violations: {self.violation_count}")
        for v in self.violations:
            lines.append(f"    #{v.iteration}: {v.kind}  {v.instr}")
        return "\n".join(lines)


def _sample_layout(rng: random.Random, profile: Profile) -> Layout:
    """Base: random 2^32 multiple in the low 2^52; span: mostly small code
    regions, sometimes page-scale, occasionally the full sandbox."""
    base = rng.randrange(1 << 20) * BASE_ALIGN
    r = rng.random()
    if r < 0.70:
        span = RT_PAGE + 4 * rng.randrange(1, 1024)
    elif r < 0.95:
        span = RT_PAGE * rng.randrange(2, 1 << 12)
    else:
        span = SANDBOX_SIZE
    return Layout(base, base + span, profile)


def _sample_rt(rng: random.Random, layout: Layout) -> tuple[int, ...]:
    out: list[int] = []
    while len(out) < 3:
        a = rng.getrandbits(64)
        if not layout.in_modeled(a) and a not in out:
            out.append(a)
    return tuple(out)


def _band_offset(rng: random.Random, band: int) -> int:
    """Offset into a band, biased toward the first and last 512 bytes."""
    r = rng.random()
    if r < 0.70 or band <= 1024:
        return rng.randrange(band)
    if r < 0.85:
        return rng.randrange(512)
    return band - 1 - rng.randrange(512)


def _sample_state(rng: random.Random, layout: Layout,
                  rt: tuple[int, ...]) -> MachineState:
    """Rejection-sample a state satisfying the invariant: r21 pinned to
    base, r18/sp in the slack band, pc in the code region, r30 in the
    closed sandbox range or on a runtime-call address, the rest free."""
    base, slack = layout.base, layout.profile.slack
    band = SANDBOX_SIZE + 2 * slack
    span = layout.code_end - base
    while True:
        regs = [rng.getrandbits(64) for _ in range(NREGS)]
        regs[21] = base
        regs[18] = (base - slack + _band_offset(rng, band)) & MASK64
        if rng.random() < 0.25:
            regs[30] = rt[rng.randrange(3)]
        else:
            regs[30] = (base + rng.randrange(SANDBOX_SIZE + 1)) & MASK64
        sp = (base - slack + _band_offset(rng, band)) & MASK64
        pc = (base + RT_PAGE + 4 * rng.randrange((span - RT_PAGE) // 4))
        state = MachineState(tuple(regs), sp, pc & MASK64)
        if all(invariant_conjuncts(state, layout, rt)):
            return state


def _sample_instr(rng: random.Random, family: Family) -> Instr:
    """Sample through the semantic shape so relaxed mutation fields are
    honored even where the stock family builder would pin them."""
    shape, fixed = _CLASS_FIXED[family.name]
    vals = dict(fixed)
    vals.update({f.name: f.sample(rng) for f in family.fields})
    return instr_from_fields(shape, vals)


def _classify(outcome, events, layout: Layout,
              rt: tuple[int, ...]) -> str | None:
    """Safety classification of one concrete step; None means safe."""
    if isinstance(outcome, Fault):
        for ev in events:
            if not layout.in_modeled(ev.addr):
                return "BadRead" if ev.kind == "read" else "BadWrite"
        if outcome.kind == "BadPc" and outcome.outside_model:
            return "BadExec"
        return None
    if isinstance(outcome, RuntimeCall):
        return None
    for ev in events:
        if (ev.addr - layout.base) & MASK64 >= SANDBOX_SIZE:
            return "BadRead" if ev.kind == "read" else "BadWrite"
    for i, ok in enumerate(invariant_conjuncts(outcome.state, layout, rt),
                           start=1):
        if not ok:
            return f"InvariantBroken{{{i}}}"
    return None


_BASE_SYM = T.sym(64, "base")
_END_SYM = T.sym(64, "code_end")
_RT_SYMS = (T.sym(64, "rt0"), T.sym(64, "rt1"), T.sym(64, "rt2"))


def _agreement(instr: Instr, state: MachineState, layout: Layout,
               rt: tuple[int, ...], mem: SparseMemory, outcome,
               events) -> str | None:
    """Compare the symbolic engine's prediction against the concrete step.

    Returns a description of the first disagreement, or None.
    """
    env = {"base": layout.base, "code_end": layout.code_end,
           "rt0": rt[0], "rt1": rt[1], "rt2": rt[2],
           "sp": state.sp, "pc": state.pc}
    for i, v in enumerate(state.regs):
        env[f"r{i}"] = v

    sym_layout = SymLayout(_BASE_SYM, _END_SYM, _RT_SYMS, layout.profile)
    res = sym_step(initial_state(), instr, sym_layout)

    if res.fresh:               # loaded bytes read the concrete memory
        evs = res.paths[-1].events
        for f, ev in zip(res.fresh, evs):
            env[f.attr] = mem.load_byte(evaluate(ev.addr, env) & MASK64)

    active = [p for p in res.paths if evaluate(p.guard, env)]
    if len(active) != 1:
        return f"{len(active)} symbolic paths active"
    p = active[0]
    terminated = evaluate(p.terminated, env)

    sym_events = [(e.kind, evaluate(e.addr, env) & MASK64)
                  for e in p.events if evaluate(e.active, env)]
    if sym_events != [(e.kind, e.addr) for e in events]:
        return f"event mismatch: {sym_events} vs {events}"

    if isinstance(outcome, Next):
        if p.kind != "flow" or terminated:
            return "concrete continues but symbolic path terminates"
        for i in range(NREGS):
            want = evaluate(p.post.regs[i], env)
            if want != outcome.state.regs[i]:
                return (f"r{i} mismatch: sym {want:#x} vs "
                        f"{outcome.state.regs[i]:#x}")
        if evaluate(p.post.sp, env) != outcome.state.sp:
            return "sp mismatch"
        if evaluate(p.post.pc, env) != outcome.state.pc:
            return "pc mismatch"
        if evaluate(p.bad_exec, env) or evaluate(p.bad_mem, env):
            return "bad_exec/bad_mem on a surviving concrete step"
    elif isinstance(outcome, RuntimeCall):
        if p.kind != "flow" or not terminated:
            return "runtime call not predicted as terminating flow"
        if evaluate(p.post.pc, env) != rt[outcome.index]:
            return "runtime-call target mismatch"
    else:  # Fault
        if outcome.kind in ("Undefined", "MemUnmapped", "MemPermission"):
            if p.kind != "fault":
                return f"Fault{{{outcome.kind}}} on a symbolic flow path"
        else:  # BadPc is a flow path whose next pc is not executable
            if p.kind != "flow":
                return "BadPc not predicted on a flow path"
        if not terminated:
            return "concrete fault but symbolic path continues"
        bad = evaluate(p.bad_exec, env) or evaluate(p.bad_mem, env)
        conc_bad = (outcome.kind == "BadPc" and outcome.outside_model) or any(
            not layout.in_modeled(e.addr) for e in events)
        if bool(bad) != conc_bad:
            return f"escape flag mismatch: sym {bool(bad)} vs {conc_bad}"
    return None


def fuzz(seed: int, iterations: int, profile: Profile | str = "sparse",
         mutation: str | None = None) -> FuzzReport:
    """Run the differential loop; see the module docstring."""
    if isinstance(profile, str):
        profile = PROFILES[profile]
    if mutation is not None:
        mut = MUTATIONS[mutation]
        families = [mut.family]
        profile = mut.profile
    else:
        families = list(FAMILIES.values())

    rng = random.Random(seed)
    counts: dict[str, int] = {}
    violations: list[Violation] = []
    violation_count = 0
    for it in range(iterations):
        layout = _sample_layout(rng, profile)
        rt = _sample_rt(rng, layout)
        state = _sample_state(rng, layout, rt)
        offset = (state.pc - layout.base) & MASK64
        family = families[rng.randrange(len(families))]
        instr = _sample_instr(rng, family)
        if mutation is None:
            # the theorem quantifies over verifier-accepted placements;
            # direct branches carry a static displacement bound
            while not accepts(instr, offset, profile).accept:
                instr = _sample_instr(rng, family)
        counts[instr.cls] = counts.get(instr.cls, 0) + 1

        mem = SparseMemory()
        if (state.sp - layout.base) & MASK64 < SANDBOX_SIZE:
            mem.store_bytes((state.sp - 264) & MASK64, rng.randbytes(536))
        mem.store_bytes(state.regs[18], rng.randbytes(8))
        for k, value in enumerate(rt):    # windows may straddle the table
            mem.store_bytes(layout.base + 8 * k, value.to_bytes(8, "little"))

        outcome, events = step(state, instr, layout, rt, mem)

        disagreement = _agreement(instr, state, layout, rt, mem, outcome,
                                  events)
        if disagreement:
            raise FuzzFailure(
                f"engine disagreement at seed={seed} iteration={it} on "
                f"`{disassemble(instr)}`: {disagreement}")

        bad = _classify(outcome, events, layout, rt)
        if bad is None:
            continue
        if mutation is None:
            raise FuzzFailure(
                f"safety violation at seed={seed} iteration={it}: {bad} on "
                f"`{disassemble(instr)}`")
        violation_count += 1
        if len(violations) < 10:
            violations.append(Violation(it, bad, disassemble(instr)))

    return FuzzReport(seed, iterations, profile.name, mutation or "",
                      tuple(sorted(counts.items())), tuple(violations),
                      violation_count)
