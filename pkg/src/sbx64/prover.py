"""Per-instruction safety obligations, SMT emission, and solver driving.

For a subject (one concrete instruction, or a whole whitelisted family with
symbolic fields) the obligation states: from any state satisfying the
sandbox invariant and the placement assumptions, executing the subject
never touches a byte outside the modeled range, never transfers control
outside the modeled range (except to a runtime-call address), and either
terminates (fault or runtime call) or re-establishes the invariant.

The emitted script asserts the assumptions plus the negated goal, so unsat
means proved and a sat model is a candidate violation, which is always
replayed on the concrete engine before being reported.
"""
from __future__ import annotations

import re
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import terms as T
from .isa import ALU_IMM_OPS, ALU_OPS, MODES, SIZES, Instr, encode, sext
from .policy import (FAMILIES, SANDBOX_SIZE, Family, Layout, Profile,
                     invariant_conjuncts)
from .semantics import Fault, MachineState, Next, normalize, step
from .symex import (_SYM_OPS, NREGS, NameSupply, SymLayout, SymResult,
                    SymState, ambient_assumptions, c64, initial_state,
                    invariant_terms, sym_step)
from .terms import Term


class ProverError(RuntimeError):
    """Infrastructure failure: solver missing, malformed output, bad model."""


# shape and fixed fields of each family's class-mode subject; family fields
# override these with symbols (or ints, for single-choice fields)
_CLASS_FIXED: dict[str, tuple[str, dict[str, int]]] = {
    "sys": ("sys", {}),
    "alu_reg": ("alu_reg", {}),
    "alu_imm": ("alu_imm", {}),
    "add_uxtw_plain": ("add_uxtw", {}),
    "add_uxtw_guard": ("add_uxtw", {}),
    "load_base": ("load", {"mode": 0, "simm9": 0}),
    "load_sp": ("load", {}),
    "load_rtcall": ("load", {"sz": 3, "mode": 1, "rt": 30, "rn": 21}),
    "store_base": ("store", {"mode": 0, "simm9": 0}),
    "store_sp": ("store", {}),
    "branch": ("branch", {}),
    "cbranch": ("cbranch", {}),
    "br_reg": ("br", {}),
}


@dataclass(frozen=True)
class Obligation:
    subject_id: str
    profile: Profile
    kind: str                      # "encoding" | "class"
    shape: str
    fields: dict
    decls: tuple[Term, ...]        # fixed declaration order
    assumptions: tuple[Term, ...]
    goal: Term
    result: SymResult
    layout: SymLayout
    pre: SymState
    instr: Instr | None            # ground subject, when kind == "encoding"
    family: Family | None          # class subject


def subject_id(subject) -> str:
    if isinstance(subject, Instr):
        return f"{encode(subject):08x}"
    if isinstance(subject, Family):
        return subject.name
    return str(subject)


def _class_fields(family: Family):
    """Symbolic fields for a family: single-choice fields become ints,
    everything else a fresh symbol plus a membership constraint."""
    shape, fixed = _CLASS_FIXED[family.name]
    fields: dict = dict(fixed)
    decls: list[Term] = []
    constraints: list[Term] = []
    for f in family.fields:
        if f.choices is not None and len(f.choices) == 1:
            fields[f.name] = f.choices[0]
            continue
        s = T.sym(f.width, f.name)
        fields[f.name] = s
        decls.append(s)
        if f.choices is not None and len(f.choices) < (1 << f.width):
            constraints.append(
                T.lor(*(T.eq(s, T.const(f.width, v)) for v in f.choices)))
    return shape, fields, decls, constraints


def build_obligation(subject, profile: Profile) -> Obligation:
    """Assemble the proof obligation for one subject under one profile."""
    pre = initial_state()
    layout = SymLayout(T.sym(64, "base"), T.sym(64, "code_end"),
                       (T.sym(64, "rt0"), T.sym(64, "rt1"), T.sym(64, "rt2")),
                       profile)
    decls: list[Term] = [layout.base, layout.code_end, *layout.rt,
                         *pre.regs, pre.sp, pre.pc]

    if isinstance(subject, str):
        subject = FAMILIES[subject]
    if isinstance(subject, Instr):
        kind = "encoding"
        instr, family = subject, None
        shape, fields = normalize(subject)
        field_decls: list[Term] = []
        constraints: list[Term] = []
    else:
        kind = "class"
        instr, family = None, subject
        shape, fields, field_decls, constraints = _class_fields(subject)
    decls.extend(field_decls)

    assumptions: list[Term] = []
    assumptions.extend(ambient_assumptions(layout))
    assumptions.extend(invariant_terms(pre, layout))
    if shape in ("branch", "cbranch"):
        bits = 26 if shape == "branch" else 19
        simm = fields["simm26" if shape == "branch" else "simm19"]
        disp = _SYM_OPS.scaled(simm, bits)
        target_off = T.add(T.sub(pre.pc, layout.base), disp)
        assumptions.append(T.ult(target_off, c64(SANDBOX_SIZE)))
    assumptions.extend(constraints)

    ns = NameSupply()
    result = sym_step(pre, (shape, fields), layout, ns)
    assumptions.extend(result.assumptions)
    decls.extend(result.fresh)

    goal_parts: list[Term] = []
    for p in result.paths:
        safe = T.land(T.lnot(T.lor(p.bad_exec, p.bad_mem)),
                      T.lor(p.terminated,
                            T.land(*invariant_terms(p.post, layout))))
        goal_parts.append(T.implies(p.guard, safe))
    goal = T.land(*goal_parts)

    return Obligation(subject_id(subject), profile, kind, shape, fields,
                      tuple(decls), tuple(assumptions), goal, result, layout,
                      pre, instr, family)


def emit_smt(obl: Obligation, vacuity: bool = False) -> str:
    """Deterministic SMT-LIB2 text for an obligation.

    vacuity drops the goal so sat confirms the assumptions are consistent.
    """
    lines = ["(set-logic QF_BV)", "(set-option :produce-models true)",
             f"; subject {obl.subject_id} profile {obl.profile.name}"
             + (" vacuity" if vacuity else "")]
    for d in obl.decls:
        sort = "Bool" if d.width == T.BOOL else f"(_ BitVec {d.width})"
        lines.append(f"(declare-fun {d.attr} () {sort})")
    for a in obl.assumptions:
        lines.append(f"(assert {T.render(a)})")
    if not vacuity:
        lines.append(f"(assert (not {T.render(obl.goal)}))")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


_MODEL_RE = re.compile(
    r"\(define-fun\s+([^\s()]+)\s+\(\)\s+(?:\(\s*_\s+BitVec\s+\d+\s*\)|Bool)"
    r"\s+(#x[0-9a-fA-F]+|#b[01]+|true|false)\s*\)", re.S)


def parse_model(text: str) -> dict[str, int]:
    model: dict[str, int] = {}
    for name, value in _MODEL_RE.findall(text):
        if value == "true":
            model[name] = 1
        elif value == "false":
            model[name] = 0
        elif value.startswith("#x"):
            model[name] = int(value[2:], 16)
        else:
            model[name] = int(value[2:], 2)
    return model


def check(script: str, solver_cmd: str,
          timeout: float | None = None) -> tuple[str, dict[str, int] | None]:
    """Run one script through one solver process.

    Returns ("sat"|"unsat"|"unknown", model). The command gets the script
    on stdin and must print the verdict on the first line of stdout.
    """
    try:
        proc = subprocess.run(shlex.split(solver_cmd), input=script.encode(),
                              stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                              timeout=timeout)
    except FileNotFoundError as e:
        raise ProverError(f"solver command not found: {e}") from None
    except subprocess.TimeoutExpired:
        return "unknown", None
    out = proc.stdout.decode(errors="replace")
    return _interpret(out, proc.stderr.decode(errors="replace"))


def _interpret(out: str, err: str = "") -> tuple[str, dict[str, int] | None]:
    lines = out.splitlines()
    verdict = lines[0].strip() if lines else ""
    if verdict == "sat":
        return "sat", parse_model("\n".join(lines[1:]))
    if verdict in ("unsat", "unknown"):
        return verdict, None
    raise ProverError(f"unexpected solver output {verdict!r}"
                      + (f" (stderr: {err.strip()})" if err.strip() else ""))


class PersistentSolver:
    """One long-lived solver process fed many scripts.

    Framing uses plain SMT-LIB: script, (echo sentinel), (reset). Works
    with any incremental stdin solver (z3 -in, the bundled wrapper).
    """

    _SENTINEL = "::frame-done::"

    def __init__(self, solver_cmd: str) -> None:
        self.cmd = solver_cmd
        try:
            self.proc = subprocess.Popen(
                shlex.split(solver_cmd), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
        except FileNotFoundError as e:
            raise ProverError(f"solver command not found: {e}") from None

    def check(self, script: str) -> tuple[str, dict[str, int] | None]:
        p = self.proc
        if p.poll() is not None:
            raise ProverError("solver process exited")
        p.stdin.write(script)
        if not script.endswith("\n"):
            p.stdin.write("\n")
        p.stdin.write(f'(echo "{self._SENTINEL}")\n(reset)\n')
        p.stdin.flush()
        out: list[str] = []
        while True:
            line = p.stdout.readline()
            if not line:
                raise ProverError("solver process closed its output")
            if line.rstrip("\n") == self._SENTINEL:
                break
            out.append(line)
        return _interpret("".join(out))

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.kill()

    def __enter__(self) -> "PersistentSolver":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class Counterexample:
    model: dict[str, int]
    instr: Instr
    pre: MachineState
    violated: str            # BadRead | BadWrite | BadExec
                             # | InvariantBroken{n}
    replay: str              # Confirmed | Refuted


@dataclass(frozen=True)
class Report:
    subject_id: str
    profile: str
    kind: str
    verdict: str             # Proved | Refuted | Unknown
    counterexample: Counterexample | None = None
    solver_ms: float = 0.0

    def same_result(self, other: "Report") -> bool:
        """Equality ignoring wall-clock timing."""
        return (self.subject_id == other.subject_id
                and self.profile == other.profile
                and self.kind == other.kind
                and self.verdict == other.verdict
                and self.counterexample == other.counterexample)


def _model_value(model: dict[str, int], name: str) -> int:
    if name not in model:
        raise ProverError(f"incomplete model: no value for {name!r}")
    return model[name]


class _OracleMemory:
    """Byte memory seeded from a counterexample model; unconstrained
    bytes read as zero."""

    def __init__(self, seed: dict[int, int]) -> None:
        self.bytes = dict(seed)

    def load_byte(self, addr: int) -> int:
        return self.bytes.get(addr, 0)

    def store_byte(self, addr: int, value: int) -> None:
        self.bytes[addr] = value & 0xFF


def instr_from_fields(shape: str, a: dict[str, int]) -> Instr:
    """Inverse of semantics.normalize: shape plus concrete fields."""
    if shape == "sys":
        return Instr("udf" if a["payload"] == 0 else "nop")
    if shape == "alu_reg":
        return Instr("alu_reg", f=ALU_OPS[a["f"]], rd=a["rd"], rn=a["rn"],
                     rm=a["rm"])
    if shape == "alu_imm":
        return Instr("alu_imm", f=ALU_IMM_OPS[a["f"]], rd=a["rd"],
                     rn=a["rn"], imm12=a["imm12"])
    if shape == "add_uxtw":
        return Instr("add_uxtw", rd=a["rd"], rn=a["rn"], rm=a["rm"])
    if shape in ("load", "store"):
        return Instr(shape, size=SIZES[a["sz"]], mode=MODES[a["mode"]],
                     rt=a["rt"], rn=a["rn"], simm9=a["simm9"])
    if shape == "branch":
        return Instr("b" if a["link"] == 0 else "bl", simm26=a["simm26"])
    if shape == "cbranch":
        return Instr("cbz" if a["pol"] == 0 else "cbnz", rt=a["rt"],
                     simm19=a["simm19"])
    if shape == "br":
        return Instr("br", rn=a["rn"])
    raise ValueError(f"unknown shape {shape!r}")


def ground_instr(obl: Obligation, model: dict[str, int]) -> Instr:
    """The concrete instruction a model picked from a class subject."""
    if obl.instr is not None:
        return obl.instr
    signed = {f.name for f in obl.family.fields if f.signed}
    resolved = {}
    for name, v in obl.fields.items():
        if isinstance(v, Term):
            raw = _model_value(model, name)
            resolved[name] = sext(raw, v.width) if name in signed else raw
        else:
            resolved[name] = v
    return instr_from_fields(obl.shape, resolved)


def replay(obl: Obligation, model: dict[str, int]) -> Counterexample:
    """Re-run a sat model on the concrete engine and classify the
    violation it demonstrates."""
    instr = ground_instr(obl, model)
    base = _model_value(model, "base")
    code_end = _model_value(model, "code_end")
    rt = tuple(_model_value(model, f"rt{i}") for i in range(3))
    layout = Layout(base, code_end, obl.profile)
    pre = MachineState(tuple(_model_value(model, f"r{i}")
                             for i in range(NREGS)),
                       _model_value(model, "sp"), _model_value(model, "pc"))

    seed: dict[int, int] = {}
    for i, r in enumerate(rt):
        for b in range(8):
            seed[(base + 8 * i + b) & ((1 << 64) - 1)] = (r >> (8 * b)) & 0xFF
    env = dict(model)
    for p in obl.result.paths:
        if p.kind != "flow":
            continue
        for ev, s in zip(p.events, obl.result.fresh):
            if T.evaluate(ev.active, env):
                seed[T.evaluate(ev.addr, env)] = model.get(s.attr, 0)
    memory = _OracleMemory(seed)

    outcome, events = step(pre, instr, layout, rt, memory)
    violated = ""
    for ev in events:
        if not layout.in_modeled(ev.addr):
            violated = "BadWrite" if ev.kind == "write" else "BadRead"
            break
    if not violated and isinstance(outcome, Fault) and outcome.kind == "BadPc":
        if outcome.outside_model:
            violated = "BadExec"
    if not violated and isinstance(outcome, Next):
        conj = invariant_conjuncts(outcome.state, layout, rt)
        for i, ok in enumerate(conj, start=1):
            if not ok:
                violated = f"InvariantBroken{{{i}}}"
                break
    return Counterexample(model, instr, pre, violated or "none",
                          "Confirmed" if violated else "Refuted")


def prove(subject, profile: Profile, solver_cmd: str,
          timeout: float | None = None, solver=None) -> Report:
    """Build, solve, and (on sat) replay one subject's obligation."""
    obl = build_obligation(subject, profile)
    script = emit_smt(obl)
    t0 = time.monotonic()
    if solver is not None:
        status, model = solver.check(script)
    else:
        status, model = check(script, solver_cmd, timeout)
    ms = (time.monotonic() - t0) * 1e3
    if status == "unsat":
        return Report(obl.subject_id, profile.name, obl.kind, "Proved",
                      solver_ms=ms)
    if status == "unknown":
        return Report(obl.subject_id, profile.name, obl.kind, "Unknown",
                      solver_ms=ms)
    cex = replay(obl, model)
    return Report(obl.subject_id, profile.name, obl.kind, "Refuted", cex, ms)


def check_vacuity(subject, profile: Profile, solver_cmd: str,
                  solver=None) -> bool:
    """True when the obligation's assumptions are satisfiable (a vacuous
    proof would otherwise slip through)."""
    obl = build_obligation(subject, profile)
    script = emit_smt(obl, vacuity=True)
    if solver is not None:
        status, _ = solver.check(script)
    else:
        status, _ = check(script, solver_cmd)
    return status == "sat"


def prove_range(subjects, profile: Profile, solver_cmd: str,
                workers: int = 4) -> list[Report]:
    """Prove many subjects, preserving input order in the results.

    Workers run independently, each owning one persistent solver process;
    reports are deterministic across worker counts (timing aside).
    """
    subjects = list(subjects)
    if not subjects:
        return []
    workers = max(1, min(workers, len(subjects)))
    local = threading.local()
    solvers: list[PersistentSolver] = []
    lock = threading.Lock()

    def run(subject) -> Report:
        solver = getattr(local, "solver", None)
        if solver is None:
            solver = PersistentSolver(solver_cmd)
            with lock:
                solvers.append(solver)
            local.solver = solver
        return prove(subject, profile, solver_cmd, solver=solver)

    try:
        if workers == 1:
            return [run(s) for s in subjects]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, subjects))
    finally:
        for s in solvers:
            s.close()
