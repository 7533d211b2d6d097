"""Seeded whitelist and profile relaxations for exercising the prover.

Each mutation loosens exactly one rule the verifier normally enforces and
packages the loosened rule as a class subject. The prover must find a
model (sat) for every one of them, and replaying the model on the
concrete engine must confirm a real violation; a mutation that proves
safe, or a model that does not replay, indicates a soundness bug.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .policy import FAMILIES, SPARSE, Family, Field, Profile
from .prover import Report, prove


@dataclass(frozen=True)
class Mutation:
    name: str
    description: str
    family: Family
    profile: Profile


def _fields(family_name: str, **override: Field) -> tuple[Field, ...]:
    """The named family's fields with some replaced (or appended)."""
    out = list(FAMILIES[family_name].fields)
    names = [f.name for f in out]
    for name, f in override.items():
        assert f.name == name
        if name in names:
            out[names.index(name)] = f
        else:
            out.append(f)
    return tuple(out)


def _catalog() -> tuple[Mutation, ...]:
    reg_all = tuple(range(32))
    return (
        Mutation(
            "M1", "ALU register write to the sandbox base register r21",
            Family("alu_reg", _fields("alu_reg", rd=Field("rd", 5, (21,)))),
            SPARSE),
        Mutation(
            "M2", "arbitrary r21-based load into the link register r30",
            Family("load_rtcall", _fields(
                "load_rtcall",
                sz=Field("sz", 2, (0, 1, 2, 3)),
                mode=Field("mode", 2, (1, 2, 3)),
                simm9=Field("simm9", 9, None, signed=True))),
            SPARSE),
        Mutation(
            "M3", "base-mode store through a register other than r18",
            Family("store_base", _fields("store_base",
                                         rn=Field("rn", 5, reg_all))),
            SPARSE),
        Mutation(
            "M4", "guard instruction sourcing a register other than r21",
            Family("add_uxtw_guard", _fields("add_uxtw_guard",
                                             rn=Field("rn", 5, reg_all))),
            SPARSE),
        Mutation(
            "M5", "dense profile with the guard shrunk to the slack size",
            FAMILIES["store_sp"],
            Profile("dense", guard=1 << 13, slack=1 << 13)),
        Mutation(
            "M6", "indirect branch through an arbitrary register",
            Family("br_reg", _fields("br_reg", rn=Field("rn", 5, reg_all))),
            SPARSE),
    )


MUTATIONS: dict[str, Mutation] = {m.name: m for m in _catalog()}


def run_mutation(mutation: Mutation, solver_cmd: str,
                 timeout: float | None = None, solver=None) -> Report:
    """Prove the mutated subject; a correct pipeline reports Refuted with
    a Confirmed replay."""
    report = prove(mutation.family, mutation.profile, solver_cmd,
                   timeout=timeout, solver=solver)
    return replace(report, subject_id=mutation.name)
