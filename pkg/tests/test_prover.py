"""Obligation builder, SMT emission, solver driver, and replay tests."""
import concurrent.futures
import re
from pathlib import Path

import pytest

from sbx64.isa import Instr
from sbx64.mutations import MUTATIONS, run_mutation
from sbx64.policy import DENSE, FAMILIES, SPARSE
from sbx64.prover import (Obligation, PersistentSolver, ProverError, Report,
                          build_obligation, check, check_vacuity, emit_smt,
                          parse_model, prove, prove_range, replay)

GOLDEN = Path(__file__).parent / "golden"

BASE_DECLS = (["base", "code_end", "rt0", "rt1", "rt2"]
              + [f"r{i}" for i in range(31)] + ["sp", "pc"])


# --- obligation structure -------------------------------------------------

def test_declaration_names_and_order_for_ground_subject():
    obl = build_obligation(Instr("nop"), SPARSE)
    assert [d.attr for d in obl.decls] == BASE_DECLS
    assert obl.kind == "encoding" and obl.subject_id == "00000001"


def test_declaration_names_for_class_subject():
    obl = build_obligation("add_uxtw_guard", SPARSE)
    # base decls, then the family's free fields (rd has 3 choices, rm 32;
    # rn is pinned to r21 so it is not declared)
    assert [d.attr for d in obl.decls] == BASE_DECLS + ["rd", "rm"]
    assert obl.kind == "class" and obl.subject_id == "add_uxtw_guard"


def test_loaded_bytes_become_declarations():
    obl = build_obligation(Instr("load", size=4, mode="base", rt=0, rn=18),
                           SPARSE)
    names = [d.attr for d in obl.decls]
    assert names[: len(BASE_DECLS)] == BASE_DECLS
    assert len([n for n in names if n.startswith("m")]) == 4


def test_trampoline_obligation_mentions_rt_symbols():
    text = emit_smt(build_obligation("load_rtcall", SPARSE))
    assert "rt1" in text and "rt2" in text


def test_branch_class_constrains_target_offset():
    obl = build_obligation("branch", SPARSE)
    # the whitelist premise for direct branches: target inside the sandbox
    assert any("simm26" in emit_smt(
        Obligation(obl.subject_id, obl.profile, obl.kind, obl.shape,
                   obl.fields, obl.decls, (a,), obl.goal, obl.result,
                   obl.layout, obl.pre, obl.instr, obl.family))
               for a in obl.assumptions)


# --- emission determinism ---------------------------------------------------

def test_emit_smt_is_deterministic():
    for subject in ("alu_reg", "load_sp",
                    Instr("store", size=2, mode="pre", rt=5, rn=31,
                          simm9=-16)):
        texts = {emit_smt(build_obligation(subject, DENSE))
                 for _ in range(3)}
        assert len(texts) == 1


def test_emit_smt_golden_files():
    cases = [
        ("class_add_uxtw_guard_sparse.smt2", "add_uxtw_guard", SPARSE),
        ("encoding_ldr_post_sp_sparse.smt2",
         Instr("load", size=8, mode="post", rt=0, rn=31, simm9=-8), SPARSE),
        ("class_store_sp_dense.smt2", "store_sp", DENSE),
    ]
    for fname, subject, profile in cases:
        want = (GOLDEN / fname).read_text()
        got = emit_smt(build_obligation(subject, profile))
        assert got == want, f"{fname} drifted"


def test_emit_smt_is_wellformed():
    text = emit_smt(build_obligation("cbranch", SPARSE))
    assert text.startswith("(set-logic QF_BV)")
    assert text.count("(") == text.count(")")
    assert text.rstrip().endswith("(get-model)")
    assert "(check-sat)" in text
    vac = emit_smt(build_obligation("cbranch", SPARSE), vacuity=True)
    # the vacuity variant drops exactly one assertion: the negated goal
    assert text.count("\n(assert ") == vac.count("\n(assert ") + 1


# --- model parsing -----------------------------------------------------------

def test_parse_model():
    text = """sat
(model
  (define-fun base () (_ BitVec 64) #x0000000100000000)
  (define-fun rd () (_ BitVec 5) #b10010)
  (define-fun flag () Bool true)
)"""
    assert parse_model(text) == {"base": 1 << 32, "rd": 18, "flag": 1}


# --- solver driver ----------------------------------------------------------

TRIVIAL_SAT = ("(set-logic QF_BV)(declare-fun x () (_ BitVec 8))"
               "(assert (= x #x2a))(check-sat)(get-model)\n")
TRIVIAL_UNSAT = ("(set-logic QF_BV)(declare-fun x () (_ BitVec 8))"
                 "(assert (distinct x x))(check-sat)\n")


def test_check_oneshot(solver_cmd):
    status, model = check(TRIVIAL_SAT, solver_cmd)
    assert status == "sat" and model["x"] == 0x2A
    status, model = check(TRIVIAL_UNSAT, solver_cmd)
    assert status == "unsat" and model is None


def test_check_missing_solver():
    with pytest.raises(ProverError):
        check(TRIVIAL_SAT, "/no/such/solver-binary")


def test_persistent_solver_many_frames(solver_cmd):
    with PersistentSolver(solver_cmd) as solver:
        for _ in range(3):
            assert solver.check(TRIVIAL_SAT)[0] == "sat"
            assert solver.check(TRIVIAL_UNSAT)[0] == "unsat"


def test_persistent_matches_oneshot_on_obligations(solver_cmd):
    subjects = ["br_reg", Instr("alu_reg", f="xor", rd=4, rn=4, rm=4)]
    with PersistentSolver(solver_cmd) as solver:
        for subject in subjects:
            script = emit_smt(build_obligation(subject, SPARSE))
            assert solver.check(script)[0] == check(script, solver_cmd)[0]


# --- proving ----------------------------------------------------------------

def test_prove_class_subjects(solver_cmd):
    with PersistentSolver(solver_cmd) as solver:
        for name in ("sys", "br_reg", "add_uxtw_guard", "load_rtcall"):
            report = prove(name, SPARSE, solver_cmd, solver=solver)
            assert report.verdict == "Proved", (name, report)
            assert report.counterexample is None


def test_prove_ground_encoding(solver_cmd):
    report = prove(Instr("store", size=8, mode="post", rt=9, rn=31,
                         simm9=-256), DENSE, solver_cmd)
    assert report.verdict == "Proved"
    assert report.kind == "encoding"


def test_vacuity_every_family_is_satisfiable(solver_cmd):
    """Guards against vacuous proofs: each family's assumptions admit at
    least one model."""
    with PersistentSolver(solver_cmd) as solver:
        for name in FAMILIES:
            assert check_vacuity(name, SPARSE, solver_cmd, solver=solver), \
                f"assumptions of {name} are unsatisfiable"


def test_mutation_is_refuted_and_replay_confirms(solver_cmd):
    report = run_mutation(MUTATIONS["M1"], solver_cmd)
    assert report.verdict == "Refuted"
    ce = report.counterexample
    assert ce.replay == "Confirmed"
    assert ce.violated == "InvariantBroken{1}"
    assert ce.instr.kind in ("alu_reg",) and ce.instr.rd == 21


def test_replay_rejects_fabricated_model(solver_cmd):
    # a model that does not actually break anything must be Refuted by the
    # concrete replay, not trusted
    obl = build_obligation("alu_reg", SPARSE)
    base = 1 << 32
    model = {"base": base, "code_end": base + 8192,
             "rt0": 1 << 50, "rt1": (1 << 50) + 8, "rt2": (1 << 50) + 16,
             "sp": base, "pc": base + 4096,
             "f": 0, "rd": 0, "rn": 1, "rm": 2}
    model.update({f"r{i}": base for i in range(31)})
    ce = replay(obl, model)
    assert ce.replay == "Refuted"


def test_prove_range_deterministic_across_workers(solver_cmd):
    subjects = ["sys", "br_reg", "load_rtcall", "add_uxtw_guard",
                Instr("nop"), Instr("br", rn=18)]
    one = prove_range(subjects, SPARSE, solver_cmd, workers=1)
    four = prove_range(subjects, SPARSE, solver_cmd, workers=4)
    assert [r.subject_id for r in one] == [r.subject_id for r in four]
    assert all(a.same_result(b) for a, b in zip(one, four))
    assert all(r.verdict == "Proved" for r in one)
