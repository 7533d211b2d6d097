"""Command-line interface tests: every subcommand, every exit code."""
import io
import json
import types

import pytest

from sbx64.cli import EXIT_FOUND, EXIT_INFRA, EXIT_OK, EXIT_USAGE, main

HELLO = """
start:
    xor x0, x0, x0
    add x0, x0, #4095
    add x0, x0, #4095
    add x0, x0, #2
    xor x1, x1, x1
    add x1, x1, #104
    add x18, x21, w0, uxtw
    strb x1, [x18]
    sub x1, x1, #3
    add x0, x0, #1
    add x18, x21, w0, uxtw
    strb x1, [x18]
    add x1, x1, #7
    add x0, x0, #1
    add x18, x21, w0, uxtw
    strb x1, [x18]
    add x0, x0, #1
    add x18, x21, w0, uxtw
    strb x1, [x18]
    add x1, x1, #3
    add x0, x0, #1
    add x18, x21, w0, uxtw
    strb x1, [x18]
    sub x0, x0, #4
    xor x1, x1, x1
    add x1, x1, #5
    xor x9, x9, x9
    add x9, x9, #4095
    add x9, x9, #125
    ldr x30, [x21, #8]
    br x30
resume:
    xor x0, x0, x0
    ldr x30, [x21, #0]
    br x30
"""

UNSAFE = "str x1, [x0]\nnop\n"


@pytest.fixture
def hello_image(tmp_path):
    src = tmp_path / "hello.s"
    src.write_text(HELLO)
    img = tmp_path / "hello.img"
    assert main(["asm", str(src), "-o", str(img)]) == EXIT_OK
    return img


# ---------------------------------------------------------------------------
# decode


def test_decode(capsys):
    assert main(["decode", "0x30954A00"]) == EXIT_OK
    assert capsys.readouterr().out == "add x18, x21, w5, uxtw\n"


def test_decode_multiple_words(capsys):
    assert main(["decode", "0x00000001", "0xFFFFFFFF", "1"]) == EXIT_OK
    assert capsys.readouterr().out == "nop\nundecodable\nnop\n"


def test_decode_rejects_garbage():
    assert main(["decode", "zz"]) == EXIT_USAGE
    assert main(["decode", "0x123456789"]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# asm / disasm


def test_asm_disasm_round_trip(tmp_path, hello_image, capsys):
    assert main(["disasm", str(hello_image)]) == EXIT_OK
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert lines[0] == "; profile sparse, entry 0x0"
    assert lines[1].startswith("+0x0000  ")
    # the listing reassembles to the identical image
    listing = tmp_path / "listing.s"
    listing.write_text("\n".join(line.split("  ", 2)[2]
                                 for line in lines[1:]))
    img2 = tmp_path / "again.img"
    assert main(["asm", str(listing), "-o", str(img2)]) == EXIT_OK
    assert img2.read_bytes() == hello_image.read_bytes()


def test_asm_entry_label_and_number(tmp_path, capsys):
    src = tmp_path / "p.s"
    src.write_text("nop\nlate:\nudf\n")
    img = tmp_path / "p.img"
    assert main(["asm", str(src), "-o", str(img), "--entry", "late",
                 "-v"]) == EXIT_OK
    assert "entry 0x4" in capsys.readouterr().err
    assert main(["asm", str(src), "-o", str(img), "--entry", "4"]) == EXIT_OK
    assert main(["asm", str(src), "-o", str(img),
                 "--entry", "nonsense"]) == EXIT_USAGE
    assert main(["asm", str(src), "-o", str(img),
                 "--entry", "2"]) == EXIT_USAGE      # unaligned


def test_asm_reports_parse_errors(tmp_path, capsys):
    src = tmp_path / "bad.s"
    src.write_text("mov x1, #17\n")            # immediate moves don't exist
    assert main(["asm", str(src), "-o", str(tmp_path / "x.img")]) \
        == EXIT_FOUND
    assert "line 1" in capsys.readouterr().err


def test_disasm_rejects_bad_image(tmp_path, capsys):
    bad = tmp_path / "bad.img"
    bad.write_bytes(b"not an image at all")
    assert main(["disasm", str(bad)]) == EXIT_FOUND
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# verify


def test_verify_ok(hello_image, capsys):
    assert main(["verify", str(hello_image)]) == EXIT_OK
    assert capsys.readouterr().out == "ok\n"


def test_verify_ok_json(hello_image, capsys):
    assert main(["verify", str(hello_image), "--json"]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data == {"ok": True, "violations": []}


def test_verify_violations(tmp_path, capsys):
    src = tmp_path / "u.s"
    src.write_text(UNSAFE)
    img = tmp_path / "u.img"
    assert main(["asm", str(src), "-o", str(img)]) == EXIT_OK
    assert main(["verify", str(img)]) == EXIT_FOUND
    out = capsys.readouterr().out
    assert "1 violation(s):" in out
    assert "BadAddressBase" in out

    assert main(["verify", str(img), "--json"]) == EXIT_FOUND
    data = json.loads(capsys.readouterr().out)
    assert data["ok"] is False
    assert data["violations"][0]["offset"] == 0
    assert data["violations"][0]["reason"] == "BadAddressBase"
    assert data["violations"][0]["text"] == "str x1, [x0]"


def test_verify_profile_file(tmp_path, hello_image):
    profile = tmp_path / "custom.profile"
    profile.write_text("name=custom\nguard=1048576\nslack=1024\n"
                       "rt_page=4096\n")
    assert main(["verify", str(hello_image),
                 "--profile", f"file:{profile}"]) == EXIT_OK
    assert main(["verify", str(hello_image),
                 "--profile", "bogus"]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# rewrite


def test_rewrite_to_stdout(tmp_path, capsys):
    src = tmp_path / "u.s"
    src.write_text(UNSAFE)
    assert main(["rewrite", str(src)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out == "add x18, x21, w0, uxtw\nstr x1, [x18]\nnop\n"


def test_rewrite_to_file_then_verify(tmp_path):
    src = tmp_path / "u.s"
    src.write_text(UNSAFE)
    safe = tmp_path / "safe.s"
    img = tmp_path / "safe.img"
    assert main(["rewrite", str(src), "-o", str(safe)]) == EXIT_OK
    assert main(["asm", str(safe), "-o", str(img)]) == EXIT_OK
    assert main(["verify", str(img)]) == EXIT_OK


def test_rewrite_rejects_reserved_register_use(tmp_path, capsys):
    src = tmp_path / "r.s"
    src.write_text("add x21, x0, #1\n")
    assert main(["rewrite", str(src)]) == EXIT_FOUND
    assert "reserved register" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# run


def test_run_hello(hello_image, capsysbinary):
    assert main(["run", str(hello_image)]) == EXIT_OK
    captured = capsysbinary.readouterr()
    assert captured.out == b"hello"
    assert b"Exit{0}" in captured.err


def test_run_trace(hello_image, capsys):
    assert main(["run", str(hello_image), "--trace"]) == EXIT_OK
    records = [json.loads(line)
               for line in capsys.readouterr().out.splitlines()]
    assert records[0]["call"] == "write"
    assert records[0]["len"] == 5
    assert bytes.fromhex(records[0]["data"]) == b"hello"
    assert records[1] == {"call": "exit", "code": 0}


def test_run_at_alternate_base(hello_image, capsysbinary):
    assert main(["run", str(hello_image), "--base",
                 str(5 << 32)]) == EXIT_OK
    assert capsysbinary.readouterr().out == b"hello"


def test_run_fault_exits_nonzero(tmp_path, capsysbinary):
    src = tmp_path / "r.s"
    src.write_text("""
    xor x17, x17, x17
    add sp, x21, w17, uxtw
    ldr x0, [sp], #-8
    ldr x0, [sp], #-8
    """)
    img = tmp_path / "r.img"
    assert main(["asm", str(src), "-o", str(img)]) == EXIT_OK
    assert main(["run", str(img)]) == EXIT_FOUND
    err = capsysbinary.readouterr().err
    assert b"Fault{MemUnmapped}" in err
    assert b"addr=0xfffffff8" in err


def test_run_step_limit(tmp_path, capsysbinary):
    src = tmp_path / "loop.s"
    src.write_text("l:\nb l\n")
    img = tmp_path / "loop.img"
    assert main(["asm", str(src), "-o", str(img)]) == EXIT_OK
    assert main(["run", str(img), "--max-steps", "50"]) == EXIT_FOUND
    assert b"StepLimit after 50 steps" in capsysbinary.readouterr().err


def test_run_refuses_unverified_image(tmp_path, capsysbinary):
    src = tmp_path / "u.s"
    src.write_text(UNSAFE)
    img = tmp_path / "u.img"
    assert main(["asm", str(src), "-o", str(img)]) == EXIT_OK
    assert main(["run", str(img)]) == EXIT_FOUND
    assert b"rejected by the verifier" in capsysbinary.readouterr().err


def test_run_stdin_feeds_read_call(tmp_path, capsysbinary, monkeypatch):
    # eleven words precede `resume`, so it sits at pc offset 4096 + 44
    src = tmp_path / "echo.s"
    src.write_text("""
    xor x0, x0, x0
    add x0, x0, #4095
    add x0, x0, #4095
    add x0, x0, #2
    xor x1, x1, x1
    add x1, x1, #4
    xor x9, x9, x9
    add x9, x9, #4095
    add x9, x9, #45
    ldr x30, [x21, #16]
    br x30
resume:
    ldr x30, [x21, #0]
    br x30
    """)
    img = tmp_path / "echo.img"
    assert main(["asm", str(src), "-o", str(img)]) == EXIT_OK
    monkeypatch.setattr("sys.stdin",
                        types.SimpleNamespace(buffer=io.BytesIO(b"abc")))
    # the read call transfers 3 bytes; r0 carries the count to exit
    assert main(["run", str(img), "--stdin"]) == EXIT_OK
    assert b"Exit{3}" in capsysbinary.readouterr().err


# ---------------------------------------------------------------------------
# fuzz


def test_fuzz_clean(capsys):
    assert main(["fuzz", "--seed", "3", "--iters", "300"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("seed=3 iterations=300 profile=sparse")
    assert "violations: 0" in out


def test_fuzz_mutation_found(capsys):
    assert main(["fuzz", "--seed", "3", "--iters", "300",
                 "--mutation", "M1"]) == EXIT_FOUND
    assert "InvariantBroken{1}" in capsys.readouterr().out


def test_fuzz_unknown_mutation():
    assert main(["fuzz", "--mutation", "M9"]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# census


def test_census_partial(capsys):
    assert main(["census", "--limit", "65536", "--backend",
                 "numpy"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "partial census of first 65536 words (numpy)" in out
    # words 0 and 1 (udf, nop) are the only decodable sys encodings there
    assert "decodable=2 accepted=2" in out


def test_census_rejects_unknown_backend(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["census", "--backend", "pony"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# emit-smt


def test_emit_smt_class(capsys):
    assert main(["emit-smt", "--class", "alu_reg"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("(set-logic QF_BV)")
    assert "; subject alu_reg profile sparse" in out
    assert out.rstrip().endswith("(get-model)")


def test_emit_smt_word(tmp_path, capsys):
    target = tmp_path / "obligation.smt2"
    assert main(["emit-smt", "0x30954A00", "-o", str(target),
                 "--profile", "dense"]) == EXIT_OK
    text = target.read_text()
    assert "; subject 30954a00 profile dense" in text


def test_emit_smt_vacuity_drops_the_goal(capsys):
    assert main(["emit-smt", "--class", "sys"]) == EXIT_OK
    plain = capsys.readouterr().out
    assert main(["emit-smt", "--class", "sys", "--vacuity"]) == EXIT_OK
    vac = capsys.readouterr().out
    assert plain.count("\n(assert ") == vac.count("\n(assert ") + 1


def test_emit_smt_usage_errors():
    assert main(["emit-smt"]) == EXIT_USAGE
    assert main(["emit-smt", "--class", "nonsense"]) == EXIT_USAGE
    assert main(["emit-smt", "0x00000002"]) == EXIT_USAGE   # undecodable


# ---------------------------------------------------------------------------
# prove


def test_prove_requires_solver(monkeypatch):
    monkeypatch.delenv("SFI_SOLVER_CMD", raising=False)
    assert main(["prove", "0x30954A00"]) == EXIT_USAGE


def test_prove_usage_errors(monkeypatch):
    monkeypatch.setenv("SFI_SOLVER_CMD", "true")
    assert main(["prove"]) == EXIT_USAGE
    assert main(["prove", "--class", "nonsense"]) == EXIT_USAGE
    assert main(["prove", "0x00000002"]) == EXIT_USAGE
    assert main(["prove", "0x1", "--class", "sys"]) == EXIT_USAGE


def test_prove_infrastructure_failure(monkeypatch, capsys):
    monkeypatch.setenv("SFI_SOLVER_CMD", "/no/such/solver")
    assert main(["prove", "0x30954A00"]) == EXIT_INFRA
    assert "solver failure" in capsys.readouterr().err


def test_prove_ground_word(solver_cmd, capsys):
    assert main(["prove", "0x30954A00", "--solver-cmd",
                 solver_cmd]) == EXIT_OK
    out = capsys.readouterr().out
    fields = out.split()
    assert fields[0] == "30954a00"
    assert fields[1] == "sparse" and fields[2] == "Proved"
    assert out.rstrip().endswith("ms")


def test_prove_class(solver_cmd, capsys):
    assert main(["prove", "--class", "br_reg", "--profile", "dense",
                 "--solver-cmd", solver_cmd]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.split()[:3] == ["br_reg", "dense", "Proved"]


def test_prove_mutation_refuted(solver_cmd, capsys):
    assert main(["prove", "--class", "M1", "--solver-cmd",
                 solver_cmd]) == EXIT_FOUND
    out = capsys.readouterr().out
    assert "M1" in out and "Refuted" in out
    assert "InvariantBroken{1}" in out
    assert "replay Confirmed" in out


# ---------------------------------------------------------------------------
# top level


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_missing_file_is_infrastructure():
    assert main(["run", "/no/such/file.img"]) == EXIT_INFRA
    assert main(["disasm", "/no/such/file.img"]) == EXIT_INFRA
    assert main(["asm", "/no/such/file.s", "-o", "/tmp/x.img"]) == EXIT_INFRA
