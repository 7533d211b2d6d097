"""Shared fixtures: external SMT solver discovery.

Resolution order for the solver command:
  1. SFI_SOLVER_CMD environment variable,
  2. a `z3` binary on PATH,
  3. the bundled Node solver (tools/smt_solver.mjs) when node and its
     node_modules are present.
Tests that need a solver skip cleanly when none is found; the acceptance
gate fails instead, since its criteria cannot be attested without one.
"""
from __future__ import annotations

import os
import shutil
import subprocess
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent


def discover_solver() -> str | None:
    cmd = os.environ.get("SFI_SOLVER_CMD")
    if cmd:
        return cmd
    if shutil.which("z3"):
        return "z3 -in"
    script = REPO / "tools" / "smt_solver.mjs"
    if (shutil.which("node") and script.exists()
            and (REPO / "tools" / "node_modules").is_dir()):
        # --serve keeps the process usable both one-shot (EOF flush) and
        # incrementally (sentinel framing), like `z3 -in`
        return f"node {script} --serve"
    return None


_SOLVER = discover_solver()
_PROBED: dict[str, bool] = {}


def solver_works(cmd: str) -> bool:
    """One cached end-to-end probe: trivial sat query must answer sat."""
    if cmd not in _PROBED:
        try:
            out = subprocess.run(
                cmd.split(), input="(set-logic QF_BV)(check-sat)\n",
                capture_output=True, text=True, timeout=120)
            _PROBED[cmd] = "sat" in out.stdout
        except (OSError, subprocess.TimeoutExpired):
            _PROBED[cmd] = False
    return _PROBED[cmd]


@pytest.fixture(scope="session")
def solver_cmd() -> str:
    if _SOLVER is None:
        pytest.skip("no SMT solver available (set SFI_SOLVER_CMD, install "
                    "z3, or run `npm install` in tools/)")
    if not solver_works(_SOLVER):
        pytest.skip(f"solver command {_SOLVER!r} failed its probe")
    return _SOLVER


@pytest.fixture(scope="session")
def required_solver_cmd() -> str:
    """Like solver_cmd but failing, for the acceptance gate."""
    if _SOLVER is None or not solver_works(_SOLVER):
        pytest.fail("acceptance criteria need an SMT solver: set "
                    "SFI_SOLVER_CMD, install z3, or run `npm install` "
                    "in tools/")
    return _SOLVER
