"""Backend dispatch for the exhaustive encoding sweeps.

Two interchangeable backends implement classify_block / reencode_block /
sweep_range: a numba-JIT scalar kernel and a vectorized pure-numpy
fallback. Selection order:

    1. SBX64_BACKEND environment variable ("numba" or "numpy")
    2. numba when importable, else numpy

The sweeps themselves (full 2^32 census, full round-trip, constructible
enumeration) live here and run on whichever backend is selected.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_numpy
from .isa import CLASSES
from .policy import REF_OFFSET, CensusReport, Profile

_numba_import_error: Exception | None = None
try:
    from . import _kernels_numba
except ImportError as e:  # pragma: no cover - environment dependent
    _kernels_numba = None
    _numba_import_error = e

UNDEC = _kernels_numpy.UNDEC


def backend_name() -> str:
    """Resolve the active backend from the environment."""
    choice = os.environ.get("SBX64_BACKEND", "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if _kernels_numba is None:
            raise RuntimeError(
                f"SBX64_BACKEND=numba but numba is unavailable: "
                f"{_numba_import_error}")
        return "numba"
    if choice:
        raise RuntimeError(f"unknown SBX64_BACKEND {choice!r}")
    return "numpy" if _kernels_numba is None else "numba"


def _backend(name: str | None = None):
    name = name or backend_name()
    return _kernels_numba if name == "numba" else _kernels_numpy


def classify_block(words: np.ndarray, offset: int, backend: str | None = None):
    return _backend(backend).classify_block(words, offset)


def reencode_block(words: np.ndarray, backend: str | None = None):
    return _backend(backend).reencode_block(words)


def sweep_range(start: int, count: int, offset: int,
                backend: str | None = None):
    return _backend(backend).sweep_range(start, count, offset)


_FULL = 1 << 32
_STEP = 1 << 26


def census_sweep(profile: Profile, offset: int = REF_OFFSET,
                 backend: str | None = None) -> CensusReport:
    """Exhaustive census: classify all 2^32 words at one code offset."""
    dec = np.zeros(11, np.int64)
    acc = np.zeros(11, np.int64)
    for start in range(0, _FULL, _STEP):
        d, a, _ = sweep_range(start, _STEP, offset, backend)
        dec += d
        acc += a
    return CensusReport(profile.name, offset,
                        dict(zip(CLASSES, dec.tolist())),
                        dict(zip(CLASSES, acc.tolist())))


def roundtrip_sweep(backend: str | None = None) -> int:
    """decode-then-encode identity over all 2^32 words: returns the number
    of decodable words whose canonical re-encoding differs."""
    mismatch = 0
    for start in range(0, _FULL, _STEP):
        _, _, m = sweep_range(start, _STEP, 0, backend)
        mismatch += int(m)
    return mismatch


def _constructible_chunks():
    """Yield (class index, words) covering every encodable instruction
    exactly once, built from field ranges independently of the decoder."""
    a = np.arange
    yield 0, np.array([0, 1], np.uint32)                       # sys
    rd = a(32, dtype=np.int64)
    rn = a(32, dtype=np.int64)
    rm = a(32, dtype=np.int64)
    grid = (rd[:, None, None] << 19 | rn[None, :, None] << 14
            | rm[None, None, :] << 9).ravel()
    for f in range(5):                                         # alu_reg
        yield 1, ((1 << 28) | (f << 24) | grid).astype(np.uint32)
    imm = a(4096, dtype=np.int64)
    for f in range(2):                                         # alu_imm
        for d in range(32):
            block = ((2 << 28) | (f << 24) | (d << 19)
                     | (rn[:, None] << 14) | (imm[None, :] << 2))
            yield 2, block.ravel().astype(np.uint32)
    yield 3, ((3 << 28) | grid).astype(np.uint32)              # add_uxtw
    simm9 = a(512, dtype=np.int64)
    for op, cls in ((4, 4), (5, 5)):                           # load, store
        for sz in range(4):
            head = (op << 28) | (sz << 26)
            base = (head | (a(31, dtype=np.int64)[:, None] << 19)
                    | (rn[None, :] << 14))
            yield cls, base.ravel().astype(np.uint32)          # mode 0
            for mode in (1, 2, 3):
                for rt in range(31):
                    block = (head | (mode << 24) | (rt << 19)
                             | (rn[:, None] << 14) | (simm9[None, :] << 5))
                    yield cls, block.ravel().astype(np.uint32)
    for op, cls in ((6, 6), (7, 7)):                           # b, bl
        for start in range(0, 1 << 26, 1 << 22):
            yield cls, ((op << 28)
                        | a(start, start + (1 << 22), dtype=np.int64)
                        ).astype(np.uint32)
    s19 = a(1 << 19, dtype=np.int64)
    for op, cls in ((8, 8), (9, 9)):                           # cbz, cbnz
        for rt in range(31):
            yield cls, ((op << 28) | (rt << 19) | s19).astype(np.uint32)
    yield 10, ((10 << 28) | (rn << 14)).astype(np.uint32)      # br


def encode_decode_sweep(backend: str | None = None) -> dict[str, int]:
    """encode-then-decode identity over every constructible instruction.

    Every generated word must decode into its own class and re-encode to
    itself; per-class totals are returned for comparison against the
    decodable census (equality means the constructible and decodable sets
    coincide). Raises AssertionError on any violation.
    """
    counts = dict.fromkeys(CLASSES, 0)
    for cls_idx, words in _constructible_chunks():
        cls, _ = classify_block(words, REF_OFFSET, backend)
        if not (cls == cls_idx).all():
            bad = words[cls != cls_idx][:4]
            raise AssertionError(
                f"constructible words misclassified: {[hex(b) for b in bad]}")
        canon = reencode_block(words, backend)
        if not (canon == words).all():
            bad = words[canon != words][:4]
            raise AssertionError(
                f"constructible words not canonical: {[hex(b) for b in bad]}")
        counts[CLASSES[cls_idx]] += len(words)
    return counts
