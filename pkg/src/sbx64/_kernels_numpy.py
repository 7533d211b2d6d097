"""Vectorized numpy backend for the exhaustive encoding sweeps.

Implements the same word-level classification as isa.decode + policy.accepts
over uint32 arrays. Class indices follow isa.CLASSES; 255 marks undecodable
words. Field math stays in 32-bit arrays; only branch-target checks widen
to int64.
"""
from __future__ import annotations

import numpy as np

UNDEC = 255
N_CLASSES = 11


def _analyze(w: np.ndarray, offset: int):
    """One pass over a uint32 word array: class, verdict, canonical word."""
    u = np.uint32
    op = (w >> u(28)).astype(np.uint8)
    f = (w >> u(24)) & u(0xF)
    rd = (w >> u(19)) & u(31)
    rn = (w >> u(14)) & u(31)
    rm = (w >> u(9)) & u(31)
    sz = (w >> u(26)) & u(3)
    mode = (w >> u(24)) & u(3)
    simm9 = (((w >> u(5)) & u(0x1FF)).astype(np.int32))
    simm9 -= (simm9 & 0x100) << 1

    cls = np.full(w.shape, UNDEC, np.uint8)
    acc = np.zeros(w.shape, bool)
    canon = w.copy()
    rd_free = (rd != 18) & (rd != 21) & (rd != 30) & (rd != 31)

    m = (op == 0) & (w & u(0x0FFFFFFF) <= u(1))
    cls[m] = 0
    acc |= m

    m = (op == 1) & (f <= 4) & (w & u(0x1FF) == 0)
    cls[m] = 1
    acc |= m & rd_free
    regs = (rd << u(19)) | (rn << u(14)) | (rm << u(9))
    canon[m] = (u(1 << 28) | (f << u(24)) | regs)[m]

    m = (op == 2) & (f <= 1) & (w & u(3) == 0)
    cls[m] = 2
    acc |= m & rd_free
    canon[m] = (u(2 << 28) | (f << u(24)) | (rd << u(19)) | (rn << u(14))
                | (w & u(0x3FFC)))[m]

    m = (op == 3) & (f == 0) & (w & u(0x1FF) == 0)
    cls[m] = 3
    guard = ((rd == 18) | (rd == 30) | (rd == 31)) & (rn == 21)
    acc |= m & (rd_free | guard)
    canon[m] = (u(3 << 28) | regs)[m]

    shape_ok = (rd != 31) & (w & u(0x1F) == 0) & ~((mode == 0) & (simm9 != 0))
    base_ok = ((mode == 0) & (rn == 18)) | ((mode != 0) & (rn == 31))
    mem_canon = ((op.astype(u) << u(28)) | (sz << u(26)) | (mode << u(24))
                 | (rd << u(19)) | (rn << u(14)) | (w & u(0x3FE0)))
    m = (op == 4) & shape_ok
    cls[m] = 4
    tramp = ((mode == 1) & (rd == 30) & (rn == 21) & (sz == 3)
             & ((simm9 == 0) | (simm9 == 8) | (simm9 == 16)))
    rt_free = (rd != 18) & (rd != 21) & (rd != 30)
    acc |= m & ((base_ok & rt_free) | tramp)
    canon[m] = mem_canon[m]
    m = (op == 5) & shape_ok
    cls[m] = 5
    acc |= m & base_ok
    canon[m] = mem_canon[m]

    simm26 = (w & u(0x3FFFFFF)).astype(np.int64)
    simm26 -= (simm26 & (1 << 25)) << 1
    in26 = (offset + simm26 * 4 >= 0) & (offset + simm26 * 4 < 1 << 32)
    b_shape = (w >> u(26)) & u(3) == 0
    for bop in (6, 7):
        m = (op == bop) & b_shape
        cls[m] = bop
        acc |= m & in26
        canon[m] = ((u(bop) << u(28)) | (w & u(0x3FFFFFF)))[m]

    simm19 = (w & u(0x7FFFF)).astype(np.int64)
    simm19 -= (simm19 & (1 << 18)) << 1
    in19 = (offset + simm19 * 4 >= 0) & (offset + simm19 * 4 < 1 << 32)
    for cop in (8, 9):
        m = (op == cop) & (f == 0) & (rd != 31)
        cls[m] = cop
        acc |= m & in19
        canon[m] = ((u(cop) << u(28)) | (rd << u(19)) | (w & u(0x7FFFF)))[m]

    m = (op == 10) & (w & u(0x0FF83FFF) == 0)
    cls[m] = 10
    acc |= m & ((rn == 18) | (rn == 30))
    canon[m] = (u(10 << 28) | (rn << u(14)))[m]

    acc &= cls != UNDEC
    return cls, acc, canon


def classify_block(words: np.ndarray, offset: int):
    """Per-word census class (uint8, 255 = undecodable) and whitelist
    verdict (bool) for instructions placed at byte `offset`."""
    cls, acc, _ = _analyze(words.astype(np.uint32, copy=False), offset)
    return cls, acc


def reencode_block(words: np.ndarray) -> np.ndarray:
    """Canonical re-encoding of each decodable word from its extracted
    fields; undecodable words pass through unchanged."""
    _, _, canon = _analyze(words.astype(np.uint32, copy=False), 0)
    return canon


def sweep_range(start: int, count: int, offset: int, chunk: int = 1 << 21):
    """Classify `count` consecutive words from `start` (mod 2^32).

    Returns (decodable counts, accepted counts) as int64[11] plus the
    number of decodable words whose canonical re-encoding differs.
    """
    dec = np.zeros(N_CLASSES, np.int64)
    acc = np.zeros(N_CLASSES, np.int64)
    mismatch = 0
    done = 0
    while done < count:
        n = min(chunk, count - done)
        words = (np.arange(start + done, start + done + n, dtype=np.int64)
                 & 0xFFFFFFFF).astype(np.uint32)
        cls, ok, canon = _analyze(words, offset)
        decodable = cls != UNDEC
        dec += np.bincount(cls[decodable], minlength=256)[:N_CLASSES]
        acc += np.bincount(cls[ok], minlength=256)[:N_CLASSES]
        mismatch += int(np.count_nonzero((canon != words) & decodable))
        done += n
    return dec, acc, mismatch
