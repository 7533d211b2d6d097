"""JIT-compiled backend for the exhaustive encoding sweeps.

Scalar per-word logic compiled with numba; mirrors _kernels_numpy exactly.
Importing this module requires numba (kernels.py handles the fallback).
"""
from __future__ import annotations

import numpy as np
from numba import njit

UNDEC = 255
N_CLASSES = 11


@njit(cache=True, inline="always")
def _sext(v, bits):
    sign = 1 << (bits - 1)
    v &= (1 << bits) - 1
    if v & sign:
        v -= 1 << bits
    return v


@njit(cache=True)
def classify_word(w, offset):
    """(class index or -1, accepted, canonical re-encoding) for one word."""
    w = w & 0xFFFFFFFF
    op = w >> 28
    f = (w >> 24) & 0xF
    rd = (w >> 19) & 31
    rn = (w >> 14) & 31
    rd_free = rd != 18 and rd != 21 and rd != 30 and rd != 31
    if op == 0:
        payload = w & 0x0FFFFFFF
        if payload <= 1:
            return 0, True, w
        return -1, False, w
    if op == 1:
        if f > 4 or w & 0x1FF:
            return -1, False, w
        rm = (w >> 9) & 31
        canon = (1 << 28) | (f << 24) | (rd << 19) | (rn << 14) | (rm << 9)
        return 1, rd_free, canon
    if op == 2:
        if f > 1 or w & 3:
            return -1, False, w
        imm12 = (w >> 2) & 0xFFF
        canon = (2 << 28) | (f << 24) | (rd << 19) | (rn << 14) | (imm12 << 2)
        return 2, rd_free, canon
    if op == 3:
        if f or w & 0x1FF:
            return -1, False, w
        rm = (w >> 9) & 31
        guard = (rd == 18 or rd == 30 or rd == 31) and rn == 21
        canon = (3 << 28) | (rd << 19) | (rn << 14) | (rm << 9)
        return 3, rd_free or guard, canon
    if op == 4 or op == 5:
        if rd == 31 or w & 0x1F:
            return -1, False, w
        sz = (w >> 26) & 3
        mode = (w >> 24) & 3
        simm9 = _sext(w >> 5, 9)
        if mode == 0 and simm9 != 0:
            return -1, False, w
        base_ok = (mode == 0 and rn == 18) or (mode != 0 and rn == 31)
        if op == 4:
            tramp = (mode == 1 and rd == 30 and rn == 21 and sz == 3
                     and (simm9 == 0 or simm9 == 8 or simm9 == 16))
            ok = (base_ok and rd != 18 and rd != 21 and rd != 30) or tramp
        else:
            ok = base_ok
        canon = ((op << 28) | (sz << 26) | (mode << 24) | (rd << 19)
                 | (rn << 14) | ((simm9 & 0x1FF) << 5))
        return op, ok, canon
    if op == 6 or op == 7:
        if (w >> 26) & 3:
            return -1, False, w
        t = offset + _sext(w, 26) * 4
        canon = (op << 28) | (w & 0x3FFFFFF)
        return op, 0 <= t < (1 << 32), canon
    if op == 8 or op == 9:
        if f or rd == 31:
            return -1, False, w
        t = offset + _sext(w, 19) * 4
        canon = (op << 28) | (rd << 19) | (w & 0x7FFFF)
        return op, 0 <= t < (1 << 32), canon
    if op == 10:
        if w & 0x0FF83FFF:
            return -1, False, w
        return 10, rn == 18 or rn == 30, (10 << 28) | (rn << 14)
    return -1, False, w


@njit(cache=True)
def classify_block(words, offset):
    cls = np.full(words.shape[0], UNDEC, np.uint8)
    acc = np.zeros(words.shape[0], np.bool_)
    for i in range(words.shape[0]):
        c, ok, _ = classify_word(np.int64(words[i]), offset)
        if c >= 0:
            cls[i] = c
            acc[i] = ok
    return cls, acc


@njit(cache=True)
def reencode_block(words):
    out = np.empty(words.shape[0], np.uint32)
    for i in range(words.shape[0]):
        _, _, canon = classify_word(np.int64(words[i]), 0)
        out[i] = canon
    return out


@njit(cache=True)
def sweep_range(start, count, offset):
    """Same contract as the numpy backend's sweep_range."""
    dec = np.zeros(N_CLASSES, np.int64)
    acc = np.zeros(N_CLASSES, np.int64)
    mismatch = 0
    for i in range(count):
        w = (start + i) & 0xFFFFFFFF
        c, ok, canon = classify_word(w, offset)
        if c >= 0:
            dec[c] += 1
            if ok:
                acc[c] += 1
            if canon != w:
                mismatch += 1
    return dec, acc, mismatch
