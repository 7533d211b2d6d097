"""Binary image verification: the production-facing whitelist check.

The verifier walks the image's code section one 4-byte word at a time and
applies the stateless whitelist at each offset. Every decision looks at a
single word plus its own offset — never at neighbours — so the accepted
set is exactly the set of subjects the prover certifies.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from .isa import Image, decode, disassemble, unpack_image
from .policy import PROFILES, RT_PAGE, Profile, accepts


@dataclass(frozen=True)
class Violation:
    offset: int      # byte offset within the code section
    reason: str
    text: str        # disassembly, or 0x-hex for undecodable words


@dataclass(frozen=True)
class VerifyReport:
    ok: bool
    violations: tuple[Violation, ...]

    def to_json(self) -> dict:
        return {"ok": self.ok,
                "violations": [{"offset": v.offset, "reason": v.reason,
                                "text": v.text} for v in self.violations]}


def verify_image(image: bytes | Image,
                 profile: Profile | None = None) -> VerifyReport:
    """Check every code word independently against the whitelist.

    Accepts a packed image (malformed headers raise the image format's
    parse error) or an already-unpacked Image. The profile defaults to
    the one named in the image header.
    """
    if isinstance(image, (bytes, bytearray, memoryview)):
        image = unpack_image(bytes(image))
    if profile is None:
        profile = PROFILES[image.profile]

    violations: list[Violation] = []
    if image.entry % 4 or not 0 <= image.entry < len(image.code):
        violations.append(Violation(image.entry, "BadEntry",
                                    f"entry 0x{image.entry:x}"))
    for i in range(0, len(image.code), 4):
        (word,) = struct.unpack_from("<I", image.code, i)
        instr = decode(word)
        verdict = accepts(instr, RT_PAGE + i, profile)
        if not verdict.accept:
            text = disassemble(instr) if instr else f"0x{word:08X}"
            violations.append(Violation(i, verdict.reason, text))
    return VerifyReport(not violations, tuple(violations))


def format_report(report: VerifyReport) -> str:
    if report.ok:
        return "ok"
    lines = [f"{len(report.violations)} violation(s):"]
    lines += [f"  +0x{v.offset:04x}  {v.reason:28s} {v.text}"
              for v in report.violations]
    return "\n".join(lines)
