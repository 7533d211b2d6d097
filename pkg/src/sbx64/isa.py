"""SBX64 instruction set: decoding, encoding, disassembly, assembly.

Words are 32-bit little-endian. The opcode lives in w[31:28]:

    0  sys       payload w[27:0]: 0 = udf, 1 = nop, others undecodable
    1  alu_reg   f w[27:24] in {add,sub,and,orr,xor}; rd w[23:19], rn w[18:14],
                 rm w[13:9]; w[8:0] zero
    2  alu_imm   f w[27:24] in {add,sub}; rd, rn as above; imm12 w[13:2];
                 w[1:0] zero
    3  add_uxtw  w[27:24] zero; rd, rn, rm as alu_reg; w[8:0] zero
    4  load      sz w[27:26] (bytes = 1<<sz), mode w[25:24] (base, offset,
    5  store     pre, post); rt w[23:19] (31 undecodable); rn w[18:14];
                 simm9 w[13:5] signed; w[4:0] zero; base mode requires simm9=0
    6  b         w[27:26] zero; simm26 w[25:0] signed, in words
    7  bl
    8  cbz       w[27:24] zero; rt w[23:19] (31 undecodable); simm19 w[18:0]
    9  cbnz      signed, in words
    10 br        rn w[18:14]; every other non-opcode bit zero
    11-15        undecodable

Register index 31 reads and writes sp in ALU and addressing positions.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

MASK64 = (1 << 64) - 1
MASK32 = (1 << 32) - 1

ALU_OPS = ("add", "sub", "and", "orr", "xor")
ALU_IMM_OPS = ("add", "sub")
MODES = ("base", "offset", "pre", "post")
SIZES = (1, 2, 4, 8)

# census / classification order, undecodable words get no class
CLASSES = ("sys", "alu_reg", "alu_imm", "add_uxtw", "load", "store",
           "b", "bl", "cbz", "cbnz", "br")

REG_ADDR = 18   # reserved sandbox addressing register
REG_BASE = 21   # reserved sandbox base register
REG_LINK = 30   # link register
REG_SP = 31     # stack pointer alias in register fields


def sext(value: int, bits: int) -> int:
    """Interpret the low `bits` of value as two's complement."""
    value &= (1 << bits) - 1
    if value & (1 << (bits - 1)):
        value -= 1 << bits
    return value


@dataclass(frozen=True)
class Instr:
    """One decoded instruction; unused fields stay at their defaults."""
    kind: str           # "udf","nop","alu_reg","alu_imm","add_uxtw","load",
                        # "store","b","bl","cbz","cbnz","br"
    f: str = ""         # alu operation name
    rd: int = 0
    rn: int = 0
    rm: int = 0
    rt: int = 0
    imm12: int = 0
    size: int = 0       # access width in bytes: 1, 2, 4, 8
    mode: str = ""      # "base", "offset", "pre", "post"
    simm9: int = 0
    simm26: int = 0
    simm19: int = 0

    @property
    def cls(self) -> str:
        """Census class of this instruction."""
        return "sys" if self.kind in ("udf", "nop") else self.kind


def decode(word: int) -> Instr | None:
    """Decode a 32-bit word; None when no instruction has this encoding."""
    word &= MASK32
    op = word >> 28
    if op == 0:
        payload = word & 0x0FFFFFFF
        if payload == 0:
            return Instr("udf")
        if payload == 1:
            return Instr("nop")
        return None
    if op == 1:
        f = (word >> 24) & 0xF
        if f >= len(ALU_OPS) or word & 0x1FF:
            return None
        return Instr("alu_reg", f=ALU_OPS[f], rd=(word >> 19) & 31,
                     rn=(word >> 14) & 31, rm=(word >> 9) & 31)
    if op == 2:
        f = (word >> 24) & 0xF
        if f >= len(ALU_IMM_OPS) or word & 0x3:
            return None
        return Instr("alu_imm", f=ALU_IMM_OPS[f], rd=(word >> 19) & 31,
                     rn=(word >> 14) & 31, imm12=(word >> 2) & 0xFFF)
    if op == 3:
        if (word >> 24) & 0xF or word & 0x1FF:
            return None
        return Instr("add_uxtw", rd=(word >> 19) & 31, rn=(word >> 14) & 31,
                     rm=(word >> 9) & 31)
    if op in (4, 5):
        rt = (word >> 19) & 31
        if rt == 31 or word & 0x1F:
            return None
        mode = (word >> 24) & 3
        simm9 = sext(word >> 5, 9)
        if mode == 0 and simm9 != 0:
            return None
        return Instr("load" if op == 4 else "store",
                     size=1 << ((word >> 26) & 3), mode=MODES[mode], rt=rt,
                     rn=(word >> 14) & 31, simm9=simm9)
    if op in (6, 7):
        if (word >> 26) & 3:
            return None
        return Instr("b" if op == 6 else "bl", simm26=sext(word, 26))
    if op in (8, 9):
        if (word >> 24) & 0xF:
            return None
        rt = (word >> 19) & 31
        if rt == 31:
            return None
        return Instr("cbz" if op == 8 else "cbnz", rt=rt,
                     simm19=sext(word, 19))
    if op == 10:
        if word & 0x0FF83FFF:
            return None
        return Instr("br", rn=(word >> 14) & 31)
    return None


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise ValueError(f"cannot encode: {what}")


def encode(instr: Instr) -> int:
    """Encode an instruction to its unique 32-bit word.

    Raises ValueError when a field is out of range for the layout.
    """
    k = instr.kind
    if k == "udf":
        return 0x00000000
    if k == "nop":
        return 0x00000001
    if k in ("alu_reg", "add_uxtw"):
        for r in (instr.rd, instr.rn, instr.rm):
            _check(0 <= r <= 31, f"register {r} out of range")
        if k == "alu_reg":
            _check(instr.f in ALU_OPS, f"alu operation {instr.f!r}")
            op = (1 << 28) | (ALU_OPS.index(instr.f) << 24)
        else:
            op = 3 << 28
        return op | (instr.rd << 19) | (instr.rn << 14) | (instr.rm << 9)
    if k == "alu_imm":
        _check(instr.f in ALU_IMM_OPS, f"immediate alu operation {instr.f!r}")
        for r in (instr.rd, instr.rn):
            _check(0 <= r <= 31, f"register {r} out of range")
        _check(0 <= instr.imm12 < 4096, f"imm12 {instr.imm12} out of range")
        return ((2 << 28) | (ALU_IMM_OPS.index(instr.f) << 24)
                | (instr.rd << 19) | (instr.rn << 14) | (instr.imm12 << 2))
    if k in ("load", "store"):
        _check(instr.size in SIZES, f"access size {instr.size}")
        _check(instr.mode in MODES, f"addressing mode {instr.mode!r}")
        _check(0 <= instr.rt <= 30, f"transfer register {instr.rt}")
        _check(0 <= instr.rn <= 31, f"base register {instr.rn}")
        _check(-256 <= instr.simm9 <= 255, f"simm9 {instr.simm9} out of range")
        _check(instr.mode != "base" or instr.simm9 == 0,
               "base mode requires simm9 = 0")
        op = 4 if k == "load" else 5
        return ((op << 28) | (SIZES.index(instr.size) << 26)
                | (MODES.index(instr.mode) << 24) | (instr.rt << 19)
                | (instr.rn << 14) | ((instr.simm9 & 0x1FF) << 5))
    if k in ("b", "bl"):
        _check(-(1 << 25) <= instr.simm26 < (1 << 25),
               f"simm26 {instr.simm26} out of range")
        return ((6 if k == "b" else 7) << 28) | (instr.simm26 & 0x3FFFFFF)
    if k in ("cbz", "cbnz"):
        _check(0 <= instr.rt <= 30, f"test register {instr.rt}")
        _check(-(1 << 18) <= instr.simm19 < (1 << 18),
               f"simm19 {instr.simm19} out of range")
        return (((8 if k == "cbz" else 9) << 28) | (instr.rt << 19)
                | (instr.simm19 & 0x7FFFF))
    if k == "br":
        _check(0 <= instr.rn <= 31, f"register {instr.rn} out of range")
        return (10 << 28) | (instr.rn << 14)
    raise ValueError(f"cannot encode: unknown kind {k!r}")


def _xname(r: int) -> str:
    return "sp" if r == 31 else f"x{r}"


def _wname(r: int) -> str:
    return "wsp" if r == 31 else f"w{r}"


_LDST_MNEMONIC = {(True, 1): "ldrb", (True, 2): "ldrh", (True, 4): "ldrw",
                  (True, 8): "ldr", (False, 1): "strb", (False, 2): "strh",
                  (False, 4): "strw", (False, 8): "str"}


def disassemble(instr: Instr) -> str:
    """Canonical text for one instruction; parse_line inverts it."""
    k = instr.kind
    if k in ("udf", "nop"):
        return k
    if k == "alu_reg":
        return (f"{instr.f} {_xname(instr.rd)}, {_xname(instr.rn)}, "
                f"{_xname(instr.rm)}")
    if k == "alu_imm":
        return (f"{instr.f} {_xname(instr.rd)}, {_xname(instr.rn)}, "
                f"#{instr.imm12}")
    if k == "add_uxtw":
        return (f"add {_xname(instr.rd)}, {_xname(instr.rn)}, "
                f"{_wname(instr.rm)}, uxtw")
    if k in ("load", "store"):
        m = _LDST_MNEMONIC[(k == "load", instr.size)]
        rt, rn = _xname(instr.rt), _xname(instr.rn)
        if instr.mode == "base":
            return f"{m} {rt}, [{rn}]"
        if instr.mode == "offset":
            return f"{m} {rt}, [{rn}, #{instr.simm9}]"
        if instr.mode == "pre":
            return f"{m} {rt}, [{rn}, #{instr.simm9}]!"
        return f"{m} {rt}, [{rn}], #{instr.simm9}"
    if k in ("b", "bl"):
        return f"{k} #{instr.simm26 * 4}"
    if k in ("cbz", "cbnz"):
        return f"{k} {_xname(instr.rt)}, #{instr.simm19 * 4}"
    if k == "br":
        return f"br {_xname(instr.rn)}"
    raise ValueError(f"cannot disassemble kind {k!r}")


class AsmError(ValueError):
    """Raised for malformed assembly text or unresolvable programs."""


@dataclass(frozen=True)
class SourceLine:
    """One parsed line of assembly.

    kind is "empty", "label", "word", or "instr". Branch instructions may
    carry a symbolic target name instead of a resolved displacement.
    """
    kind: str
    label: str = ""
    value: int = 0
    instr: Instr | None = None
    target: str = ""


def _parse_reg(tok: str, allow_w: bool = False) -> int:
    t = tok.strip().lower()
    names = {"sp": 31, "wsp": 31} if allow_w else {"sp": 31}
    if t in names:
        return names[t]
    prefix = ("x", "w") if allow_w else ("x",)
    if t[:1] in prefix and t[1:].isdigit():
        r = int(t[1:])
        if 0 <= r <= 30:
            return r
    raise AsmError(f"bad register {tok!r}")


def _parse_int(tok: str) -> int:
    t = tok.strip().lower().lstrip("#")
    try:
        return int(t, 0)
    except ValueError:
        raise AsmError(f"bad integer {tok!r}") from None


def _branch_target(tok: str) -> tuple[int, str]:
    """Numeric byte displacement or symbolic label name."""
    t = tok.strip()
    if t.startswith("#") or t.lstrip("+-").isdigit():
        disp = _parse_int(t)
        if disp % 4:
            raise AsmError(f"branch displacement {disp} not a multiple of 4")
        return disp // 4, ""
    if not t.replace("_", "").replace(".", "").isalnum() or t[:1].isdigit():
        raise AsmError(f"bad branch target {tok!r}")
    return 0, t


_SIZE_OF_SUFFIX = {"b": 1, "h": 2, "w": 4, "": 8}


def parse_line(text: str) -> SourceLine:
    """Parse one line of assembly text.

    Accepts instructions in disassembly syntax plus the aliases
    `mov xd, xn` (add #0) and `ret` (br x30), label definitions `name:`,
    and `.word <value>` literal data. Comments start with `;` or `//`.
    """
    line = " ".join(text.split(";")[0].split("//")[0].split())
    if not line:
        return SourceLine("empty")
    if line.endswith(":"):
        name = line[:-1].strip()
        if not name or not name.replace("_", "").isalnum() or name[0].isdigit():
            raise AsmError(f"bad label {line!r}")
        return SourceLine("label", label=name)
    mnem, _, rest = line.partition(" ")
    mnem = mnem.lower()
    args = [a.strip() for a in rest.split(",")] if rest.strip() else []
    if mnem == ".word":
        if len(args) != 1:
            raise AsmError(".word takes one value")
        return SourceLine("word", value=_parse_int(args[0]) & MASK32)
    if mnem in ("udf", "nop"):
        if args:
            raise AsmError(f"{mnem} takes no operands")
        return SourceLine("instr", instr=Instr(mnem))
    if mnem == "ret":
        if args:
            raise AsmError("ret takes no operands")
        return SourceLine("instr", instr=Instr("br", rn=REG_LINK))
    if mnem == "mov":
        if len(args) != 2:
            raise AsmError("mov takes two registers")
        return SourceLine("instr", instr=Instr(
            "alu_imm", f="add", rd=_parse_reg(args[0]),
            rn=_parse_reg(args[1]), imm12=0))
    if mnem == "add" and len(args) == 4:
        if args[3].lower() != "uxtw":
            raise AsmError(f"bad extend {args[3]!r}")
        return SourceLine("instr", instr=Instr(
            "add_uxtw", rd=_parse_reg(args[0]), rn=_parse_reg(args[1]),
            rm=_parse_reg(args[2], allow_w=True)))
    if mnem in ALU_OPS:
        if len(args) != 3:
            raise AsmError(f"{mnem} takes three operands")
        rd, rn = _parse_reg(args[0]), _parse_reg(args[1])
        if args[2].startswith("#"):
            if mnem not in ALU_IMM_OPS:
                raise AsmError(f"{mnem} has no immediate form")
            imm = _parse_int(args[2])
            if not 0 <= imm < 4096:
                raise AsmError(f"immediate {imm} out of range")
            return SourceLine("instr", instr=Instr(
                "alu_imm", f=mnem, rd=rd, rn=rn, imm12=imm))
        return SourceLine("instr", instr=Instr(
            "alu_reg", f=mnem, rd=rd, rn=rn, rm=_parse_reg(args[2])))
    if mnem in ("b", "bl"):
        if len(args) != 1:
            raise AsmError(f"{mnem} takes one target")
        disp, target = _branch_target(args[0])
        return SourceLine("instr", target=target,
                          instr=Instr(mnem, simm26=disp))
    if mnem in ("cbz", "cbnz"):
        if len(args) != 2:
            raise AsmError(f"{mnem} takes a register and a target")
        disp, target = _branch_target(args[1])
        return SourceLine("instr", target=target, instr=Instr(
            mnem, rt=_parse_reg(args[0]), simm19=disp))
    if mnem == "br":
        if len(args) != 1:
            raise AsmError("br takes one register")
        return SourceLine("instr", instr=Instr("br", rn=_parse_reg(args[0])))
    if mnem.startswith(("ldr", "str")):
        suffix = mnem[3:]
        if suffix not in _SIZE_OF_SUFFIX:
            raise AsmError(f"unknown mnemonic {mnem!r}")
        kind = "load" if mnem.startswith("ldr") else "store"
        size = _SIZE_OF_SUFFIX[suffix]
        if len(args) < 2:
            raise AsmError(f"{mnem} takes a register and an address")
        rt = _parse_reg(args[0])
        if rt == 31:
            raise AsmError("sp is not a transfer register")
        addr = ", ".join(args[1:])
        return SourceLine("instr", instr=_parse_address(kind, size, rt, addr))
    raise AsmError(f"unknown mnemonic {mnem!r}")


def _parse_address(kind: str, size: int, rt: int, addr: str) -> Instr:
    a = addr.strip()
    if a.startswith("[") and a.endswith("]"):
        inner = a[1:-1]
        if "," in inner:
            rn_tok, imm_tok = inner.split(",", 1)
            return Instr(kind, size=size, mode="offset", rt=rt,
                         rn=_parse_reg(rn_tok), simm9=_imm9(imm_tok))
        return Instr(kind, size=size, mode="base", rt=rt,
                     rn=_parse_reg(inner))
    if a.startswith("[") and a.endswith("]!"):
        inner = a[1:-2]
        if "," not in inner:
            raise AsmError(f"pre-index needs an offset: {addr!r}")
        rn_tok, imm_tok = inner.split(",", 1)
        return Instr(kind, size=size, mode="pre", rt=rt,
                     rn=_parse_reg(rn_tok), simm9=_imm9(imm_tok))
    if a.startswith("[") and "]" in a:
        base_part, _, imm_tok = a.partition("]")
        inner = base_part[1:]
        imm_tok = imm_tok.lstrip(", ").strip()
        if not imm_tok:
            raise AsmError(f"post-index needs an offset: {addr!r}")
        return Instr(kind, size=size, mode="post", rt=rt,
                     rn=_parse_reg(inner), simm9=_imm9(imm_tok))
    raise AsmError(f"bad address {addr!r}")


def _imm9(tok: str) -> int:
    imm = _parse_int(tok)
    if not -256 <= imm <= 255:
        raise AsmError(f"offset {imm} out of range")
    return imm


def parse_program(text: str) -> list[SourceLine]:
    """Parse a whole program, reporting errors with line numbers."""
    out = []
    for i, raw in enumerate(text.splitlines(), start=1):
        try:
            line = parse_line(raw)
        except AsmError as e:
            raise AsmError(f"line {i}: {e}") from None
        if line.kind != "empty":
            out.append(line)
    return out


def assemble(text: str | list[SourceLine]) -> tuple[bytes, dict[str, int]]:
    """Two-pass assembly: text (or parsed lines) to code bytes plus the
    label-to-byte-offset table."""
    lines = parse_program(text) if isinstance(text, str) else text
    labels: dict[str, int] = {}
    offset = 0
    for line in lines:
        if line.kind == "label":
            if line.label in labels:
                raise AsmError(f"duplicate label {line.label!r}")
            labels[line.label] = offset
        elif line.kind in ("word", "instr"):
            offset += 4
    code = bytearray()
    offset = 0
    for line in lines:
        if line.kind == "word":
            code += struct.pack("<I", line.value)
            offset += 4
        elif line.kind == "instr":
            instr = line.instr
            if line.target:
                if line.target not in labels:
                    raise AsmError(f"undefined label {line.target!r}")
                disp = (labels[line.target] - offset) // 4
                if instr.kind in ("b", "bl"):
                    instr = Instr(instr.kind, simm26=disp)
                else:
                    instr = Instr(instr.kind, rt=instr.rt, simm19=disp)
            try:
                code += struct.pack("<I", encode(instr))
            except ValueError as e:
                raise AsmError(str(e)) from None
            offset += 4
    return bytes(code), labels


IMAGE_MAGIC = b"SBX1"
PROFILE_IDS = {"sparse": 0, "dense": 1}
PROFILE_NAMES = {v: k for k, v in PROFILE_IDS.items()}


class ImageError(ValueError):
    """Raised for malformed binary images."""


@dataclass(frozen=True)
class Image:
    """A loadable sandbox image: profile name, entry offset, code bytes."""
    profile: str
    entry: int
    code: bytes


def pack_image(image: Image) -> bytes:
    """Serialize: magic, profile id byte, 3 reserved zero bytes, u32 entry,
    u32 code length, code."""
    if image.profile not in PROFILE_IDS:
        raise ImageError(f"unknown profile {image.profile!r}")
    if len(image.code) % 4:
        raise ImageError("code length must be a multiple of 4")
    if image.entry % 4 or not (0 <= image.entry < max(len(image.code), 1)):
        raise ImageError(f"entry offset {image.entry} invalid")
    return (IMAGE_MAGIC + bytes([PROFILE_IDS[image.profile], 0, 0, 0])
            + struct.pack("<II", image.entry, len(image.code)) + image.code)


def unpack_image(data: bytes) -> Image:
    """Parse and validate a serialized image."""
    if len(data) < 16 or data[:4] != IMAGE_MAGIC:
        raise ImageError("bad magic")
    if data[4] not in PROFILE_NAMES:
        raise ImageError(f"unknown profile id {data[4]}")
    if data[5:8] != b"\x00\x00\x00":
        raise ImageError("reserved bytes must be zero")
    entry, length = struct.unpack_from("<II", data, 8)
    if length % 4 or 16 + length != len(data):
        raise ImageError("bad code length")
    if entry % 4 or entry >= max(length, 1):
        raise ImageError(f"entry offset {entry} invalid")
    return Image(PROFILE_NAMES[data[4]], entry, data[16:])
