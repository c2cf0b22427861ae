"""Microcode instruction set: encoding, decoding, assembler, disassembler.

Every instruction is one 16-bit word.  Bits 15:13 select the opcode:

=======  =========  =============================================
opcode   mnemonic   fields (msb..lsb below the opcode)
=======  =========  =============================================
0        array      func[12:9] ra[8:6] rb[5:3] rd[2:0]
1        ldi        rd[12:10] imm10[9:0] (zero-extended)
2        addi       rd[12:10] imm10[9:0] (two's complement)
3        loop       rs[12:10] body_len[9:0] (>= 1)
4        bnz        rs[12:10] offset10[9:0] (signed, from next pc)
5        alu        sub[12:10] 0[9:6] rs[5:3] rd[2:0]
6        setpred    0[12:2] pred[1:0]
7        end        0[12:0]
=======  =========  =============================================

The controller has eight 12-bit registers.  An ``array`` instruction sends
R[ra], R[rb], R[rd] to the array as row addresses and then post-increments
(mod 4096) each register named by the instruction, once per register even if
a register appears in several fields.  That makes the registers stride
through transposed operands for free, which is what lets one looped SUM
process one bit per cycle.  Funcs that take no row operands (tfromc, cset0,
cset1) encode all three fields as zero and bump nothing.

Funcs that do not read or write all three rows still carry real register
fields — they are pointer-step targets.  The assembler defaults the unused
fields (see ``_ARRAY_SHAPES``) but lets trailing optional registers override
them; the disassembler omits them when they match the default, so text and
binary round-trip exactly.

Decoding is strict: any reserved bit pattern is an error, so encode then
decode is the identity on instructions and decode then encode is the
identity on valid words.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .array import Func, NO_OPERAND, Pred, CramError

NUM_REGS = 8
REG_BITS = 12
REG_MASK = (1 << REG_BITS) - 1
IMEM_WORDS = 256
MAX_LOOP_DEPTH = 2


class EncodingError(CramError):
    pass


class AsmError(CramError):
    pass


class AluOp:
    MOV, ADD, SUB, AND, OR, XOR, SLT = range(7)
    NAMES = ["mov", "add", "sub", "and", "or", "xor", "slt"]


PRED_NAMES = ["always", "tag", "carry", "notcarry"]


def _check_reg(r: int, what: str):
    if not (0 <= r < NUM_REGS):
        raise EncodingError(f"{what} {r} out of range 0..{NUM_REGS - 1}")


@dataclass(frozen=True)
class ArrayInstr:
    func: Func
    ra: int = 0
    rb: int = 0
    rd: int = 0


@dataclass(frozen=True)
class Ldi:
    rd: int
    imm: int  # 0..1023


@dataclass(frozen=True)
class Addi:
    rd: int
    imm: int  # -512..511


@dataclass(frozen=True)
class Loop:
    rs: int
    body_len: int  # 1..1023


@dataclass(frozen=True)
class Bnz:
    rs: int
    offset: int  # -512..511, relative to the next instruction


@dataclass(frozen=True)
class Alu:
    sub: int
    rs: int
    rd: int


@dataclass(frozen=True)
class SetPred:
    pred: Pred


@dataclass(frozen=True)
class End:
    pass


Instr = ArrayInstr | Ldi | Addi | Loop | Bnz | Alu | SetPred | End


def encode(instr: Instr) -> int:
    if isinstance(instr, ArrayInstr):
        if instr.func in NO_OPERAND:
            if (instr.ra, instr.rb, instr.rd) != (0, 0, 0):
                raise EncodingError(
                    f"{instr.func.name.lower()} takes no register fields")
            return int(instr.func) << 9
        for r, what in ((instr.ra, "ra"), (instr.rb, "rb"), (instr.rd, "rd")):
            _check_reg(r, what)
        return (int(instr.func) << 9) | (instr.ra << 6) | (instr.rb << 3) | instr.rd
    if isinstance(instr, Ldi):
        _check_reg(instr.rd, "rd")
        if not (0 <= instr.imm < 1024):
            raise EncodingError(f"ldi immediate {instr.imm} out of range 0..1023")
        return (1 << 13) | (instr.rd << 10) | instr.imm
    if isinstance(instr, Addi):
        _check_reg(instr.rd, "rd")
        if not (-512 <= instr.imm < 512):
            raise EncodingError(f"addi immediate {instr.imm} out of range -512..511")
        return (2 << 13) | (instr.rd << 10) | (instr.imm & 0x3FF)
    if isinstance(instr, Loop):
        _check_reg(instr.rs, "rs")
        if not (1 <= instr.body_len < 1024):
            raise EncodingError(
                f"loop body length {instr.body_len} out of range 1..1023")
        return (3 << 13) | (instr.rs << 10) | instr.body_len
    if isinstance(instr, Bnz):
        _check_reg(instr.rs, "rs")
        if not (-512 <= instr.offset < 512):
            raise EncodingError(f"branch offset {instr.offset} out of range -512..511")
        return (4 << 13) | (instr.rs << 10) | (instr.offset & 0x3FF)
    if isinstance(instr, Alu):
        if not (0 <= instr.sub < len(AluOp.NAMES)):
            raise EncodingError(f"alu sub-op {instr.sub} is reserved")
        _check_reg(instr.rs, "rs")
        _check_reg(instr.rd, "rd")
        return (5 << 13) | (instr.sub << 10) | (instr.rs << 3) | instr.rd
    if isinstance(instr, SetPred):
        return (6 << 13) | int(instr.pred)
    if isinstance(instr, End):
        return 7 << 13
    raise EncodingError(f"unknown instruction {instr!r}")


def decode(word: int) -> Instr:
    if not (0 <= word < 0x10000):
        raise EncodingError(f"word {word:#x} is not 16 bits")
    opcode = word >> 13
    if opcode == 0:
        func = Func((word >> 9) & 0xF)
        ra, rb, rd = (word >> 6) & 7, (word >> 3) & 7, word & 7
        if func in NO_OPERAND and (ra or rb or rd):
            raise EncodingError(
                f"register fields must be zero for {func.name.lower()} "
                f"in word {word:#06x}")
        return ArrayInstr(func, ra, rb, rd)
    if opcode == 1:
        return Ldi((word >> 10) & 7, word & 0x3FF)
    if opcode == 2:
        imm = word & 0x3FF
        return Addi((word >> 10) & 7, imm - 1024 if imm >= 512 else imm)
    if opcode == 3:
        body = word & 0x3FF
        if body == 0:
            raise EncodingError(f"loop body length is zero in word {word:#06x}")
        return Loop((word >> 10) & 7, body)
    if opcode == 4:
        off = word & 0x3FF
        return Bnz((word >> 10) & 7, off - 1024 if off >= 512 else off)
    if opcode == 5:
        sub = (word >> 10) & 7
        if sub >= len(AluOp.NAMES):
            raise EncodingError(
                f"alu sub-op field {sub} is reserved in word {word:#06x}")
        if (word >> 6) & 0xF:
            raise EncodingError(f"alu bits 9:6 must be zero in word {word:#06x}")
        return Alu(sub, (word >> 3) & 7, word & 7)
    if opcode == 6:
        if (word >> 2) & 0x7FF:
            raise EncodingError(
                f"setpred bits 12:2 must be zero in word {word:#06x}")
        return SetPred(Pred(word & 3))
    # opcode == 7
    if word & 0x1FFF:
        raise EncodingError(f"end payload bits must be zero in word {word:#06x}")
    return End()


# ---------------------------------------------------------------------------
# assembler

#: per array func: (required operand fields in source order,
#:                  ((optional field, field it defaults to), ...)).
_ARRAY_SHAPES: dict[Func, tuple[tuple[str, ...], tuple[tuple[str, str], ...]]] = {}
for _f in (Func.AND, Func.OR, Func.XOR, Func.NOR, Func.NAND, Func.XNOR,
           Func.SUM, Func.SUBB):
    _ARRAY_SHAPES[_f] = (("ra", "rb", "rd"), ())
for _f in (Func.COPY, Func.NOT):
    _ARRAY_SHAPES[_f] = (("ra", "rd"), (("rb", "ra"),))
_ARRAY_SHAPES[Func.TLOAD] = (("ra",), (("rb", "ra"), ("rd", "ra")))
for _f in (Func.WR0, Func.WR1):
    _ARRAY_SHAPES[_f] = (("rd",), (("ra", "rd"), ("rb", "rd")))
for _f in (Func.TFROMC, Func.CSET0, Func.CSET1):
    _ARRAY_SHAPES[_f] = ((), ())

_FUNC_BY_NAME = {f.name.lower(): f for f in Func}
# and/or/xor name both an array func (3 register operands) and a scalar alu
# op (2 register operands); the assembler dispatches on operand count.
_ALU_ONLY = {n: i for i, n in enumerate(AluOp.NAMES) if n not in _FUNC_BY_NAME}
_ALU_SHARED = {n: i for i, n in enumerate(AluOp.NAMES) if n in _FUNC_BY_NAME}


def _parse_reg(tok: str, line: int) -> int:
    tok = tok.lower()
    if len(tok) == 2 and tok[0] == "r" and tok[1].isdigit():
        r = int(tok[1])
        if r < NUM_REGS:
            return r
    raise AsmError(f"line {line}: expected register r0..r7, got {tok!r}")


def _parse_int(tok: str, line: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(f"line {line}: expected integer, got {tok!r}") from None


def _array_fields(func: Func, regs: list[int]) -> ArrayInstr:
    named, optional = _ARRAY_SHAPES[func]
    fields = dict(zip(named, regs))
    for (fld, _src), val in zip(optional, regs[len(named):]):
        fields[fld] = val
    for fld, src in optional:
        fields.setdefault(fld, fields[src])
    return ArrayInstr(func, ra=fields.get("ra", 0), rb=fields.get("rb", 0),
                      rd=fields.get("rd", 0))


def assemble(text: str) -> list[int]:
    """Assemble microcode source into a list of 16-bit words.

    Syntax: one instruction per line; ``;`` or ``#`` start a comment;
    ``name:`` defines a label (for bnz); ``loop rS`` ... ``endloop`` brackets
    a hardware loop (nesting depth at most 2); ``loop rS, N`` gives the body
    length explicitly.  ``bnz rS, target`` takes a label or a numeric offset.
    """
    words: list[int] = []
    fixups: list[tuple[int, int, int, str]] = []   # word_idx, line, rs, label
    labels: dict[str, int] = {}
    loop_stack: list[tuple[int, int]] = []         # word_idx of loop, line

    for line_no, raw in enumerate(text.splitlines(), start=1):
        code = raw.split(";")[0].split("#")[0].strip()
        while code:
            head, sep, rest = code.partition(":")
            head = head.strip()
            if not (sep and head and " " not in head and ","
                    not in head and not head[0].isdigit()):
                break
            label = head.lower()
            if label in labels:
                raise AsmError(f"line {line_no}: duplicate label {label!r}")
            labels[label] = len(words)
            code = rest.strip()
        if not code:
            continue
        parts = code.replace(",", " ").split()
        mnem, ops = parts[0].lower(), parts[1:]

        def need(n, mnem=mnem, ops=ops, line_no=line_no):
            if len(ops) != n:
                raise AsmError(f"line {line_no}: {mnem} takes {n} operand(s), "
                               f"got {len(ops)}")

        try:
            if mnem in _ALU_ONLY or (mnem in _ALU_SHARED and len(ops) == 2):
                need(2)
                rd = _parse_reg(ops[0], line_no)
                rs = _parse_reg(ops[1], line_no)
                words.append(encode(Alu(AluOp.NAMES.index(mnem), rs, rd)))
            elif mnem in _FUNC_BY_NAME:
                func = _FUNC_BY_NAME[mnem]
                named, optional = _ARRAY_SHAPES[func]
                if not (len(named) <= len(ops) <= len(named) + len(optional)):
                    raise AsmError(
                        f"line {line_no}: {mnem} takes {len(named)}"
                        f"..{len(named) + len(optional)} operands, got {len(ops)}")
                regs = [_parse_reg(t, line_no) for t in ops]
                words.append(encode(_array_fields(func, regs)))
            elif mnem == "ldi":
                need(2)
                words.append(encode(Ldi(_parse_reg(ops[0], line_no),
                                        _parse_int(ops[1], line_no))))
            elif mnem == "addi":
                need(2)
                words.append(encode(Addi(_parse_reg(ops[0], line_no),
                                         _parse_int(ops[1], line_no))))
            elif mnem == "loop":
                if len(ops) == 2:
                    words.append(encode(Loop(_parse_reg(ops[0], line_no),
                                             _parse_int(ops[1], line_no))))
                elif len(ops) == 1:
                    if len(loop_stack) >= MAX_LOOP_DEPTH:
                        raise AsmError(f"line {line_no}: loops nested deeper "
                                       f"than {MAX_LOOP_DEPTH}")
                    loop_stack.append((len(words), line_no))
                    words.append(encode(Loop(_parse_reg(ops[0], line_no), 1)))
                else:
                    raise AsmError(f"line {line_no}: loop takes 1 or 2 operands")
            elif mnem == "endloop":
                need(0)
                if not loop_stack:
                    raise AsmError(f"line {line_no}: endloop without open loop")
                loop_idx, loop_line = loop_stack.pop()
                body_len = len(words) - loop_idx - 1
                if body_len < 1:
                    raise AsmError(f"line {loop_line}: loop body is empty")
                rs = (words[loop_idx] >> 10) & 7
                words[loop_idx] = encode(Loop(rs, body_len))
            elif mnem == "bnz":
                need(2)
                rs = _parse_reg(ops[0], line_no)
                target = ops[1].lower()
                try:
                    words.append(encode(Bnz(rs, int(target, 0))))
                except ValueError:
                    fixups.append((len(words), line_no, rs, target))
                    words.append(encode(Bnz(rs, 0)))
            elif mnem == "setpred":
                need(1)
                if ops[0].lower() not in PRED_NAMES:
                    raise AsmError(f"line {line_no}: bad predicate {ops[0]!r}, "
                                   f"expected one of {', '.join(PRED_NAMES)}")
                words.append(encode(
                    SetPred(Pred(PRED_NAMES.index(ops[0].lower())))))
            elif mnem == "end":
                need(0)
                words.append(encode(End()))
            else:
                raise AsmError(f"line {line_no}: unknown mnemonic {mnem!r}")
        except EncodingError as e:
            raise AsmError(f"line {line_no}: {e}") from e

    if loop_stack:
        raise AsmError(f"line {loop_stack[-1][1]}: loop is never closed")
    for word_idx, line_no, rs, target in fixups:
        if target not in labels:
            raise AsmError(f"line {line_no}: undefined label {target!r}")
        offset = labels[target] - (word_idx + 1)
        try:
            words[word_idx] = encode(Bnz(rs, offset))
        except EncodingError as e:
            raise AsmError(f"line {line_no}: {e}") from e

    if len(words) > IMEM_WORDS:
        raise AsmError(f"program is {len(words)} words, instruction memory "
                       f"holds {IMEM_WORDS}")
    if not words:
        raise AsmError("program is empty")
    if not isinstance(decode(words[-1]), End):
        raise AsmError("last instruction must be end")
    return words


def disassemble(words: list[int]) -> str:
    """Inverse of :func:`assemble` (numeric loop/branch forms); optional
    register fields are printed only when they differ from their defaults,
    so ``assemble(disassemble(w)) == w``."""
    lines = []
    for word in words:
        instr = decode(word)
        if isinstance(instr, ArrayInstr):
            named, optional = _ARRAY_SHAPES[instr.func]
            fields = {"ra": instr.ra, "rb": instr.rb, "rd": instr.rd}
            ops = [f"r{fields[f]}" for f in named]
            keep = 0
            for i, (fld, src) in enumerate(optional):
                if fields[fld] != fields[src]:
                    keep = i + 1
            ops += [f"r{fields[fld]}" for fld, _src in optional[:keep]]
            mnem = instr.func.name.lower()
            lines.append(f"{mnem} {', '.join(ops)}" if ops else mnem)
        elif isinstance(instr, Ldi):
            lines.append(f"ldi r{instr.rd}, {instr.imm}")
        elif isinstance(instr, Addi):
            lines.append(f"addi r{instr.rd}, {instr.imm}")
        elif isinstance(instr, Loop):
            lines.append(f"loop r{instr.rs}, {instr.body_len}")
        elif isinstance(instr, Bnz):
            lines.append(f"bnz r{instr.rs}, {instr.offset}")
        elif isinstance(instr, Alu):
            lines.append(f"{AluOp.NAMES[instr.sub]} r{instr.rd}, r{instr.rs}")
        elif isinstance(instr, SetPred):
            lines.append(f"setpred {PRED_NAMES[int(instr.pred)]}")
        else:
            lines.append("end")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# binary / text program files

def to_bytes(words: list[int]) -> bytes:
    return struct.pack(f"<{len(words)}H", *words)


def from_bytes(blob: bytes) -> list[int]:
    if len(blob) % 2:
        raise EncodingError("binary program has an odd byte count")
    return list(struct.unpack(f"<{len(blob) // 2}H", blob))


def to_hex(words: list[int]) -> str:
    return "".join(f"{w:04x}\n" for w in words)


def from_hex(text: str) -> list[int]:
    words = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            w = int(line, 16)
        except ValueError:
            raise EncodingError(f"line {line_no}: {line!r} is not hex") from None
        if not (0 <= w < 0x10000):
            raise EncodingError(f"line {line_no}: {line!r} is wider than 16 bits")
        words.append(w)
    return words
