"""Bit-level model of a compute-enabled SRAM array.

The array is a rows x cols grid of SRAM cells.  In storage mode it behaves
like a plain synchronous RAM with one row per address.  In compute mode two
word lines are activated at once: the bit line senses AND of the two cells in
each column, the complement bit line senses NOR, and simple per-column
peripheral logic (a carry latch, a tag latch, and a write-back mux) turns
those two signals into one of sixteen micro operations.  A whole row of
results is written back in the same cycle, so every micro-op is one cycle
regardless of column count.

Data for bit-serial arithmetic is stored transposed: an n-bit operand lives
in n cells of a single column, LSB at the lowest row index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class CramError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(CramError):
    pass


class AddressError(CramError):
    pass


class MicroOpError(CramError):
    pass


class WriteCollisionError(CramError):
    pass


TOTAL_BITS = 20480

#: The geometries the block can be configured into (rows, cols).
STANDARD_GEOMETRIES = ((512, 40), (1024, 20), (2048, 10))


@dataclass(frozen=True)
class Geometry:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 2 or self.cols < 1:
            raise ConfigurationError(
                f"geometry {self.rows}x{self.cols}: need rows >= 2 and cols >= 1")

    @property
    def bits(self) -> int:
        return self.rows * self.cols

    @property
    def is_standard(self) -> bool:
        return (self.rows, self.cols) in STANDARD_GEOMETRIES

    def __str__(self):
        return f"{self.rows}x{self.cols}"

    @classmethod
    def parse(cls, text: str) -> "Geometry":
        try:
            r, c = text.lower().split("x")
            return cls(int(r), int(c))
        except ValueError as e:
            raise ConfigurationError(f"bad geometry string {text!r}") from e


class Pred(IntEnum):
    """Predication mux selector shared by all columns."""
    ALWAYS = 0
    TAG = 1
    CARRY = 2
    NOTCARRY = 3


class Func(IntEnum):
    """Micro-op function select (4 bits)."""
    AND = 0
    OR = 1
    XOR = 2
    NOR = 3
    NAND = 4
    XNOR = 5
    SUM = 6
    SUBB = 7
    COPY = 8
    NOT = 9
    WR0 = 10
    WR1 = 11
    TLOAD = 12
    TFROMC = 13
    CSET0 = 14
    CSET1 = 15


#: funcs that read two distinct rows
TWO_SOURCE = frozenset({Func.AND, Func.OR, Func.XOR, Func.NOR,
                        Func.NAND, Func.XNOR, Func.SUM, Func.SUBB})
#: funcs that read row_a only
ONE_SOURCE = frozenset({Func.COPY, Func.NOT, Func.TLOAD})
#: funcs that write row_d
ROW_WRITING = frozenset(TWO_SOURCE | {Func.COPY, Func.NOT, Func.WR0, Func.WR1})
#: funcs that take no row operands at all
NO_OPERAND = frozenset({Func.TFROMC, Func.CSET0, Func.CSET1})


@dataclass(frozen=True)
class MicroOp:
    """One array cycle: func plus up to three row addresses.

    For funcs that do not use a given row field the value is ignored by the
    array (the controller still range-checks it, because the fields double as
    pointer-step targets at the ISA level).
    """
    func: Func
    row_a: int = 0
    row_b: int = 0
    row_d: int = 0


@dataclass
class ColumnLatches:
    """Per-column peripheral state plus the shared predication selector."""
    carry: np.ndarray
    tag: np.ndarray
    pred: Pred = Pred.ALWAYS

    @classmethod
    def create(cls, cols: int) -> "ColumnLatches":
        return cls(carry=np.zeros(cols, dtype=np.uint8),
                   tag=np.zeros(cols, dtype=np.uint8))

    def reset(self):
        self.carry[:] = 0
        self.tag[:] = 0
        self.pred = Pred.ALWAYS

    def enable_mask(self) -> np.ndarray:
        if self.pred == Pred.ALWAYS:
            return np.ones_like(self.carry)
        if self.pred == Pred.TAG:
            return self.tag
        if self.pred == Pred.CARRY:
            return self.carry
        return 1 - self.carry  # NOTCARRY


@dataclass
class ArrayState:
    geometry: Geometry
    bits: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.bits is None:
            self.bits = np.zeros((self.geometry.rows, self.geometry.cols),
                                 dtype=np.uint8)

    def copy(self) -> "ArrayState":
        return ArrayState(self.geometry, self.bits.copy())


def configure(geometry: Geometry) -> ArrayState:
    """Power-on configuration: returns a zero-filled array."""
    return ArrayState(geometry)


def _check_row(state: ArrayState, row: int, what: str):
    if not (0 <= row < state.geometry.rows):
        raise AddressError(f"{what} {row} out of range 0..{state.geometry.rows - 1}")


def sense(state: ArrayState, row_a: int, row_b: int):
    """Dual word-line activation: (BL, BLB) = (a AND b, a NOR b) per column."""
    _check_row(state, row_a, "row_a")
    _check_row(state, row_b, "row_b")
    if row_a == row_b:
        raise MicroOpError("dual activation needs two distinct rows")
    a = state.bits[row_a]
    b = state.bits[row_b]
    return a & b, (1 - a) & (1 - b) & 1


def exec_microop(state: ArrayState, latches: ColumnLatches, op: MicroOp):
    """Execute one micro-op in place (one array cycle).

    Predication gates every per-column row write and the carry updates of
    SUM/SUBB.  The latch-control funcs TLOAD/TFROMC/CSET0/CSET1 deliberately
    differ: TLOAD and TFROMC are unconditional (a tag load gated by the tag
    itself could never set a cleared tag again), while CSET0/CSET1 respect
    the predicate so a carry can be preset from the tag.
    """
    func = op.func
    if func in NO_OPERAND:
        en = latches.enable_mask()
        if func == Func.TFROMC:
            latches.tag[:] = latches.carry
        elif func == Func.CSET0:
            latches.carry[:] = np.where(en, 0, latches.carry)
        else:  # CSET1
            latches.carry[:] = np.where(en, 1, latches.carry)
        return state, latches

    for row, what in ((op.row_a, "row_a"), (op.row_b, "row_b"), (op.row_d, "row_d")):
        _check_row(state, row, what)

    en = latches.enable_mask()

    if func == Func.TLOAD:
        # tag <- row_a, carry <- 0: one cycle prepares a multiply phase
        latches.tag[:] = state.bits[op.row_a]
        latches.carry[:] = 0
        return state, latches

    if func in TWO_SOURCE:
        bl_and, bl_nor = sense(state, op.row_a, op.row_b)
        a = state.bits[op.row_a]
        b = state.bits[op.row_b]
        x = a ^ b
        if func == Func.AND:
            result = bl_and
        elif func == Func.OR:
            result = 1 - bl_nor
        elif func == Func.XOR:
            result = x
        elif func == Func.NOR:
            result = bl_nor
        elif func == Func.NAND:
            result = 1 - bl_and
        elif func == Func.XNOR:
            result = 1 - x
        elif func == Func.SUM:
            c = latches.carry
            result = x ^ c
            new_carry = bl_and | (c & x)
            latches.carry[:] = np.where(en, new_carry, c)
        else:  # SUBB: row_a - row_b with borrow chain in the carry latch
            c = latches.carry
            result = x ^ c
            borrow = ((1 - a) & b) | ((1 - x) & c)
            latches.carry[:] = np.where(en, borrow, c)
    elif func == Func.COPY:
        result = state.bits[op.row_a]
    elif func == Func.NOT:
        result = 1 - state.bits[op.row_a]
    elif func == Func.WR0:
        result = np.zeros(state.geometry.cols, dtype=np.uint8)
    else:  # WR1
        result = np.ones(state.geometry.cols, dtype=np.uint8)

    old = state.bits[op.row_d]
    state.bits[op.row_d] = np.where(en, result, old)
    return state, latches


# ---------------------------------------------------------------------------
# storage-mode access

class Port(IntEnum):
    A = 0
    B = 1


def storage_read(state: ArrayState, row: int) -> int:
    """Read one row as an integer; bit (cols-1-i) of the word is column i,
    i.e. column 0 is the MSB of the word."""
    _check_row(state, row, "address")
    word = 0
    for bit in state.bits[row]:
        word = (word << 1) | int(bit)
    return word


def storage_write(state: ArrayState, row: int, word: int):
    _check_row(state, row, "address")
    cols = state.geometry.cols
    if not (0 <= word < (1 << cols)):
        raise AddressError(f"data word {word:#x} wider than {cols} bits")
    for i in range(cols):
        state.bits[row, i] = (word >> (cols - 1 - i)) & 1


@dataclass(frozen=True)
class StorageOp:
    row: int
    write_en: bool
    data: int = 0


def storage_cycle(state: ArrayState, op_a: StorageOp | None,
                  op_b: StorageOp | None):
    """One dual-port storage cycle.  Simultaneous writes to the same row
    collide; read+write of the same row returns the old value (read-first)."""
    if op_a and op_b and op_a.write_en and op_b.write_en and op_a.row == op_b.row:
        raise WriteCollisionError(f"both ports write row {op_a.row} in one cycle")
    out = []
    for op in (op_a, op_b):
        out.append(storage_read(state, op.row) if op and not op.write_en else None)
    for op in (op_a, op_b):
        if op and op.write_en:
            storage_write(state, op.row, op.data)
    return tuple(out)


# ---------------------------------------------------------------------------
# image serialization

def to_image(state: ArrayState) -> dict:
    """JSON-friendly dump: one hex string per row, column 0 is the MSB."""
    cols = state.geometry.cols
    digits = (cols + 3) // 4
    return {
        "geometry": str(state.geometry),
        "rows": [format(storage_read(state, r), f"0{digits}x")
                 for r in range(state.geometry.rows)],
    }


def from_image(image: dict) -> ArrayState:
    geometry = Geometry.parse(image["geometry"])
    if len(image["rows"]) != geometry.rows:
        raise ConfigurationError("row count does not match geometry")
    state = configure(geometry)
    for r, hexword in enumerate(image["rows"]):
        storage_write(state, r, int(hexword, 16))
    return state
