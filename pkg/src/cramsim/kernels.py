"""Microcode generators for the shipped operations, plus the transposed
layout planner and the data packer.

Data convention: an element's bits live vertically in one column, LSB at the
lowest row index.  Element j of a vector goes to column j mod cols, tuple
slot j div cols.  A "tuple" is one (operands, result) group; a column holds
tuples_per_column of them, and the same program processes every column in
parallel.

The generators are built around the post-increment register semantics: a
kernel is a short loop whose body walks row pointers through one tuple, so
the per-tuple cycle cost is just the body length.  Where a pointer must move
somewhere the natural walk does not reach, either an ``addi`` corrects it or
the bump is smuggled onto the spare register fields of a ``tload``/``copy``
(those fields are pointer-step targets even though the micro-op ignores the
rows they name).

Multiplication lays the multiplicand out once per multiplier bit
(interleaved with that bit and a zero guard row), so the operand pointer
walks the whole region linearly: per bit j it reads the bit (tload) and adds
the multiplicand into accumulator rows j..j+n — a tag-predicated shift-add
with no shifter.

bfloat16 semantics are fixed by this module and mirrored bit-exactly by the
oracle: truncation rounding, flush-to-zero subnormals (applied by the
packer), no NaN/Inf (exponent 0xFF inputs rejected), exponents wrap mod 256
on multiply over/underflow, and a zero operand yields a signed... a +0
result for multiply and the exact other operand for add.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .array import ArrayState, Geometry, configure, CramError
from .builder import KernelBuilder
from . import isa


class CapacityError(CramError):
    """The operation does not fit even one tuple in the given geometry."""


class RangeError(CramError):
    pass


# ---------------------------------------------------------------------------
# layouts and packing

@dataclass(frozen=True)
class FieldSpec:
    """Rows of one named field, per tuple.

    Bit i of tuple t lives at row ``start + t*stride + offsets[i]`` (LSB
    first).  ``replicas`` are additional offset lists that receive the same
    bits (multiplication stores the multiplicand once per multiplier bit);
    reads use the primary offsets only.  ``stride == 0`` means the field is
    shared by every tuple of a column (the dot-product accumulator).
    """
    start: int
    offsets: tuple[int, ...]
    stride: int
    replicas: tuple[tuple[int, ...], ...] = ()

    @property
    def width(self) -> int:
        return len(self.offsets)

    def rows(self, t: int) -> list[int]:
        return [self.start + t * self.stride + o for o in self.offsets]

    def all_rows(self, t: int) -> list[list[int]]:
        base = self.start + t * self.stride
        return [[base + o for o in offs]
                for offs in (self.offsets, *self.replicas)]


@dataclass
class Layout:
    geometry: Geometry
    fields: dict[str, FieldSpec]
    tuples_per_column: int
    metadata: dict = field(default_factory=dict)

    @property
    def elements_total(self) -> int:
        return self.tuples_per_column * self.geometry.cols

    def to_json(self) -> dict:
        out = {
            "geometry": str(self.geometry),
            "tuples_per_column": self.tuples_per_column,
            "fields": {name: [fs.start, fs.width]
                       for name, fs in self.fields.items()},
            "placements": {name: {"offsets": list(fs.offsets),
                                  "stride": fs.stride,
                                  "replicas": [list(r) for r in fs.replicas]}
                           for name, fs in self.fields.items()},
        }
        out.update(self.metadata)
        return out


def write_field(state: ArrayState, fs: FieldSpec, t: int, col: int, value: int):
    if not (0 <= value < (1 << fs.width)):
        raise RangeError(f"value {value} does not fit in {fs.width} bits")
    for rows in fs.all_rows(t):
        for i, r in enumerate(rows):
            state.bits[r, col] = (value >> i) & 1


def read_field(state: ArrayState, fs: FieldSpec, t: int, col: int) -> int:
    v = 0
    for i, r in enumerate(fs.rows(t)):
        v |= int(state.bits[r, col]) << i
    return v


# ---------------------------------------------------------------------------
# bfloat16 helpers (packer-side; the oracle has its own independent copy)

def bf16_fields(word: int) -> tuple[int, int, int]:
    """word -> (sign, exponent, mantissa); flush-to-zero, reject NaN/Inf."""
    if not (0 <= word < 0x10000):
        raise RangeError(f"{word:#x} is not a 16-bit value")
    s, e, m = (word >> 15) & 1, (word >> 7) & 0xFF, word & 0x7F
    if e == 0xFF:
        raise RangeError("exponent 0xFF (NaN/Inf) is not supported")
    if e == 0:
        m = 0  # flush subnormals to a signed zero
    return s, e, m


def bf16_word(s: int, e: int, m: int) -> int:
    return (s << 15) | ((e & 0xFF) << 7) | (m & 0x7F)


def bf16_significand(e: int, m: int) -> int:
    """8-bit significand with explicit hidden bit; zero stays zero."""
    return 0 if e == 0 else 0x80 | m


# ---------------------------------------------------------------------------
# kernel container

@dataclass
class Kernel:
    """A generated kernel: program(s), layout, packer, and cost metadata.

    ``programs`` usually holds one word list; straight-line kernels too long
    for the 256-word instruction memory are split into parts that the runner
    reloads at runtime (reload traffic is storage-mode and not counted as
    compute cycles).
    """
    name: str
    layout: Layout
    programs: list[list[int]]
    sources: list[str]
    inputs: tuple[str, ...]            # names of per-element input operands
    derive: callable                   # input dict -> {field_name: value}
    result_fields: tuple[str, ...]
    cycles_per_tuple: int | None
    registers_used: int

    @property
    def instruction_counts(self) -> list[int]:
        return [len(p) for p in self.programs]

    def pack(self, *operand_vectors: list[int]) -> ArrayState:
        """Build the initial array image from per-element operand vectors."""
        if len(operand_vectors) != len(self.inputs):
            raise RangeError(f"{self.name} takes {len(self.inputs)} operand "
                             f"vectors, got {len(operand_vectors)}")
        lay = self.layout
        n_el = len(operand_vectors[0])
        if any(len(v) != n_el for v in operand_vectors):
            raise RangeError("operand vectors have different lengths")
        if n_el > lay.elements_total:
            raise RangeError(f"{n_el} elements exceed capacity "
                             f"{lay.elements_total}")
        state = configure(lay.geometry)
        const = lay.metadata.get("constant_fields", {})
        for name, value in const.items():
            fs = lay.fields[name]
            for col in range(lay.geometry.cols):
                span = lay.tuples_per_column if fs.stride else 1
                for t in range(span):
                    write_field(state, fs, t, col, value)
        for j in range(lay.elements_total):
            ops = {nm: (operand_vectors[k][j] if j < n_el else 0)
                   for k, nm in enumerate(self.inputs)}
            col, t = j % lay.geometry.cols, j // lay.geometry.cols
            for fname, value in self.derive(ops).items():
                write_field(state, lay.fields[fname], t, col, value)
        return state

    def unpack(self, state: ArrayState, count: int | None = None):
        """Read result field(s) back out, element order matching pack()."""
        lay = self.layout
        count = lay.elements_total if count is None else count
        out = []
        for j in range(count):
            col, t = j % lay.geometry.cols, j // lay.geometry.cols
            vals = tuple(read_field(state, lay.fields[f], t, col)
                         for f in self.result_fields)
            out.append(vals[0] if len(vals) == 1 else vals)
        return out


# ---------------------------------------------------------------------------
# fixed-point add / sub

def _bitrange(n):
    return tuple(range(n))


def gen_addsub(op: str, n: int, geometry: Geometry) -> Kernel:
    """n-bit element-wise add or sub: per tuple CSET0 + n SUM/SUBB = n+1
    cycles; operand fields are contiguous regions so the three pointers walk
    tuple to tuple with no corrections."""
    if not (2 <= n <= 16):
        raise RangeError(f"width {n} outside 2..16")
    if op not in ("add", "sub"):
        raise RangeError(f"unknown op {op!r}")
    tup_rows = 3 * n
    T = geometry.rows // tup_rows
    if T < 1:
        raise CapacityError(f"{op} int{n} needs {tup_rows} rows/tuple, "
                            f"geometry has {geometry.rows}")
    lay = Layout(geometry, {
        "a": FieldSpec(0, _bitrange(n), n),
        "b": FieldSpec(n * T, _bitrange(n), n),
        "r": FieldSpec(2 * n * T, _bitrange(n), n),
    }, T)
    b = KernelBuilder()
    b.ldi(0, T)
    b.load_const(1, 0)
    b.load_const(2, n * T)
    b.load_const(3, 2 * n * T)
    with b.loop(0, T):
        b.op("cset0")
        for _ in range(n):
            b.op("subb" if op == "sub" else "sum", 1, 2, 3)
    b.end()
    b.expect(1, n * T)
    b.expect(2, 2 * n * T)
    b.expect(3, 3 * n * T)
    mask = (1 << n) - 1

    return Kernel(
        name=f"{op}-int{n}", layout=lay, programs=[b.words()],
        sources=[b.text()], inputs=("a", "b"),
        derive=lambda ops: {"a": ops["a"] & mask, "b": ops["b"] & mask},
        result_fields=("r",), cycles_per_tuple=n + 1,
        registers_used=len(b.regs_used))


# ---------------------------------------------------------------------------
# fixed-point multiply

def _mul_operand_fields(n: int, base: int, stride: int):
    """Operand region of the shift-add multiply: per multiplier bit j a block
    [b_j, multiplicand rows, zero guard] (phase 0 needs no guard)."""
    block = n + 2
    b_offsets = tuple(base + j * block for j in range(n))
    a_placements = tuple(tuple(base + j * block + 1 + i for i in range(n))
                         for j in range(n))
    return (FieldSpec(0, b_offsets, stride),
            FieldSpec(0, a_placements[0], stride, a_placements[1:]))


def _mul_aux_schedule(n: int) -> list[list[int]]:
    """Spread each accumulator register's n-1 catch-up bumps per tuple over
    the spare fields of the phase tloads (2 each) and phase-0 copies (1
    each).  Register j may not be bumped by its own phase's tload nor, for
    j=0, by the phase-0 copies."""
    need = [n - 1] * n
    slots = [("t", 0, 2)] + [("c", 0, 1)] * (n + 1) + \
            [("t", j, 2) for j in range(1, n)]
    plan = []
    for kind, j, cap in slots:
        chosen = []
        for _ in range(cap):
            cands = [r for r in range(n)
                     if need[r] > 0 and r not in chosen and r != j
                     and not (kind == "c" and r == 0)]
            if not cands:
                break
            pick = max(cands, key=lambda r: (need[r], -r))
            need[pick] -= 1
            chosen.append(pick)
        plan.append(chosen)
    if any(need):
        raise CapacityError(f"cannot schedule pointer catch-up for n={n}")
    return plan


def gen_mul(n: int, geometry: Geometry) -> Kernel:
    """n-bit unsigned multiply with a 2n-bit result.

    n <= 4: fully unrolled body, one accumulator pointer per multiplier bit,
    n(n+2) cycles/tuple.  The loop counter doubles as the operand pointer
    (the loop captures the count, freeing the register), so the operand
    region starts at row T.  n >= 5: two-level loop with a single
    accumulator pointer rewound by addi, n(n+3) cycles/tuple.
    """
    if not (2 <= n <= 16):
        raise RangeError(f"width {n} outside 2..16")
    if n <= 4:
        return _gen_mul_unrolled(n, geometry)
    return _gen_mul_looped(n, geometry)


def _gen_mul_unrolled(n: int, geometry: Geometry) -> Kernel:
    # rows: T spare (the operand pointer starts at its own loop count T),
    # then n(n+2)*T operands, then 2n*T accumulator
    per = n * (n + 2) + 2 * n + 1
    T = geometry.rows // per
    if T < 1:
        raise CapacityError(f"mul int{n} needs {per} rows/tuple")
    opbase = T
    accbase = T + n * (n + 2) * T
    bfs, afs = _mul_operand_fields(n, 0, n * (n + 2))
    bfs = FieldSpec(opbase, bfs.offsets, bfs.stride)
    afs = FieldSpec(opbase, afs.offsets, afs.stride, afs.replicas)
    lay = Layout(geometry, {
        "a": afs, "b": bfs,
        "r": FieldSpec(accbase, _bitrange(2 * n), 2 * n),
    }, T)

    X = 0
    acc = list(range(1, n + 1))
    plan = _mul_aux_schedule(n)
    # Catch-up bumps taken before a register's own phase shift its position;
    # start it lower by that amount so it sits at accbase+j when its phase
    # runs.  Slot i is: phase-0 tload (i=0), the n+1 copies (1..n+1), then
    # the tload of phase j at index n+1+j.
    pre = [0] * n
    for j in range(1, n):
        pre[j] = sum(s.count(j) for s in plan[:n + 1 + j])
    b = KernelBuilder()
    b.ldi(X, T)
    for j in range(n):
        b.load_const(acc[j], accbase + j - pre[j])
    b.setpred("tag")
    with b.loop(X, T):
        slot = iter(plan)

        def tload_with_aux():
            aux = [acc[r] for r in next(slot)]
            b.op("tload", X,
                 aux[0] if aux else None,
                 aux[1] if len(aux) > 1 else None)

        tload_with_aux()
        for _ in range(n + 1):
            aux = [acc[r] for r in next(slot)]
            b.op("copy", X, aux[0] if aux else None, acc[0])
        for j in range(1, n):
            tload_with_aux()
            for _ in range(n + 1):
                b.op("sum", X, acc[j], acc[j])
    b.end()
    b.expect(X, T + n * (n + 2) * T)
    for j in range(n):
        b.expect(acc[j], accbase + j - pre[j] + 2 * n * T)

    mask = (1 << n) - 1
    return Kernel(
        name=f"mul-int{n}", layout=lay, programs=[b.words()],
        sources=[b.text()], inputs=("a", "b"),
        derive=lambda ops: {"a": ops["a"] & mask, "b": ops["b"] & mask},
        result_fields=("r",), cycles_per_tuple=n * (n + 2),
        registers_used=len(b.regs_used))


def _gen_mul_looped(n: int, geometry: Geometry) -> Kernel:
    per = n * (n + 2) + 2 * n
    T = geometry.rows // per
    if T < 1:
        raise CapacityError(f"mul int{n} needs {per} rows/tuple")
    accbase = n * (n + 2) * T
    bfs, afs = _mul_operand_fields(n, 0, n * (n + 2))
    lay = Layout(geometry, {
        "a": afs, "b": bfs,
        "r": FieldSpec(accbase, _bitrange(2 * n), 2 * n),
    }, T)

    X, A, RC, RJ = 0, 1, 2, 3
    b = KernelBuilder()
    b.ldi(X, 0)
    b.load_const(A, accbase)
    b.ldi(RC, T)
    b.ldi(RJ, n - 1)
    b.setpred("tag")
    with b.loop(RC, T):
        b.op("tload", X)
        for _ in range(n + 1):
            b.op("copy", X, rd=A)
        with b.loop(RJ, n - 1):
            b.addi(A, -n)
            b.op("tload", X)
            for _ in range(n + 1):
                b.op("sum", X, A, A)
    b.end()
    b.expect(X, n * (n + 2) * T)
    b.expect(A, accbase + 2 * n * T)

    mask = (1 << n) - 1
    return Kernel(
        name=f"mul-int{n}", layout=lay, programs=[b.words()],
        sources=[b.text()], inputs=("a", "b"),
        derive=lambda ops: {"a": ops["a"] & mask, "b": ops["b"] & mask},
        result_fields=("r",), cycles_per_tuple=n * (n + 3),
        registers_used=len(b.regs_used))


# ---------------------------------------------------------------------------
# multiply-accumulate

def gen_mac(n: int, acc_width: int, geometry: Geometry) -> Kernel:
    """acc <- (acc + a*b) mod 2^acc_width.  The product is formed in a
    scratch field padded with zeros up to acc_width, then merged into the
    accumulator with one unrolled SUM chain."""
    if not (2 <= n <= 16):
        raise RangeError(f"width {n} outside 2..16")
    if acc_width < 2 * n:
        raise RangeError(f"accumulator width {acc_width} < 2n = {2 * n}")
    m = acc_width
    per = n * (n + 2) + 2 * m
    T = geometry.rows // per
    if T < 1:
        raise CapacityError(f"mac int{n}/acc{m} needs {per} rows/tuple")
    pbase = n * (n + 2) * T
    abase = pbase + m * T
    bfs, afs = _mul_operand_fields(n, 0, n * (n + 2))
    lay = Layout(geometry, {
        "a": afs, "b": bfs,
        "acc": FieldSpec(abase, _bitrange(m), m),
    }, T)

    X, RP, RA, RC, RJ = 0, 1, 2, 3, 4
    b = KernelBuilder()
    b.ldi(X, 0)
    b.load_const(RP, pbase)
    b.load_const(RA, abase)
    b.ldi(RC, T)
    b.ldi(RJ, n - 1)
    with b.loop(RC, T):
        b.setpred("tag")
        b.op("tload", X)
        for _ in range(n + 1):
            b.op("copy", X, rd=RP)
        with b.loop(RJ, n - 1):
            b.addi(RP, -n)
            b.op("tload", X)
            for _ in range(n + 1):
                b.op("sum", X, RP, RP)
        b.setpred("always")
        b.op("cset0")
        b.addi(RP, -2 * n)
        for _ in range(m):
            b.op("sum", RP, RA, RA)
    b.end()
    b.expect(RP, pbase + m * T)
    b.expect(RA, abase + m * T)

    nmask, amask = (1 << n) - 1, (1 << m) - 1
    return Kernel(
        name=f"mac-int{n}-acc{m}", layout=lay, programs=[b.words()],
        sources=[b.text()], inputs=("a", "b", "acc"),
        derive=lambda ops: {"a": ops["a"] & nmask, "b": ops["b"] & nmask,
                            "acc": ops["acc"] & amask},
        result_fields=("acc",), cycles_per_tuple=n * (n + 3) + m + 4,
        registers_used=len(b.regs_used))


# ---------------------------------------------------------------------------
# int4 dot product, 32-bit per-column accumulation

def gen_dot(geometry: Geometry, width_n: int = 4, acc_width: int = 32) -> Kernel:
    """Per column: acc = sum_j a_j * b_j over all packed pairs (unsigned
    int4 products, 32-bit wrap).  Each pair block ends with a constant-one
    row whose tload re-arms the tag for the unconditional merge and the next
    pair's scratch clear.  Cross-column reduction is left to the host."""
    if width_n != 4 or acc_width != 32:
        raise RangeError("the dot kernel ships with width 4 / accumulator 32")
    n, m = width_n, acc_width
    block = n * (n + 2) + 1              # [b_j, a, guard] x n + one-row
    k = (geometry.rows - 2 * m) // block
    if k < 1:
        raise CapacityError(f"dot int4/acc32 needs {block} rows/pair "
                            f"+ {2 * m} shared rows")
    pbase = block * k
    abase = pbase + m
    bfs, afs = _mul_operand_fields(n, 0, block)
    lay = Layout(geometry, {
        "a": afs, "b": bfs,
        "one": FieldSpec(block - 1, (0,), block),
        "acc": FieldSpec(abase, _bitrange(m), 0),
    }, k, metadata={"constant_fields": {"one": 1},
                    "pairs_per_column": k})

    X, RP, RA, RC, RJ = 0, 1, 2, 3, 4
    b = KernelBuilder()
    b.ldi(X, 0)
    b.load_const(RP, pbase)
    b.load_const(RA, abase)
    b.ldi(RC, k)
    b.ldi(RJ, m)
    b.setpred("tag")
    with b.loop(RC, k):
        for _ in range(2 * n):           # clear the product scratch
            b.op("wr0", rd=RP)
        b.addi(RP, -2 * n)
        b.op("tload", X)
        for _ in range(n + 1):
            b.op("copy", X, rd=RP)
        for _ in range(n - 1):
            b.addi(RP, -n)
            b.op("tload", X)
            for _ in range(n + 1):
                b.op("sum", X, RP, RP)
        b.op("tload", X)                 # constant-one row: tag=1, carry=0
        b.addi(RP, -2 * n)
        with b.loop(RJ, m):
            b.op("sum", RP, RA, RA)
        b.addi(RP, -m)
        b.addi(RA, -m)
    b.end()
    b.expect(X, block * k)
    b.expect(RP, pbase)
    b.expect(RA, abase)

    mask = (1 << n) - 1
    return Kernel(
        name="dot-int4", layout=lay, programs=[b.words()],
        sources=[b.text()], inputs=("a", "b"),
        derive=lambda ops: {"a": ops["a"] & mask, "b": ops["b"] & mask},
        result_fields=("acc",), cycles_per_tuple=73,
        registers_used=len(b.regs_used))


def dot_unpack_columns(kernel: Kernel, state: ArrayState) -> list[int]:
    """One 32-bit partial sum per column."""
    lay = kernel.layout
    return [read_field(state, lay.fields["acc"], 0, col)
            for col in range(lay.geometry.cols)]


# ---------------------------------------------------------------------------
# bfloat16 multiply

BF16_MUL_STRIDE = 127


def gen_bf16_mul(geometry: Geometry) -> Kernel:
    """bfloat16 multiply, 112 cycles per tuple.

    Reference semantics (the oracle mirrors these exactly): operands are
    flushed-to-zero at pack time; if either operand is zero the result is +0;
    otherwise with 8-bit significands Ma, Mb (hidden bit explicit) and
    P = Ma*Mb, p = bit 15 of P:
        mantissa = bits 14..8 of P if p else bits 13..7
        exponent = (ea + eb + 129 + p) mod 256     (129 = -127 mod 256)
        sign     = sa xor sb
    The packer pre-computes the both-nonzero flag and the biased operand-b
    exponent so the whole tuple costs one linear pointer sweep; the product
    scratch doubles as the result mantissa (bits P7..P13).
    """
    S = BF16_MUL_STRIDE
    T = geometry.rows // S
    if T < 1:
        raise CapacityError(f"bf16 mul needs {S} rows/tuple")
    n = 8
    # offsets inside one tuple
    SB, SR, P0, EBP, ER = 0, 2, 3, 19, 27
    THAB, SA, OPS, THAB2, ZROW, EA = 35, 36, 37, 116, 117, 118
    mb_offsets, ma_p0 = [], []
    ma_repl = []
    off = OPS
    for j in range(n):
        mb_offsets.append(off)
        rows = tuple(off + 1 + i for i in range(n))
        (ma_p0 if j == 0 else ma_repl).append(rows)
        off += (n + 1) if j == 0 else (n + 2)   # later phases carry a guard
    assert off - 1 == 115

    lay = Layout(geometry, {
        "sa": FieldSpec(SA, (0,), S),
        "sb": FieldSpec(SB, (0,), S),
        "ma": FieldSpec(0, ma_p0[0], S, tuple(ma_repl)),
        "mb": FieldSpec(0, tuple(mb_offsets), S),
        "ea": FieldSpec(EA, _bitrange(8), S),
        "ebp": FieldSpec(EBP, _bitrange(8), S),
        "thab": FieldSpec(THAB, (0,), S, ((THAB2 - THAB,),)),
        "s_r": FieldSpec(SR, (0,), S),
        "e_r": FieldSpec(ER, _bitrange(8), S),
        "m_r": FieldSpec(P0 + 7, _bitrange(7), S),   # aliases P7..P13
    }, T)

    RC, X, RP, RQ, R5 = 0, 1, 2, 3, 4
    b = KernelBuilder()
    b.ldi(RC, T)
    b.ldi(X, THAB)
    b.ldi(RP, SR)
    b.ldi(RQ, SB)
    b.ldi(R5, P0 + 7)
    b.setpred("tag")
    with b.loop(RC, T):
        b.op("tload", X)                     # tag = both-nonzero flag
        b.op("xor", X, RQ, RP)               # s_r = sa^sb (zero result: +0)
        # product: phase j adds Ma<<j into P[j..j+8] where Mb bit j is set;
        # rq picks up its 10-row catch-up ride on the spare tload/copy fields
        rq_bumps = 10
        for j in range(n):
            if j > 0:
                b.addi(RP, -7 if j == 1 else -8)
            if rq_bumps:
                b.op("tload", X, RQ)
                rq_bumps -= 1
            else:
                b.op("tload", X)
            for _ in range(n + (0 if j == 0 else 1)):
                if j == 0:
                    if rq_bumps:
                        b.op("copy", X, RQ, RP)
                        rq_bumps -= 1
                    else:
                        b.op("copy", X, rd=RP)
                else:
                    b.op("sum", X, RP, RP)
        b.addi(RP, -1)
        b.op("tload", RP)                    # tag = P15; rp lands on eb'
        for _ in range(7):                   # mantissa pick: shift down 1
            b.op("copy", RQ, rd=R5)
        b.op("tload", X)                     # tag = flag again, carry = 0
        b.op("subb", X, RQ, R5)              # carry = P15 (borrow of 0-P15)
        b.addi(R5, 9)
        for _ in range(8):                   # e_r = ea + eb' + P15
            b.op("sum", X, RP, R5)
        b.addi(X, S - 91)
        b.addi(RP, S - 25)
        b.addi(RQ, S - 19)
        b.addi(R5, S - 25)
    b.end()
    b.expect(X, THAB + S * T)
    b.expect(RP, SR + S * T)
    b.expect(RQ, SB + S * T)
    b.expect(R5, P0 + 7 + S * T)

    def derive(ops):
        sa, ea, ma = bf16_fields(ops["a"])
        sb, eb, mb = bf16_fields(ops["b"])
        return {
            "sa": sa, "sb": sb,
            "ma": bf16_significand(ea, ma),
            "mb": bf16_significand(eb, mb),
            "ea": ea, "ebp": (eb + 129) & 0xFF,
            "thab": 1 if (ea and eb) else 0,
        }

    return Kernel(
        name="mul-bf16", layout=lay, programs=[b.words()],
        sources=[b.text()], inputs=("a", "b"), derive=derive,
        result_fields=("s_r", "e_r", "m_r"), cycles_per_tuple=112,
        registers_used=len(b.regs_used))


def bf16_result_words(kernel: Kernel, state: ArrayState,
                      count: int | None = None) -> list[int]:
    return [bf16_word(s, e, m) for s, e, m in kernel.unpack(state, count)]


# ---------------------------------------------------------------------------
# bfloat16 add

def gen_bf16_add(geometry: Geometry) -> Kernel:
    """bfloat16 add under the documented semantics: align the operand with
    the smaller exponent by a plain truncating right shift (ties pick
    operand a as the larger), add or subtract significands, renormalize, and
    flush exponent-underflow or zero results to +0.

    Per-column control flow is impossible, so every data-dependent choice is
    a predicated fixed-length block: larger-operand selection via the
    borrow of ea-eb, alignment and normalization as barrel-shift stages
    gated by the shift-amount bits.  That costs several hundred cycles per
    tuple; the straight-line program is split into <=200-word parts that the
    runner reloads at runtime.
    """
    n = 8
    per = 103
    shared = 10          # constant-one row + 9 zero rows at the top
    T = (geometry.rows - shared) // per
    if T < 1:
        raise CapacityError(f"bf16 add needs {per} rows/tuple + {shared}")
    C1 = geometry.rows - 1
    ZF = geometry.rows - shared          # 9 zero rows, never written
    # per-tuple offsets
    SA, SB, EA, EB, MA, MB = 0, 1, 2, 10, 18, 26
    D, ND, B, NB, DD = 34, 42, 50, 51, 52
    W, SM = 60, 69                       # W has a zero guard row W8
    SL, SRES, ER, AMT, INC, NF, UF = 78, 79, 80, 88, 96, 97, 98
    SS, NSS, T1, T2 = 99, 100, 101, 102

    lay = Layout(geometry, {
        "sa": FieldSpec(SA, (0,), per), "sb": FieldSpec(SB, (0,), per),
        "ea": FieldSpec(EA, _bitrange(8), per),
        "eb": FieldSpec(EB, _bitrange(8), per),
        "ma": FieldSpec(MA, _bitrange(8), per),
        "mb": FieldSpec(MB, _bitrange(8), per),
        "s_r": FieldSpec(SRES, (0,), per),
        "e_r": FieldSpec(ER, _bitrange(8), per),
        "m_r": FieldSpec(SM, _bitrange(7), per),     # aliases S0..S6
        "one": FieldSpec(C1, (0,), 0),
    }, T, metadata={"constant_fields": {"one": 1}})

    b = KernelBuilder()
    # three roving pointers; every op seeks them where needed
    RA, RB, RD = 0, 1, 2
    for r in (RA, RB, RD):
        b.ldi(r, 0)
    b.setpred("tag")

    def op(func, ra=None, rb=None, rd=None):
        if ra is not None:
            b.seek(RA, ra)
        if rb is not None:
            b.seek(RB, rb)
        if rd is not None:
            b.seek(RD, rd)
        b.op(func,
             RA if ra is not None else None,
             RB if rb is not None else None,
             RD if rd is not None else None)

    def chain(func, a0, b0, d0, count):
        for i in range(count):
            op(func, a0 + i, b0 + i, d0 + i)

    for t in range(T):
        o = t * per

        op("tload", C1)                          # tag=1, carry=0
        op("xor", o + SA, o + SB, o + SS)
        op("xnor", o + SA, o + SB, o + NSS)
        b.op("cset0")
        chain("subb", o + EA, o + EB, o + D, 8)  # d = ea-eb, borrow = (ea<eb)
        b.op("tfromc")                           # tag = borrow
        op("wr1", rd=o + B)
        b.setpred("notcarry")
        op("wr1", rd=o + NB)
        b.setpred("tag")
        op("tload", C1)
        b.op("cset0")
        chain("subb", o + EB, o + EA, o + ND, 8)

        # select larger operand L and smaller W by the borrow flag
        op("tload", o + B)
        chain("copy", o + ND, o + ND, o + DD, 8)
        chain("copy", o + EB, o + EB, o + ER, 8)
        op("copy", o + SB, rd=o + SL)
        chain("copy", o + MB, o + MB, o + SM, 8)
        chain("copy", o + MA, o + MA, o + W, 8)
        op("tload", o + NB)
        chain("copy", o + D, o + D, o + DD, 8)
        chain("copy", o + EA, o + EA, o + ER, 8)
        op("copy", o + SA, rd=o + SL)
        chain("copy", o + MA, o + MA, o + SM, 8)
        chain("copy", o + MB, o + MB, o + W, 8)

        # align W right by dd (truncating); dd >= 8 zeroes it out
        for k in (0, 1, 2):
            sh = 1 << k
            op("tload", o + DD + k)
            for i in range(8 - sh):
                op("copy", o + W + i + sh, rd=o + W + i)
            for i in range(8 - sh, 8):
                op("wr0", rd=o + W + i)
        op("tload", C1)
        op("or", o + DD + 3, o + DD + 4, o + T1)
        for k in (5, 6, 7):
            op("or", o + T1, o + DD + k, o + T1)
        op("tload", o + T1)
        for i in range(8):
            op("wr0", rd=o + W + i)

        # effective add (equal signs) / subtract (differing signs)
        op("tload", o + NSS)
        b.op("cset0")
        chain("sum", o + W, o + SM, o + SM, 9)
        op("tload", o + SS)
        b.op("cset0")
        chain("subb", o + SM, o + W, o + SM, 9)
        b.setpred("carry")
        op("wr1", rd=o + NF)                     # result went negative
        b.setpred("tag")
        op("tload", o + NF)
        b.op("cset0")
        chain("subb", ZF, o + SM, o + SM, 9)     # negate
        op("tload", C1)
        op("xor", o + SL, o + NF, o + SRES)

        # normalize: one right shift if S8, else left shifts of 4/2/1
        op("copy", o + SM + 8, rd=o + INC)
        op("tload", o + SM + 8)
        for i in range(8):
            op("copy", o + SM + i + 1, rd=o + SM + i)
        op("tload", C1)
        op("nor", o + SM + 7, o + SM + 6, o + T1)
        op("nor", o + SM + 5, o + SM + 4, o + T2)
        op("and", o + T1, o + T2, o + AMT + 2)
        op("tload", o + AMT + 2)
        for i in (7, 6, 5, 4):
            op("copy", o + SM + i - 4, rd=o + SM + i)
        for i in (3, 2, 1, 0):
            op("wr0", rd=o + SM + i)
        op("tload", C1)
        op("nor", o + SM + 7, o + SM + 6, o + AMT + 1)
        op("tload", o + AMT + 1)
        for i in (7, 6, 5, 4, 3, 2):
            op("copy", o + SM + i - 2, rd=o + SM + i)
        for i in (1, 0):
            op("wr0", rd=o + SM + i)
        op("tload", C1)
        op("not", o + SM + 7, rd=o + AMT)
        op("tload", o + AMT)
        for i in (7, 6, 5, 4, 3, 2, 1):
            op("copy", o + SM + i - 1, rd=o + SM + i)
        op("wr0", rd=o + SM)

        # exponent: e_r = eL + inc - shift_amount; flush on underflow/zero
        op("tload", o + INC)
        b.op("cset1")                            # carry = inc
        b.setpred("always")
        chain("sum", ZF, o + ER, o + ER, 8)
        b.op("cset0")
        chain("subb", o + ER, o + AMT, o + ER, 8)
        b.setpred("carry")
        op("wr1", rd=o + UF)                     # exponent went below 1
        b.setpred("always")
        op("or", o + ER, o + ER + 1, o + T1)
        for k in range(2, 8):
            op("or", o + T1, o + ER + k, o + T1)
        op("not", o + SM + 7, rd=o + T2)
        op("not", o + T1, rd=o + T1)
        op("or", o + T2, o + T1, o + T1)
        op("or", o + T1, o + UF, o + T1)         # flush-to-zero flag
        b.setpred("tag")
        op("tload", o + T1)
        op("wr0", rd=o + SRES)
        for i in range(8):
            op("wr0", rd=o + ER + i)
        for i in range(7):
            op("wr0", rd=o + SM + i)
    b.end()

    # split the straight-line program into instruction-memory sized parts
    all_lines = [ln for ln in b.lines]
    parts, cur = [], []
    for ln in all_lines:
        if ln.strip() == "end":
            continue
        cur.append(ln)
        if len(cur) == 199:
            parts.append(cur + ["end"])
            cur = []
    parts.append(cur + ["end"])
    sources = ["\n".join(p) + "\n" for p in parts]
    programs = [isa.assemble(src) for src in sources]

    total = sum(len(p) for p in programs)

    def derive(ops):
        sa, ea, ma = bf16_fields(ops["a"])
        sb, eb, mb = bf16_fields(ops["b"])
        return {"sa": sa, "sb": sb, "ea": ea, "eb": eb,
                "ma": bf16_significand(ea, ma),
                "mb": bf16_significand(eb, mb)}

    return Kernel(
        name="add-bf16", layout=lay, programs=programs, sources=sources,
        inputs=("a", "b"), derive=derive,
        result_fields=("s_r", "e_r", "m_r"),
        cycles_per_tuple=(total - len(programs)) // T,
        registers_used=len(b.regs_used))


# ---------------------------------------------------------------------------
# utilities: copy, element-wise logic, search

def gen_copy(n: int, geometry: Geometry) -> Kernel:
    T = geometry.rows // (2 * n)
    if T < 1:
        raise CapacityError(f"copy int{n} needs {2 * n} rows/tuple")
    lay = Layout(geometry, {
        "a": FieldSpec(0, _bitrange(n), n),
        "r": FieldSpec(n * T, _bitrange(n), n),
    }, T)
    b = KernelBuilder()
    b.ldi(0, T)
    b.ldi(1, 0)
    b.load_const(2, n * T)
    with b.loop(0, T):
        for _ in range(n):
            b.op("copy", 1, rd=2)
    b.end()
    mask = (1 << n) - 1
    return Kernel(name=f"copy-int{n}", layout=lay, programs=[b.words()],
                  sources=[b.text()], inputs=("a",),
                  derive=lambda ops: {"a": ops["a"] & mask},
                  result_fields=("r",), cycles_per_tuple=n,
                  registers_used=len(b.regs_used))


VLOGIC_OPS = ("and", "or", "xor", "nor")


def gen_vlogic(logic_op: str, n: int, geometry: Geometry) -> Kernel:
    if logic_op not in VLOGIC_OPS:
        raise RangeError(f"vector logic op must be one of {VLOGIC_OPS}")
    T = geometry.rows // (3 * n)
    if T < 1:
        raise CapacityError(f"vlogic int{n} needs {3 * n} rows/tuple")
    lay = Layout(geometry, {
        "a": FieldSpec(0, _bitrange(n), n),
        "b": FieldSpec(n * T, _bitrange(n), n),
        "r": FieldSpec(2 * n * T, _bitrange(n), n),
    }, T)
    b = KernelBuilder()
    b.ldi(0, T)
    b.ldi(1, 0)
    b.load_const(2, n * T)
    b.load_const(3, 2 * n * T)
    with b.loop(0, T):
        for _ in range(n):
            b.op(logic_op, 1, 2, 3)
    b.end()
    mask = (1 << n) - 1
    return Kernel(name=f"{logic_op}-int{n}", layout=lay, programs=[b.words()],
                  sources=[b.text()], inputs=("a", "b"),
                  derive=lambda ops: {"a": ops["a"] & mask,
                                      "b": ops["b"] & mask},
                  result_fields=("r",), cycles_per_tuple=n,
                  registers_used=len(b.regs_used))


def gen_search(n: int, key: int, geometry: Geometry) -> Kernel:
    """Set a per-tuple match bit where the stored field equals the key.

    The key is broadcast into a shared scratch field at pack time.  Each
    tuple XNORs its field against the key bit by bit, folds the bit matches
    with an AND chain whose destination walks forward, loads the fold result
    into the tag, and writes the match bit under tag predication.
    """
    if not (0 <= key < (1 << n)):
        raise RangeError(f"key {key} does not fit in {n} bits")
    per = 2 * n + 1
    T = (geometry.rows - n) // per       # n shared rows hold the key
    if T < 1:
        raise CapacityError(f"search int{n} needs {per} rows/tuple + {n}")
    kbase = T * per
    lay = Layout(geometry, {
        "f": FieldSpec(0, _bitrange(n), per),
        "t": FieldSpec(n, _bitrange(n), per),
        "match": FieldSpec(2 * n, (0,), per),
        "key": FieldSpec(kbase, _bitrange(n), 0),
    }, T, metadata={"constant_fields": {"key": key}})

    b = KernelBuilder()
    RC, R1, R2, R3, RK = 0, 1, 2, 3, 4
    b.ldi(RC, T)
    b.ldi(R1, 0)                         # walks f bits, then the fold chain
    b.ldi(R2, n)                         # walks t bits, then the match row
    b.ldi(R3, n + 1)                     # fold destination
    b.load_const(RK, kbase)
    with b.loop(RC, T):
        for _ in range(n):
            b.op("xnor", R1, RK, R2)     # t_i = (f_i == key_i)
        for _ in range(n - 1):
            b.op("and", R1, R3, R3)      # t_{i+1} &= t_i
        b.op("tload", R1)                # tag = full match; R1 -> match row
        b.setpred("tag")
        b.op("wr1", rd=R2)
        b.setpred("always")
        b.addi(R1, 1)
        b.addi(R2, n)
        b.addi(R3, n + 2)
        b.addi(RK, -n)
    b.expect(R1, T * per)
    b.expect(R2, n + T * per)
    b.expect(RK, kbase)
    b.end()
    mask = (1 << n) - 1
    return Kernel(name=f"search-int{n}", layout=lay, programs=[b.words()],
                  sources=[b.text()], inputs=("f",),
                  derive=lambda ops: {"f": ops["f"] & mask},
                  result_fields=("match",), cycles_per_tuple=2 * n + 7,
                  registers_used=len(b.regs_used))


# ---------------------------------------------------------------------------
# front door

def make_kernel(op: str, geometry: Geometry, width_n: int = 0,
                acc_width: int = 32, key: int = 0,
                logic_op: str = "xor") -> Kernel:
    op = op.replace("_", "-").lower()
    if op in ("add", "sub"):
        return gen_addsub(op, width_n, geometry)
    if op == "mul":
        return gen_mul(width_n, geometry)
    if op == "mac":
        return gen_mac(width_n, acc_width, geometry)
    if op == "dot":
        return gen_dot(geometry, width_n or 4, acc_width)
    if op == "bf16-mul":
        return gen_bf16_mul(geometry)
    if op == "bf16-add":
        return gen_bf16_add(geometry)
    if op == "copy":
        return gen_copy(width_n, geometry)
    if op == "vlogic":
        return gen_vlogic(logic_op, width_n, geometry)
    if op == "search":
        return gen_search(width_n, key, geometry)
    raise RangeError(f"unknown kernel op {op!r}")


def layout_json(kernel: Kernel) -> str:
    return json.dumps(kernel.layout.to_json(), indent=2, sort_keys=True)
