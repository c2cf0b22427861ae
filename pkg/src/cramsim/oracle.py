"""Reference arithmetic and the equivalence checker.

The reference functions below are written from the documented operation
semantics alone — plain Python integer arithmetic, no bit-line micro-ops, no
layouts — so a kernel bug and an oracle bug cannot share a cause.  The
checker packs operands, runs the real simulator, unpacks, and diffs against
the references.

bfloat16 reference semantics (shared contract with the kernels):
truncation rounding everywhere, subnormal inputs flush to zero, exponent
0xFF (NaN/Inf) inputs are rejected.  Multiply: a zero operand gives +0;
otherwise exponents wrap mod 256.  Add: alignment is a plain truncating
right shift of the smaller-exponent operand (on an equal-exponent tie,
operand a counts as the larger); results that underflow the exponent or
cancel to zero flush to +0.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .array import Geometry, STANDARD_GEOMETRIES
from .controller import BlockState
from . import kernels


# ---------------------------------------------------------------------------
# fixed-point references

def ref_add(n: int, a: int, b: int) -> int:
    return (a + b) & ((1 << n) - 1)


def ref_sub(n: int, a: int, b: int) -> int:
    return (a - b) & ((1 << n) - 1)


def ref_mul(n: int, a: int, b: int) -> int:
    m = (1 << n) - 1
    return ((a & m) * (b & m)) & ((1 << (2 * n)) - 1)


def ref_mac(n: int, acc_width: int, a: int, b: int, acc: int) -> int:
    m = (1 << n) - 1
    return (acc + (a & m) * (b & m)) & ((1 << acc_width) - 1)


def ref_dot(a_vec: list[int], b_vec: list[int], n: int = 4,
            acc_width: int = 32) -> int:
    m = (1 << n) - 1
    total = 0
    for a, b in zip(a_vec, b_vec):
        total += (a & m) * (b & m)
    return total & ((1 << acc_width) - 1)


def ref_copy(n: int, a: int) -> int:
    return a & ((1 << n) - 1)


def ref_logic(op: str, n: int, a: int, b: int) -> int:
    m = (1 << n) - 1
    a, b = a & m, b & m
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "nor":
        return (~(a | b)) & m
    raise ValueError(f"unknown logic op {op!r}")


def ref_search(n: int, key: int, value: int) -> int:
    return 1 if (value & ((1 << n) - 1)) == (key & ((1 << n) - 1)) else 0


# ---------------------------------------------------------------------------
# bfloat16 references

def _bf16_split(word: int) -> tuple[int, int, int]:
    s, e, m = (word >> 15) & 1, (word >> 7) & 0xFF, word & 0x7F
    if e == 0xFF:
        raise ValueError("exponent 0xFF (NaN/Inf) is not supported")
    if e == 0:
        m = 0
    return s, e, m


def _bf16_join(s: int, e: int, m: int) -> int:
    return (s << 15) | ((e & 0xFF) << 7) | (m & 0x7F)


def ref_bf16_mul(wa: int, wb: int) -> int:
    sa, ea, ma = _bf16_split(wa)
    sb, eb, mb = _bf16_split(wb)
    if ea == 0 or eb == 0:
        return 0                                   # +0
    p = (0x80 | ma) * (0x80 | mb)                  # 16-bit product
    top = (p >> 15) & 1
    mantissa = (p >> (7 + top)) & 0x7F
    exponent = (ea + eb + 129 + top) & 0xFF        # 129 == -127 mod 256
    return _bf16_join(sa ^ sb, exponent, mantissa)


def ref_bf16_add(wa: int, wb: int) -> int:
    sa, ea, ma = _bf16_split(wa)
    sb, eb, mb = _bf16_split(wb)
    big_b = ea < eb                                # tie keeps operand a large
    if big_b:
        e_l, s_l = eb, sb
        large = 0 if eb == 0 else 0x80 | mb
        small = 0 if ea == 0 else 0x80 | ma
    else:
        e_l, s_l = ea, sa
        large = 0 if ea == 0 else 0x80 | ma
        small = 0 if eb == 0 else 0x80 | mb
    small >>= abs(ea - eb)                         # truncating alignment
    if sa == sb:
        total, neg = large + small, 0
    else:
        total = large - small
        neg = 1 if total < 0 else 0
        total = abs(total)
    s_r = s_l ^ neg
    inc = 1 if total >= 256 else 0
    total >>= inc
    amount = 0
    for sh in (4, 2, 1):                           # left-normalize 8-bit value
        if total & ((0xFF << (8 - sh)) & 0xFF) == 0:
            total = (total << sh) & 0xFF
            amount += sh
    e_r = (e_l + inc) & 0xFF
    underflow = e_r < amount
    e_r = (e_r - amount) & 0xFF
    if underflow or e_r == 0 or not (total & 0x80):
        return 0                                   # flush to +0
    return _bf16_join(s_r, e_r, total & 0x7F)


# ---------------------------------------------------------------------------
# equivalence checking

EXHAUSTIVE = "exhaustive"
RANDOM = "random"


@dataclass
class CheckReport:
    spec: dict
    mode: str
    seed: int | None
    cases: int
    cycles: int
    failures: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_json(self) -> dict:
        return {"spec": self.spec, "mode": self.mode, "seed": self.seed,
                "cases": self.cases, "cycles": self.cycles,
                "passed": self.passed, "failures": self.failures}

    def __str__(self):
        return json.dumps(self.to_json(), indent=2)


MAX_COUNTEREXAMPLES = 10


def run_kernel(kernel: kernels.Kernel, *operand_vectors) -> tuple:
    """Pack, run (reloading multi-part programs), return (block, stats)."""
    block = BlockState(kernel.layout.geometry)
    block.state = kernel.pack(*operand_vectors)
    stats = block.run_parts(kernel.programs)
    if stats.faulted:
        raise RuntimeError(f"kernel {kernel.name} faulted: "
                           f"{stats.fault_reason}")
    return block, stats


def _random_bf16(rng: random.Random) -> int:
    """A valid bfloat16 word; exponents cluster so add paths all get hit."""
    s = rng.getrandbits(1)
    kind = rng.randrange(8)
    if kind == 0:
        return s << 15                             # signed zero
    if kind < 4:
        e = rng.randrange(120, 136)                # near-collision exponents
    else:
        e = rng.randrange(1, 255)
    return (s << 15) | (e << 7) | rng.getrandbits(7)


def _operand_vectors(op, n, mode, count, seed, key):
    rng = random.Random(seed)
    if op in ("bf16-add", "bf16-mul"):
        if mode == EXHAUSTIVE:
            raise ValueError("bfloat16 checks are sampling-based; "
                             "use mode='random'")
        return [[_random_bf16(rng) for _ in range(count)] for _ in range(2)]
    width = 1 << n
    if mode == EXHAUSTIVE:
        pairs = [(a, b) for a in range(width) for b in range(width)]
    else:
        pairs = [(rng.randrange(width), rng.randrange(width))
                 for _ in range(count)]
    vecs = [[p[0] for p in pairs], [p[1] for p in pairs]]
    if op == "mac":
        accs = ([rng.randrange(width) for _ in pairs] if mode == EXHAUSTIVE
                else [rng.getrandbits(32) for _ in pairs])
        vecs.append(accs)
    if op in ("copy", "search"):
        vecs = vecs[:1]
        if op == "search":
            # make sure matches actually occur
            vecs[0] = [key if rng.random() < 0.3 else v for v in vecs[0]]
    return vecs


def _expected(op, n, acc_width, key, logic_op, ops):
    if op == "add":
        return ref_add(n, *ops)
    if op == "sub":
        return ref_sub(n, *ops)
    if op == "mul":
        return ref_mul(n, *ops)
    if op == "mac":
        return ref_mac(n, acc_width, *ops)
    if op == "copy":
        return ref_copy(n, *ops)
    if op == "vlogic":
        return ref_logic(logic_op, n, *ops)
    if op == "search":
        return ref_search(n, key, *ops)
    if op == "bf16-mul":
        return ref_bf16_mul(*ops)
    if op == "bf16-add":
        return ref_bf16_add(*ops)
    raise ValueError(f"unknown op {op!r}")


def check_equivalence(op: str, width_n: int = 0,
                      geometry: Geometry | None = None,
                      mode: str = RANDOM, count: int = 10000,
                      seed: int | None = 0, acc_width: int = 32,
                      key: int = 0, logic_op: str = "xor") -> CheckReport:
    """Drive the simulator against the reference for one operation.

    ``mode='exhaustive'`` enumerates every operand pair (meant for widths
    <= 5); ``mode='random'`` draws ``count`` operand tuples from ``seed``.
    Vectors larger than one array image are processed in capacity-sized
    chunks.  At most 10 counterexamples are recorded.
    """
    op = op.replace("_", "-").lower()
    geometry = geometry or Geometry(*STANDARD_GEOMETRIES[0])
    kernel = kernels.make_kernel(op, geometry, width_n=width_n,
                                 acc_width=acc_width, key=key,
                                 logic_op=logic_op)
    if op == "dot":
        return _check_dot(kernel, mode, count, seed)

    vecs = _operand_vectors(op, width_n, mode, count, seed, key)
    total = len(vecs[0])
    cap = kernel.layout.elements_total
    report = CheckReport(
        spec={"op": op, "width": width_n, "acc_width": acc_width,
              "geometry": str(geometry), "kernel": kernel.name},
        mode=mode, seed=seed if mode == RANDOM else None,
        cases=total, cycles=0)

    for lo in range(0, total, cap):
        chunk = [v[lo:lo + cap] for v in vecs]
        block, stats = run_kernel(kernel, *chunk)
        report.cycles += stats.cycles
        got = kernel.unpack(block.state, len(chunk[0]))
        for i, g in enumerate(got):
            ops = tuple(v[i] for v in chunk)
            want = _expected(op, width_n, acc_width, key, logic_op, ops)
            if op.startswith("bf16"):
                g = _bf16_join(*g)
            if g != want:
                if len(report.failures) < MAX_COUNTEREXAMPLES:
                    report.failures.append(
                        {"index": lo + i, "inputs": list(ops),
                         "expected": want, "got": g})
    return report


def _check_dot(kernel: kernels.Kernel, mode, count, seed) -> CheckReport:
    lay = kernel.layout
    cols = lay.geometry.cols
    cap = lay.elements_total
    rng = random.Random(seed)
    if mode == EXHAUSTIVE:
        pairs = [(a, b) for a in range(16) for b in range(16)]
    else:
        pairs = [(rng.randrange(16), rng.randrange(16)) for _ in range(count)]
    report = CheckReport(
        spec={"op": "dot", "width": 4, "acc_width": 32,
              "geometry": str(lay.geometry), "kernel": kernel.name},
        mode=mode, seed=seed if mode == RANDOM else None,
        cases=len(pairs), cycles=0)
    for lo in range(0, len(pairs), cap):
        chunk = pairs[lo:lo + cap]
        a = [p[0] for p in chunk]
        b = [p[1] for p in chunk]
        block, stats = run_kernel(kernel, a, b)
        report.cycles += stats.cycles
        got = kernels.dot_unpack_columns(kernel, block.state)
        for col in range(cols):
            ca = [a[j] for j in range(col, len(chunk), cols)]
            cb = [b[j] for j in range(col, len(chunk), cols)]
            want = ref_dot(ca, cb)
            if got[col] != want:
                if len(report.failures) < MAX_COUNTEREXAMPLES:
                    report.failures.append(
                        {"index": lo, "column": col,
                         "inputs": [ca, cb],
                         "expected": want, "got": got[col]})
    return report
