"""Helper for writing microcode by hand: emits assembly text while tracking
where every register points.

Bit-serial kernels live or die by pointer bookkeeping: every array
instruction post-increments the registers it names, so after a burst of
micro-ops each register has walked somewhere new.  The builder simulates
those walks (including through hardware loops) so kernel generators can say
``seek(reg, row)`` and get the cheapest ``addi`` correction — or an
assertion error at build time if the schedule drifted from the plan.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

from .array import Func, NO_OPERAND
from . import isa
from .isa import REG_MASK, _ARRAY_SHAPES


class BuildError(Exception):
    pass


@dataclass
class _LoopFrame:
    count: int
    snapshot: list[int | None]
    reset: set[int] = field(default_factory=set)


@dataclass
class KernelBuilder:
    lines: list[str] = field(default_factory=list)
    pos: list[int | None] = field(default_factory=lambda: [None] * isa.NUM_REGS)
    regs_used: set[int] = field(default_factory=set)
    _frames: list[_LoopFrame] = field(default_factory=list)
    _instr_count: int = 0

    # -- emission primitives --------------------------------------------

    def _emit(self, line: str):
        self.lines.append(line)
        self._instr_count += 1

    def comment(self, text: str):
        self.lines.append(f"; {text}")

    @property
    def instruction_count(self) -> int:
        return self._instr_count

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def words(self) -> list[int]:
        return isa.assemble(self.text())

    # -- register tracking ------------------------------------------------

    def _touch(self, reg: int):
        self.regs_used.add(reg)

    def _set(self, reg: int, value: int):
        self._touch(reg)
        self.pos[reg] = value & REG_MASK
        for frame in self._frames:
            frame.reset.add(reg)

    def _bump(self, reg: int, delta: int = 1):
        self._touch(reg)
        if self.pos[reg] is not None:
            self.pos[reg] = (self.pos[reg] + delta) & REG_MASK

    def at(self, reg: int) -> int:
        if self.pos[reg] is None:
            raise BuildError(f"r{reg} position is unknown")
        return self.pos[reg]

    def expect(self, reg: int, value: int):
        if self.at(reg) != value & REG_MASK:
            raise BuildError(f"r{reg} is at {self.at(reg)}, expected "
                             f"{value & REG_MASK}")

    # -- scalar instructions ----------------------------------------------

    def ldi(self, reg: int, imm: int):
        if not (0 <= imm < 1024):
            raise BuildError(f"ldi immediate {imm} out of range; use load_const")
        self._emit(f"ldi r{reg}, {imm}")
        self._set(reg, imm)

    def addi(self, reg: int, delta: int):
        if delta == 0:
            return
        while delta:
            step = max(-512, min(511, delta))
            self._emit(f"addi r{reg}, {step}")
            self._bump(reg, step)
            delta -= step

    def load_const(self, reg: int, value: int):
        """Point a register at an arbitrary 12-bit value (1..3 instructions)."""
        value &= REG_MASK
        self.ldi(reg, min(value, 1023))
        self.addi(reg, value - min(value, 1023))

    def seek(self, reg: int, target: int):
        """Emit the shortest addi chain moving the register to ``target``."""
        target &= REG_MASK
        cur = self.at(reg)
        delta = target - cur
        # wrap-around may be shorter
        if delta > REG_MASK // 2:
            delta -= REG_MASK + 1
        elif delta < -(REG_MASK // 2):
            delta += REG_MASK + 1
        self.addi(reg, delta)
        self.pos[reg] = target

    def alu(self, name: str, rd: int, rs: int):
        if name not in isa.AluOp.NAMES:
            raise BuildError(f"unknown alu op {name!r}")
        self._emit(f"{name} r{rd}, r{rs}")
        self._touch(rs)
        self._set(rd, 0)
        self.pos[rd] = None  # value depends on runtime data

    def setpred(self, which: str):
        if which not in isa.PRED_NAMES:
            raise BuildError(f"unknown predicate {which!r}")
        self._emit(f"setpred {which}")

    def end(self):
        self._emit("end")

    # -- array micro-ops ----------------------------------------------------

    def op(self, func: Func | str, ra: int | None = None, rb: int | None = None,
           rd: int | None = None):
        """Emit one array instruction.  Unspecified fields take the func's
        defaults (which matter: they are bumped too)."""
        if isinstance(func, str):
            func = Func[func.upper()]
        if func in NO_OPERAND:
            if (ra, rb, rd) != (None, None, None):
                raise BuildError(f"{func.name.lower()} takes no registers")
            self._emit(func.name.lower())
            return
        named, optional = _ARRAY_SHAPES[func]
        fields = {"ra": ra, "rb": rb, "rd": rd}
        for f in named:
            if fields[f] is None:
                raise BuildError(f"{func.name.lower()} requires {f}")
        for f, src in optional:
            if fields[f] is None:
                fields[f] = fields[src]
        instr = isa.ArrayInstr(func, fields["ra"], fields["rb"], fields["rd"])
        # reuse the disassembler so text is minimal and round-trips
        self._emit(isa.disassemble([isa.encode(instr)]).strip())
        for r in {fields["ra"], fields["rb"], fields["rd"]}:
            self._bump(r)

    # -- hardware loops -------------------------------------------------

    @contextmanager
    def loop(self, reg: int, count: int):
        """Emit ``loop``/``endloop``; ``count`` is the value the register
        holds at runtime, used to advance the simulated positions."""
        if count < 1:
            raise BuildError("builder loops need a static count >= 1")
        if len(self._frames) >= isa.MAX_LOOP_DEPTH:
            raise BuildError(f"loops nested deeper than {isa.MAX_LOOP_DEPTH}")
        self._touch(reg)
        self._emit(f"loop r{reg}")
        frame = _LoopFrame(count, list(self.pos))
        self._frames.append(frame)
        yield
        self._frames.pop()
        self.lines.append("endloop")
        for r in range(isa.NUM_REGS):
            if r in frame.reset:
                continue  # reloaded each iteration; first-pass value is final
            start, now = frame.snapshot[r], self.pos[r]
            if start is None or now is None:
                continue
            self.pos[r] = (start + count * (now - start)) & REG_MASK
