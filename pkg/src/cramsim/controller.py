"""Block controller: instruction memory, register file, sequencer, pins.

The block has two modes.  In storage mode it is a plain dual-port RAM; the
top address bit selects between the data array (addresses 0..rows-1) and a
256-word instruction memory window at 2048..2303, so a program can be
loaded — or reloaded at runtime — through the ordinary write port.  In
compute mode a start pulse runs the sequencer from pc 0 until an ``end``
instruction or a fault.

The sequencer executes one instruction per cycle.  Hardware loops keep the
back edge free: ``loop rS, N`` captures R[rS] as the trip count in its own
cycle, after which each iteration of the body costs exactly body-length
cycles.  The captured count lives in the loop stack, not the register, so
the register is immediately reusable inside the body.

Array instructions apply the micro-op using register values as row
addresses, then post-increment every register the instruction names
(mod 4096, once per distinct register).

A fault (bad row address, equal source rows, loop overflow, pc running off
the end, mode switch while running) stops the sequencer, raises ``done``,
and latches a sticky fault flag with a reason string.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from . import array as arr
from . import isa
from .array import (ArrayState, ColumnLatches, CramError, Func, Geometry,
                    MicroOp, NO_OPERAND, Pred, configure)
from .isa import (Addi, Alu, AluOp, ArrayInstr, Bnz, End, Ldi, Loop, SetPred,
                  IMEM_WORDS, MAX_LOOP_DEPTH, NUM_REGS, REG_MASK)


class Mode(IntEnum):
    STORAGE = 0
    COMPUTE = 1


#: storage-mode addresses with this bit set select the instruction memory
IMEM_ADDR_BASE = 2048


class FaultError(CramError):
    pass


@dataclass
class LoopFrame:
    start_pc: int
    remaining: int
    body_len: int


@dataclass
class PortInputs:
    mode: Mode = Mode.STORAGE
    start: bool = False
    address: int = 0
    data_in: int = 0
    write_en: bool = False


@dataclass
class PortOutputs:
    data_out: int = 0
    done: bool = True


@dataclass
class RunStats:
    cycles: int
    faulted: bool
    fault_reason: str | None
    pred_final: Pred
    register_dump: list[int]

    def to_json(self) -> dict:
        out = {
            "cycles": self.cycles,
            "faulted": self.faulted,
            "pred_final": self.pred_final.name.lower(),
            "registers": list(self.register_dump),
        }
        if self.fault_reason is not None:
            out["fault_reason"] = self.fault_reason
        return out


@dataclass
class BlockState:
    geometry: Geometry
    state: ArrayState = None
    latches: ColumnLatches = None
    imem: list[int] = field(default_factory=lambda: [0] * IMEM_WORDS)
    regs: list[int] = field(default_factory=lambda: [0] * NUM_REGS)
    pc: int = 0
    loop_stack: list[LoopFrame] = field(default_factory=list)
    mode: Mode = Mode.STORAGE
    running: bool = False
    faulted: bool = False
    fault_reason: str | None = None
    cycles: int = 0
    _last_read: int = 0
    _decoded: list = field(default_factory=lambda: [None] * IMEM_WORDS)

    def __post_init__(self):
        if self.state is None:
            self.state = configure(self.geometry)
        if self.latches is None:
            self.latches = ColumnLatches.create(self.geometry.cols)

    # -- program loading ----------------------------------------------------

    def load_program(self, words: list[int]):
        """Write a program into instruction memory (storage-mode path,
        but exposed directly for convenience; costs no compute cycles)."""
        if self.running:
            raise FaultError("program load while a kernel is running")
        if len(words) > IMEM_WORDS:
            raise isa.AsmError(f"program is {len(words)} words, instruction "
                               f"memory holds {IMEM_WORDS}")
        for i, w in enumerate(words):
            if not (0 <= w < 0x10000):
                raise isa.EncodingError(f"word {i} = {w:#x} is not 16 bits")
            self.imem[i] = w
        for i in range(len(words), IMEM_WORDS):
            self.imem[i] = 0
        self._decoded = [None] * IMEM_WORDS

    # -- fault handling -----------------------------------------------------

    def _fault(self, reason: str):
        self.faulted = True
        self.fault_reason = reason
        self.running = False

    # -- pin-level interface ------------------------------------------------

    def tick(self, pins: PortInputs) -> PortOutputs:
        """Advance the block one clock with the given pin values."""
        if pins.mode != self.mode:
            if self.running:
                self._fault("mode switched while a program was running")
                return PortOutputs(data_out=self._last_read, done=True)
            self.mode = pins.mode

        if self.mode == Mode.STORAGE:
            if pins.address >= IMEM_ADDR_BASE:
                idx = pins.address - IMEM_ADDR_BASE
                if idx >= IMEM_WORDS:
                    self._fault(f"storage address {pins.address} beyond "
                                f"instruction memory")
                    return PortOutputs(data_out=self._last_read, done=True)
                if pins.write_en:
                    self.imem[idx] = pins.data_in & 0xFFFF
                    self._decoded[idx] = None
                else:
                    self._last_read = self.imem[idx]
            else:
                try:
                    if pins.write_en:
                        arr.storage_write(self.state, pins.address, pins.data_in)
                    else:
                        self._last_read = arr.storage_read(self.state,
                                                           pins.address)
                except CramError as e:
                    self._fault(str(e))
            return PortOutputs(data_out=self._last_read, done=True)

        # compute mode
        if pins.start and not self.running and not self.faulted:
            self.pc = 0
            self.loop_stack.clear()
            self.running = True
        if self.running:
            self.step()
        # while computing, data_out doubles as a diagnostics cycle counter
        out = self.cycles if self.running else self._last_read
        return PortOutputs(data_out=out & ((1 << self.geometry.cols) - 1),
                           done=not self.running)

    # -- sequencer ----------------------------------------------------------

    def step(self):
        """Execute one instruction (one compute cycle)."""
        if not self.running:
            raise FaultError("step() while the sequencer is idle")
        if not (0 <= self.pc < IMEM_WORDS):
            self._fault(f"pc {self.pc} ran off instruction memory")
            return
        self.cycles += 1
        instr = self._decoded[self.pc]
        if instr is None:
            try:
                instr = isa.decode(self.imem[self.pc])
            except isa.EncodingError as e:
                self._fault(f"pc {self.pc}: {e}")
                return
            self._decoded[self.pc] = instr
        next_pc = self.pc + 1

        if isinstance(instr, ArrayInstr):
            if instr.func in NO_OPERAND:
                arr.exec_microop(self.state, self.latches, MicroOp(instr.func))
            else:
                rows = [self.regs[instr.ra], self.regs[instr.rb],
                        self.regs[instr.rd]]
                if any(r >= self.geometry.rows for r in rows):
                    self._fault(
                        f"pc {self.pc}: {instr.func.name.lower()} row address "
                        f"{max(rows)} outside 0..{self.geometry.rows - 1}")
                    return
                try:
                    arr.exec_microop(self.state, self.latches,
                                     MicroOp(instr.func, *rows))
                except CramError as e:
                    self._fault(f"pc {self.pc}: {e}")
                    return
                for r in {instr.ra, instr.rb, instr.rd}:
                    self.regs[r] = (self.regs[r] + 1) & REG_MASK
        elif isinstance(instr, Ldi):
            self.regs[instr.rd] = instr.imm
        elif isinstance(instr, Addi):
            self.regs[instr.rd] = (self.regs[instr.rd] + instr.imm) & REG_MASK
        elif isinstance(instr, Loop):
            count = self.regs[instr.rs]
            if count == 0:
                next_pc = self.pc + 1 + instr.body_len
            else:
                if len(self.loop_stack) >= MAX_LOOP_DEPTH:
                    self._fault(f"pc {self.pc}: loops nested deeper than "
                                f"{MAX_LOOP_DEPTH}")
                    return
                self.loop_stack.append(
                    LoopFrame(self.pc + 1, count, instr.body_len))
        elif isinstance(instr, Bnz):
            if self.regs[instr.rs] != 0:
                next_pc = self.pc + 1 + instr.offset
        elif isinstance(instr, Alu):
            a, b = self.regs[instr.rd], self.regs[instr.rs]
            if instr.sub == AluOp.MOV:
                r = b
            elif instr.sub == AluOp.ADD:
                r = a + b
            elif instr.sub == AluOp.SUB:
                r = a - b
            elif instr.sub == AluOp.AND:
                r = a & b
            elif instr.sub == AluOp.OR:
                r = a | b
            elif instr.sub == AluOp.XOR:
                r = a ^ b
            else:  # SLT, unsigned
                r = 1 if a < b else 0
            self.regs[instr.rd] = r & REG_MASK
        elif isinstance(instr, SetPred):
            self.latches.pred = instr.pred
        else:  # End
            if self.loop_stack:
                self._fault(f"pc {self.pc}: end inside an open loop")
                return
            self.running = False
            return

        # free back edge: the loop hardware redirects the pc in the same
        # cycle as the last body instruction
        while self.loop_stack:
            frame = self.loop_stack[-1]
            if next_pc != frame.start_pc + frame.body_len:
                break
            frame.remaining -= 1
            if frame.remaining > 0:
                next_pc = frame.start_pc
                break
            self.loop_stack.pop()
        self.pc = next_pc

    # -- convenience runners ------------------------------------------------

    def run(self, words: list[int] | None = None, max_cycles: int = 10_000_000,
            reset_latches: bool = True) -> RunStats:
        """Load (optionally) and run a program to completion.

        Counts compute cycles only; program loading and data transfers go
        through the storage port and are excluded.  Latches and predication
        reset at start unless this run continues a previous program part.
        """
        if words is not None:
            self.load_program(words)
        self.mode = Mode.COMPUTE
        if reset_latches:
            self.latches.reset()
        self.faulted = False
        self.fault_reason = None
        start_cycles = self.cycles
        self.pc = 0
        self.loop_stack.clear()
        self.running = True
        while self.running:
            if self.cycles - start_cycles >= max_cycles:
                self._fault(f"exceeded {max_cycles} cycles")
                break
            self.step()
        return RunStats(cycles=self.cycles - start_cycles,
                        faulted=self.faulted,
                        fault_reason=self.fault_reason,
                        pred_final=self.latches.pred,
                        register_dump=list(self.regs))

    def run_parts(self, parts: list[list[int]],
                  max_cycles: int = 10_000_000) -> RunStats:
        """Run a multi-part program: each part is reloaded into instruction
        memory through the storage port (not counted as compute cycles) and
        the array, latches and registers carry over between parts."""
        total = 0
        last = None
        for i, words in enumerate(parts):
            last = self.run(words, max_cycles=max_cycles,
                            reset_latches=(i == 0))
            total += last.cycles
            if last.faulted:
                break
        return RunStats(cycles=total, faulted=last.faulted,
                        fault_reason=last.fault_reason,
                        pred_final=last.pred_final,
                        register_dump=last.register_dump)
