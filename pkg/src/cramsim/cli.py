"""Command-line front end: assemble/disassemble, kernel generation,
simulation runs with the full pin handshake, oracle verification, and
benchmark report emission.

Exit codes: 0 success, 1 usage error, 2 input/format error,
3 verification failure, 4 timeout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys

from . import costmodel, isa, kernels, oracle
from .array import CramError, Geometry, STANDARD_GEOMETRIES
from .controller import (BlockState, IMEM_ADDR_BASE, IMEM_WORDS, Mode,
                         PortInputs, RunStats, FaultError)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_VERIFY, EXIT_TIMEOUT = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _geometry(text: str) -> Geometry:
    try:
        return Geometry.parse(text)
    except CramError as e:
        raise CliError(str(e))


def _write(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# asm / disasm

def cmd_asm(args) -> int:
    try:
        with open(args.source) as fh:
            source = fh.read()
    except OSError as e:
        raise CliError(str(e))
    try:
        words = isa.assemble(source)
    except isa.AsmError as e:
        raise CliError(f"{args.source}: {e}")
    if args.format == "hex":
        _write(args.output, isa.to_hex(words))
    else:
        if args.output in (None, "-"):
            raise CliError("binary output needs -o FILE", EXIT_USAGE)
        with open(args.output, "wb") as fh:
            fh.write(isa.to_bytes(words))
    return EXIT_OK


def _read_program(path: str) -> list[int]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise CliError(str(e))
    try:
        text = blob.decode("ascii")
    except UnicodeDecodeError:
        text = None
    try:
        if text is not None and not text.startswith("\x00"):
            return isa.from_hex(text)
        return isa.from_bytes(blob)
    except (isa.EncodingError, isa.AsmError, ValueError) as e:
        raise CliError(f"{path}: {e}")


def cmd_disasm(args) -> int:
    words = _read_program(args.program)
    try:
        _write(args.output, isa.disassemble(words))
    except isa.EncodingError as e:
        raise CliError(f"{args.program}: {e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# kernel generation

def _make_kernel(args) -> kernels.Kernel:
    geometry = _geometry(args.geometry)
    width = args.n
    if args.precision:
        p = args.precision.lower()
        if p in ("bf16", "bfloat16"):
            width, op = 0, args.op
        elif p.startswith("int") and p[3:].isdigit():
            width = int(p[3:])
        else:
            raise CliError(f"unsupported precision {args.precision!r}",
                           EXIT_USAGE)
    try:
        return kernels.make_kernel(args.op, geometry, width_n=width,
                                   acc_width=args.acc, key=args.key,
                                   logic_op=args.logic)
    except (CramError, ValueError) as e:
        raise CliError(f"cannot build kernel: {e}", EXIT_USAGE)


def cmd_kernel(args) -> int:
    k = _make_kernel(args)
    prefix = args.output or k.name
    for i, src in enumerate(k.sources):
        suffix = f".part{i}" if len(k.sources) > 1 else ""
        _write(f"{prefix}{suffix}.casm", src)
    _write(f"{prefix}.layout.json", kernels.layout_json(k) + "\n")
    print(f"{k.name}: {sum(k.instruction_counts)} instructions in "
          f"{len(k.programs)} part(s), {k.registers_used} registers, "
          f"{k.layout.tuples_per_column} tuples/column "
          f"({k.layout.elements_total} total)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run (full handshake)

def _handshake_run(block: BlockState, kernel: kernels.Kernel,
                   data: dict, max_cycles: int,
                   trace: list[str] | None) -> "RunStats":
    """Drive the block through the pin-level protocol: storage writes,
    program load, mode flip, start pulse, done polling, readout."""
    def log(msg):
        if trace is not None:
            trace.append(msg)

    geom = block.geometry
    # 1. data load through the storage port
    log(f"mode=STORAGE: loading {geom.rows} rows")
    packed = kernel.pack(*[data[name] for name in kernel.inputs])
    for row in range(geom.rows):
        word = 0
        for col in range(geom.cols):           # column 0 is the MSB
            word = (word << 1) | int(packed.bits[row, col])
        block.tick(PortInputs(mode=Mode.STORAGE, address=row,
                              data_in=word, write_en=True))
    # 2. program load into instruction memory
    stats = None
    for part_i, words in enumerate(kernel.programs):
        log(f"mode=STORAGE: program part {part_i + 1}/"
            f"{len(kernel.programs)} ({len(words)} words) at "
            f"address {IMEM_ADDR_BASE}")
        for i in range(IMEM_WORDS):
            w = words[i] if i < len(words) else 0
            block.tick(PortInputs(mode=Mode.STORAGE,
                                  address=IMEM_ADDR_BASE + i,
                                  data_in=w, write_en=True))
        # 3. mode flip + start pulse
        log("mode=COMPUTE: start pulse")
        if part_i == 0:
            block.latches.reset()
        block.faulted, block.fault_reason = False, None
        start_cycles = block.cycles
        out = block.tick(PortInputs(mode=Mode.COMPUTE, start=True))
        # 4. poll done
        polls = 1
        while not out.done:
            if block.cycles - start_cycles >= max_cycles:
                block._fault(f"exceeded {max_cycles} cycles")
                break
            out = block.tick(PortInputs(mode=Mode.COMPUTE))
            polls += 1
        log(f"done after {block.cycles - start_cycles} compute cycles "
            f"({polls} polls)")
        part = RunStats(cycles=block.cycles - start_cycles,
                        faulted=block.faulted,
                        fault_reason=block.fault_reason,
                        pred_final=block.latches.pred,
                        register_dump=list(block.regs))
        if stats is None:
            stats = part
        else:
            stats = RunStats(cycles=stats.cycles + part.cycles,
                             faulted=part.faulted,
                             fault_reason=part.fault_reason,
                             pred_final=part.pred_final,
                             register_dump=part.register_dump)
        if part.faulted:
            break
    # 5. readout through the storage port
    log(f"mode=STORAGE: reading {geom.rows} rows back")
    block.tick(PortInputs(mode=Mode.STORAGE, address=0))
    return stats


def cmd_run(args) -> int:
    geometry = _geometry(args.geometry)
    if args.program:
        # raw program path: no layout, no pack/unpack
        words = _read_program(args.program)
        block = BlockState(geometry)
        stats = block.run(words, max_cycles=args.max_cycles)
        if stats.faulted:
            reason = stats.fault_reason or ""
            print(f"fault: {reason}", file=sys.stderr)
            return (EXIT_TIMEOUT if reason.startswith("exceeded")
                    else EXIT_INPUT)
        _write(args.out_stats, _json_text({"stats": stats.to_json()}))
        if args.out_image:
            from .array import to_image
            _write(args.out_image, to_image(block.state))
        return EXIT_OK
    if not args.op:
        raise CliError("run needs --op (kernel) or --program", EXIT_USAGE)
    if not args.data:
        raise CliError("kernel runs need --data", EXIT_USAGE)
    kernel = _make_kernel(args)
    try:
        with open(args.data) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"{args.data}: {e}")
    for name in kernel.inputs:
        if name not in data:
            raise CliError(f"data file lacks input vector {name!r}")
    count = min(len(data[n]) for n in kernel.inputs)
    if count > kernel.layout.elements_total:
        raise CliError(f"{count} elements exceed kernel capacity "
                       f"{kernel.layout.elements_total}")

    block = BlockState(geometry)
    trace: list[str] | None = [] if args.trace else None
    stats = _handshake_run(block, kernel, data, args.max_cycles, trace)
    if trace:
        for line in trace:
            print(line)
    if stats.faulted:
        reason = stats.fault_reason or ""
        print(f"fault: {reason}", file=sys.stderr)
        return EXIT_TIMEOUT if reason.startswith("exceeded") else EXIT_INPUT

    results = kernel.unpack(block.state, count)
    doc = {"stats": stats.to_json(),
           "results": {"count": count,
                       "fields": list(kernel.result_fields),
                       "values": [list(r) if isinstance(r, tuple) else r
                                  for r in results]}}
    _write(args.out_stats, _json_text(doc))
    if args.out_image:
        from .array import to_image
        _write(args.out_image, to_image(block.state))
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify

def cmd_verify(args) -> int:
    geometry = _geometry(args.geometry)
    mode = oracle.EXHAUSTIVE if args.exhaustive else oracle.RANDOM
    try:
        report = oracle.check_equivalence(
            args.op, width_n=args.n, geometry=geometry, mode=mode,
            count=args.random, seed=args.seed, acc_width=args.acc,
            key=args.key, logic_op=args.logic)
    except (CramError, ValueError) as e:
        raise CliError(str(e), EXIT_USAGE)
    _write(args.output, _json_text(report.to_json()))
    if not report.passed:
        print(f"verification FAILED: {len(report.failures)} "
              f"counterexample(s) recorded", file=sys.stderr)
        return EXIT_VERIFY
    print(f"verification passed: {report.cases} cases, "
          f"{report.cycles} cycles")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench

def simulate_experiment(exp: costmodel.ExperimentDescriptor,
                        seed: int = 0) -> dict:
    """Build the experiment's kernel, run one full array image of seeded
    random operands, and return measured cycle figures."""
    kernel = kernels.make_kernel(exp.operation, exp.geometry,
                                 width_n=exp.width)
    rng = random.Random(seed)
    vecs = []
    for name in kernel.inputs:
        if exp.precision == "bf16":
            vecs.append([oracle._random_bf16(rng)
                         for _ in range(exp.workload_ops)])
        else:
            vecs.append([rng.getrandbits(max(exp.width, 1))
                         for _ in range(exp.workload_ops)])
    block = BlockState(exp.geometry)
    block.state = kernel.pack(*vecs)
    stats = block.run_parts(kernel.programs)
    if stats.faulted:
        raise RuntimeError(f"{exp.name}: kernel faulted: "
                           f"{stats.fault_reason}")
    per_tuple = kernel.cycles_per_tuple
    setup = stats.cycles - per_tuple * kernel.layout.tuples_per_column
    return {"kernel": kernel, "cycles": stats.cycles,
            "cycles_per_tuple": per_tuple, "setup_cycles": setup}


def run_experiment(name: str, config: costmodel.CostConfig,
                   seed: int = 0) -> dict:
    exp = costmodel.EXPERIMENTS[name]
    sim = simulate_experiment(exp, seed=seed)
    if exp.whatif_cols:
        report = costmodel.whatif_columns(exp, exp.whatif_cols,
                                          sim["cycles_per_tuple"],
                                          sim["setup_cycles"], config)
    else:
        report = costmodel.compare(exp, sim["cycles"], config)
    doc = report.to_json()
    doc["measured"] = {"cycles": sim["cycles"],
                       "cycles_per_tuple": sim["cycles_per_tuple"],
                       "setup_cycles": sim["setup_cycles"],
                       "workload_ops": exp.workload_ops}
    doc["throughput_gops"] = costmodel.throughput(
        exp.geometry.cols, sim["cycles_per_tuple"], config.compute_freq_mhz)
    return doc


def cmd_bench(args) -> int:
    try:
        config = costmodel.load_calibration(args.calibration)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        raise CliError(f"calibration: {e}")
    names = (sorted(costmodel.EXPERIMENTS) if args.all
             else [args.experiment])
    if not args.all and args.experiment not in costmodel.EXPERIMENTS:
        raise CliError(f"unknown experiment {args.experiment!r}; choose "
                       f"from {sorted(costmodel.EXPERIMENTS)}", EXIT_USAGE)
    docs = {name: run_experiment(name, config, seed=args.seed)
            for name in names}
    _write(args.output, _json_text(docs))
    if args.csv:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["experiment", "design", "metric", "value"])
        for name in names:
            exp = costmodel.EXPERIMENTS[name]
            sim_doc = docs[name]
            ratios = sim_doc["ratios"]
            for design_key in ("cram", "baseline"):
                d = sim_doc[design_key]
                for metric in ("area_um2", "cycles", "freq_mhz", "time_us"):
                    writer.writerow([name, design_key, metric, d[metric]])
                writer.writerow([name, design_key, "energy_fj",
                                 d["energy_fj"]["total"]])
            for metric in ("area", "energy", "time", "clock"):
                writer.writerow([name, "ratio", metric, ratios[metric]])
            writer.writerow([name, "cram", "throughput_gops",
                             sim_doc["throughput_gops"]])
        _write(args.csv, buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _add_kernel_args(p, required: bool = True):
    p.add_argument("--op", required=required,
                   help="add sub mul mac dot bf16-add bf16-mul copy "
                        "vlogic search")
    p.add_argument("--precision", help="int4/int8/int16/bf16 "
                                       "(alternative to --n)")
    p.add_argument("--n", type=int, default=0, help="operand width in bits")
    p.add_argument("--acc", type=int, default=32, help="accumulator width")
    p.add_argument("--key", type=int, default=0, help="search key")
    p.add_argument("--logic", default="xor",
                   help="vlogic operation (and or xor nor)")
    p.add_argument("--geometry", default="512x40",
                   help=f"one of {['%dx%d' % g for g in STANDARD_GEOMETRIES]}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cramsim",
        description="bit-serial in-SRAM compute block: simulator, "
                    "microcode toolchain, and cost model")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble microcode source")
    p.add_argument("source")
    p.add_argument("-o", "--output", help="output file (default stdout)")
    p.add_argument("--format", choices=("hex", "bin"), default="hex")
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("disasm", help="disassemble a program")
    p.add_argument("program")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_disasm)

    p = sub.add_parser("kernel", help="generate a kernel: source + layout")
    _add_kernel_args(p)
    p.add_argument("-o", "--output", help="output path prefix")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("run", help="full handshake run over a data file")
    _add_kernel_args(p, required=False)
    p.add_argument("--program", help="raw program (hex or binary) to run "
                                     "instead of a generated kernel")
    p.add_argument("--data", help="JSON file {input_name: [integers]}")
    p.add_argument("--max-cycles", type=int, default=10_000_000)
    p.add_argument("--out-stats", help="stats+results JSON (default stdout)")
    p.add_argument("--out-image", help="final array image JSON")
    p.add_argument("--trace", action="store_true",
                   help="print the pin handshake trace")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check a kernel against the oracle")
    _add_kernel_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--exhaustive", action="store_true")
    g.add_argument("--random", type=int, default=10000,
                   help="number of random cases")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="-",
                   help="report JSON (default stdout)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="area/energy/time comparison reports")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--experiment",
                   help=f"one of {sorted(costmodel.EXPERIMENTS)}")
    g.add_argument("--all", action="store_true")
    p.add_argument("--calibration", help="calibration JSON override")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="-", help="JSON report path")
    p.add_argument("--csv", help="CSV report path")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FaultError as e:
        print(f"fault: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
