"""Acceptance gate: the eleven shipped guarantees.

Each test class matches one numbered criterion.  Tolerances are stated
inline.  Where a target is not met by the shipped implementation the test
still asserts the target (failing honestly) with a message pointing at the
design notes.
"""

import json
import math

import pytest

from cramsim import costmodel, kernels, oracle
from cramsim.array import Geometry, STANDARD_GEOMETRIES
from cramsim.cli import main as cli_main, simulate_experiment
from cramsim.controller import (BlockState, FaultError, IMEM_ADDR_BASE,
                                Mode, PortInputs)
from cramsim.isa import AsmError, assemble

GEOMETRIES = [Geometry(*g) for g in STANDARD_GEOMETRIES]
STD = GEOMETRIES[0]
CONFIG = costmodel.load_calibration()


def _run_source(geom, sources):
    block = BlockState(geom)
    stats = block.run_parts([assemble(src) for src in sources])
    assert not stats.faulted, stats.fault_reason
    return stats.cycles


def measured_cycles_per_tuple(op, n):
    """Exact marginal cost of one tuple, measured — not taken from the
    generator's claim.  The kernel is run as generated and once more with
    its outer trip count lowered by one (by patching the loop register's
    load); the cycle difference is the per-tuple cost."""
    geom = STD
    k = kernels.make_kernel(op, geom, width_n=n)
    T = k.layout.tuples_per_column
    full = _run_source(geom, k.sources)
    if len(k.sources) > 1 or "loop" not in k.sources[0]:
        # straight-line multi-part kernel: no trip count to patch
        return math.ceil(full / T)
    lines = k.sources[0].splitlines()
    loop_at = next(i for i, ln in enumerate(lines)
                   if ln.strip().startswith("loop r"))
    reg = lines[loop_at].strip().split()[1]
    ldi_at = max(i for i in range(loop_at)
                 if lines[i].strip().startswith(f"ldi {reg},"))
    assert lines[ldi_at].strip() == f"ldi {reg}, {T}"
    lines[ldi_at] = f"ldi {reg}, {T - 1}"
    shorter = _run_source(geom, ["\n".join(lines)])
    return full - shorter


class TestCriterion1ExhaustiveSmallWidths:
    @pytest.mark.parametrize("geometry", GEOMETRIES, ids=str)
    @pytest.mark.parametrize("op", ["add", "sub", "mul"])
    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_exhaustive(self, op, n, geometry):
        report = oracle.check_equivalence(op, n, geometry=geometry,
                                          mode="exhaustive")
        assert report.passed, report.failures


class TestCriterion2RandomizedCorrectness:
    COUNT = 10_000

    @pytest.mark.parametrize("op,n", [("add", 8), ("add", 16),
                                      ("mul", 8), ("mul", 16),
                                      ("mac", 8), ("mac", 16)])
    def test_integer_ops(self, op, n):
        report = oracle.check_equivalence(op, n, mode="random",
                                          count=self.COUNT, seed=2026)
        assert report.cases == self.COUNT
        assert report.passed, report.failures

    @pytest.mark.parametrize("op", ["bf16-add", "bf16-mul"])
    def test_bfloat16_ops(self, op):
        report = oracle.check_equivalence(op, mode="random",
                                          count=self.COUNT, seed=2026)
        assert report.cases == self.COUNT
        assert report.passed, report.failures


class TestCriterion3AddCycleExactness:
    @pytest.mark.parametrize("n", [4, 8])
    def test_add_takes_exactly_n_plus_1_cycles(self, n):
        assert measured_cycles_per_tuple("add", n) == n + 1

    @pytest.mark.parametrize("n,gops", [(4, 4.87), (8, 2.71)])
    def test_published_throughput_within_1pct(self, n, gops):
        got = costmodel.throughput(40, n + 1, CONFIG.compute_freq_mhz)
        assert got == pytest.approx(gops, rel=0.01)


class TestCriterion4SoftCycleTargets:
    TARGETS = [("mul", 4, 25, 1.21), ("mul", 8, 90, 0.34),
                ("bf16-add", 0, 99, 0.31), ("bf16-mul", 0, 113, 0.27)]

    @pytest.mark.parametrize("op,n,budget,gops", TARGETS,
                             ids=["mul-int4", "mul-int8", "bf16-add",
                                  "bf16-mul"])
    def test_cycle_budget(self, op, n, budget, gops):
        per = measured_cycles_per_tuple(op, n)
        assert per <= budget, (
            f"{op}: {per} cycles/tuple exceeds the {budget}-cycle target "
            f"(known gap for bf16-add; see notes/decisions.md)")

    @pytest.mark.parametrize("op,n,budget,gops", TARGETS,
                             ids=["mul-int4", "mul-int8", "bf16-add",
                                  "bf16-mul"])
    def test_published_throughput_within_25pct(self, op, n, budget, gops):
        k = kernels.make_kernel(op, STD, width_n=n)
        got = costmodel.throughput(40, k.cycles_per_tuple,
                                   CONFIG.compute_freq_mhz)
        assert got == pytest.approx(gops, rel=0.25), (
            f"{op}: {got:.3f} GOPS vs published {gops} "
            f"(known gap for bf16-add; see notes/decisions.md)")


class TestCriterion5DotProduct:
    def test_full_packing_cycles_near_published(self):
        sim = simulate_experiment(costmodel.EXPERIMENTS["dot-int4"])
        assert sim["cycles"] == pytest.approx(1470, rel=0.25)

    def test_baseline_is_exactly_480(self):
        assert costmodel.baseline_cycles(
            costmodel.EXPERIMENTS["dot-int4"]) == 480

    def test_72_column_whatif_time_ratio(self):
        exp = costmodel.EXPERIMENTS["dot-int4-72col"]
        sim = simulate_experiment(exp)
        report = costmodel.whatif_columns(exp, 72, sim["cycles_per_tuple"],
                                          sim["setup_cycles"], CONFIG)
        assert report.time_ratio == pytest.approx(0.80, abs=0.05)


class TestCriterion6AreaModel:
    def test_cram_vs_bram(self):
        b = costmodel.DEFAULT_BLOCKS
        ratio = b["COMPUTE_RAM"].area_um2 / b["BRAM"].area_um2
        assert ratio == pytest.approx(1.332, rel=0.005)

    def test_dsp_vs_cram(self):
        b = costmodel.DEFAULT_BLOCKS
        ratio = b["DSP"].area_um2 / b["COMPUTE_RAM"].area_um2
        assert ratio == pytest.approx(1.123, rel=0.005)


SIX_ADD_MUL = ["add-int4", "add-int8", "add-bf16",
               "mul-int4", "mul-int8", "mul-bf16"]


@pytest.fixture(scope="module")
def ratios():
    out = {}
    for name in SIX_ADD_MUL:
        exp = costmodel.EXPERIMENTS[name]
        sim = simulate_experiment(exp)
        out[name] = costmodel.compare(exp, sim["cycles"],
                                      CONFIG).energy_ratio
    return out


class TestCriterion7EnergyRatios:
    @pytest.mark.parametrize("name", SIX_ADD_MUL)
    def test_each_ratio_near_0_20(self, name, ratios):
        assert ratios[name] == pytest.approx(0.20, abs=0.10)

    def test_mean_saving_at_least_70pct(self, ratios):
        mean = sum(ratios.values()) / len(ratios)
        assert 1 - mean >= 0.70


class TestCriterion8Frequency:
    def test_constants_verbatim(self):
        assert CONFIG.compute_freq_mhz == 609.1
        assert CONFIG.storage_freq_mhz == 922.9
        assert costmodel.DEFAULT_BLOCKS["COMPUTE_RAM"].freq_mhz == 609.1
        assert costmodel.DEFAULT_BLOCKS["BRAM"].freq_mhz == 922.9

    @pytest.mark.parametrize("name", ["add-int4", "add-int8", "add-bf16",
                                      "mul-int4", "mul-int8", "mul-bf16"])
    def test_clock_advantage_1_60_to_1_65(self, name):
        # the dot-product experiments are excluded: their baseline clock is
        # anchored to the published end-to-end time instead (see notes)
        exp = costmodel.EXPERIMENTS[name]
        report = costmodel.compare(exp, 100, CONFIG)
        assert 1.60 <= report.clock_ratio <= 1.65


class TestCriterion9Protocol:
    def test_scripted_handshake(self):
        block = BlockState(STD)
        # storage write of a data row
        block.tick(PortInputs(mode=Mode.STORAGE, address=5,
                              data_in=0x3F, write_en=True))
        # program load word by word
        words = assemble("ldi r0, 2\nloop r0\ncset1\nendloop\nend")
        for i, w in enumerate(words):
            block.tick(PortInputs(mode=Mode.STORAGE,
                                  address=IMEM_ADDR_BASE + i,
                                  data_in=w, write_en=True))
        # mode flip + start pulse, then poll done
        out = block.tick(PortInputs(mode=Mode.COMPUTE, start=True))
        polls = 1
        while not out.done:
            out = block.tick(PortInputs(mode=Mode.COMPUTE))
            polls += 1
        assert not block.faulted and polls == 5
        # readout
        out = block.tick(PortInputs(mode=Mode.STORAGE, address=5))
        assert out.data_out == 0x3F

    def test_load_while_running_is_error(self):
        block = BlockState(STD)
        block.load_program(assemble("cset0\ncset0\nend"))
        block.tick(PortInputs(mode=Mode.COMPUTE, start=True))
        with pytest.raises(FaultError):
            block.load_program(assemble("end"))

    def test_mode_flip_mid_run_faults(self):
        block = BlockState(STD)
        block.load_program(assemble("cset0\ncset0\nend"))
        block.tick(PortInputs(mode=Mode.COMPUTE, start=True))
        block.tick(PortInputs(mode=Mode.STORAGE))
        assert block.faulted and "mode" in block.fault_reason


class TestCriterion10Capacity:
    SHIPPED = [("add", 4), ("add", 8), ("sub", 4), ("sub", 8),
               ("mul", 4), ("mul", 8), ("mac", 8), ("dot", 4),
               ("bf16-add", 0), ("bf16-mul", 0),
               ("copy", 8), ("vlogic", 8), ("search", 8)]

    @pytest.mark.parametrize("op,n", SHIPPED)
    def test_static_scan_200_instructions_5_registers(self, op, n):
        k = kernels.make_kernel(op, STD, width_n=n, key=1)
        assert max(k.instruction_counts) <= 200
        assert k.registers_used <= 5

    def test_assembler_rejects_257_words(self):
        with pytest.raises(AsmError):
            assemble("\n".join(["cset0"] * 256) + "\nend")

    def test_loop_depth_3_faults(self):
        from cramsim.isa import encode, Ldi, Loop, End
        words = [encode(Ldi(0, 2)), encode(Loop(0, 3)), encode(Loop(0, 2)),
                 encode(Loop(0, 1)), encode(End()), encode(End())]
        stats = BlockState(STD).run(words)
        assert stats.faulted and "deeper" in stats.fault_reason


class TestCriterion11Determinism:
    def test_bench_all_byte_identical(self, tmp_path):
        outs = []
        for i in (1, 2):
            js = tmp_path / f"r{i}.json"
            cs = tmp_path / f"r{i}.csv"
            rc = cli_main(["bench", "--all", "-o", str(js),
                           "--csv", str(cs)])
            assert rc == 0
            outs.append(js.read_bytes() + cs.read_bytes())
        assert outs[0] == outs[1]
