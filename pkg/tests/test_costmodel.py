"""Area/frequency/energy/time model: formulas, linearity, calibration."""

import json
import math

import pytest
from hypothesis import given, strategies as st

from cramsim import costmodel
from cramsim.costmodel import (CostConfig, DEFAULT_BLOCKS, EXPERIMENTS,
                               baseline_cycles, compare, compute_freq,
                               energy_fj, load_calibration, throughput,
                               whatif_columns)


class TestConstants:
    def test_block_defaults(self):
        assert DEFAULT_BLOCKS["COMPUTE_RAM"].area_um2 == 11072.5
        assert DEFAULT_BLOCKS["COMPUTE_RAM"].freq_mhz == 609.1
        assert DEFAULT_BLOCKS["BRAM"].freq_mhz == 922.9
        assert DEFAULT_BLOCKS["DSP"].freq("float") == 336.4
        assert DEFAULT_BLOCKS["LB"].freq_mhz is None


class TestThroughput:
    def test_published_examples(self):
        assert throughput(40, 5, 609.1) == pytest.approx(4.873, abs=5e-4)
        assert throughput(40, 9, 609.1) == pytest.approx(2.707, abs=5e-4)
        assert throughput(40, 72, 609.1) == pytest.approx(0.338, abs=5e-4)

    @given(st.integers(1, 200), st.integers(1, 500),
           st.floats(1, 2000), st.integers(2, 5))
    def test_linear_in_cols_and_freq_inverse_in_cycles(self, cols, cyc,
                                                       freq, k):
        base = throughput(cols, cyc, freq)
        assert throughput(k * cols, cyc, freq) == pytest.approx(k * base)
        assert throughput(cols, cyc, k * freq) == pytest.approx(k * base)
        assert throughput(cols, k * cyc, freq) == pytest.approx(base / k)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            throughput(0, 5, 609.1)


class TestComputeFreq:
    def test_derivation_path(self):
        assert compute_freq(922.9, 0.33, 0.03) == pytest.approx(599.7,
                                                                abs=0.1)

    def test_zero_derates_identity(self):
        assert compute_freq(922.9, 0, 0) == 922.9

    def test_calibrated_value_pinned(self):
        assert load_calibration().compute_freq_mhz == 609.1


class TestEnergy:
    def test_zero_cycles_zero_energy(self):
        e = energy_fj(10000, 0, 80, 1.0, CostConfig())
        assert e["total"] == 0

    def test_doubling_net_length_doubles_wire_term(self):
        c = CostConfig()
        e1 = energy_fj(10000, 100, 80, 0.5, c)
        e2 = energy_fj(10000, 100, 80, 1.0, c)
        assert e2["wire"] == pytest.approx(2 * e1["wire"])
        assert e2["transistor"] == e1["transistor"]

    @given(st.floats(0.5, 2.0))
    def test_linear_in_each_coefficient(self, k):
        base_cfg = CostConfig()
        base = energy_fj(5000, 10, 40, 0.3, base_cfg)
        for attr, term in (("e_toggle_fj", "transistor"),
                           ("tx_density_per_um2", "transistor"),
                           ("activity_factor", "transistor"),
                           ("e_wire_fj_per_mm_bit", "wire")):
            cfg = CostConfig(**{attr: getattr(base_cfg, attr) * k})
            scaled = energy_fj(5000, 10, 40, 0.3, cfg)
            assert scaled[term] == pytest.approx(k * base[term])


class TestBaselineCycles:
    def test_streaming_formula(self):
        exp = costmodel.ExperimentDescriptor(
            "t", "add", "int4", 4, 1536,
            costmodel.BaselineDesign(1, 0, 3, ops_per_row=3))
        assert baseline_cycles(exp) == 512 + 4

    def test_dot_pinned(self):
        assert baseline_cycles(EXPERIMENTS["dot-int4"]) == 480

    def test_fractional_ops_per_row(self):
        exp = EXPERIMENTS["mul-bf16"]
        assert baseline_cycles(exp) == math.ceil(160 / (2 / 3)) + 4


class TestReports:
    def test_ratios_recomputable_from_absolutes(self):
        config = load_calibration()
        report = compare(EXPERIMENTS["add-int8"], 195, config)
        doc = report.to_json()
        assert doc["ratios"]["energy"] == pytest.approx(
            doc["cram"]["energy_fj"]["total"]
            / doc["baseline"]["energy_fj"]["total"], rel=1e-9)
        assert doc["ratios"]["time"] == pytest.approx(
            doc["cram"]["time_us"] / doc["baseline"]["time_us"], rel=1e-9)
        assert doc["ratios"]["area"] == pytest.approx(
            doc["cram"]["area_um2"] / doc["baseline"]["area_um2"], rel=1e-9)

    def test_whatif_identity_at_native_columns(self):
        config = load_calibration()
        exp = EXPERIMENTS["dot-int4"]
        direct = compare(exp, 1249, config)
        scaled = whatif_columns(exp, 40, 73, 1249 - 73 * 17, config)
        assert scaled.cram.cycles == direct.cram.cycles
        assert scaled.cram.area_um2 == pytest.approx(direct.cram.area_um2)
        assert scaled.cram.time_us == pytest.approx(direct.cram.time_us)

    def test_whatif_double_columns_halves_loop_cycles(self):
        config = load_calibration()
        exp = EXPERIMENTS["dot-int4"]
        r40 = whatif_columns(exp, 40, 73, 8, config)
        r80 = whatif_columns(exp, 80, 73, 8, config)
        assert (r80.cram.cycles - 8) * 2 <= (r40.cram.cycles - 8) * 1.1

    def test_csv_rows_cover_all_metrics(self):
        config = load_calibration()
        rows = compare(EXPERIMENTS["add-int4"], 216, config).csv_rows()
        metrics = {(r[1], r[2]) for r in rows}
        assert ("ratio", "energy") in metrics
        assert ("cram", "time_us") in metrics


class TestCalibrationFile:
    def test_schema_and_round_trip(self):
        config = load_calibration()
        doc = config.to_json()
        assert doc["schema"] == costmodel.CALIBRATION_SCHEMA
        again = CostConfig.from_json(json.loads(json.dumps(doc)))
        assert again.to_json() == doc

    def test_unknown_schema_rejected(self):
        with pytest.raises(ValueError):
            CostConfig.from_json({"schema": "bogus"})

    def test_fit_covers_every_experiment(self):
        config = load_calibration()
        for name in EXPERIMENTS:
            assert name in config.baseline_fit
            fit = config.baseline_fit[name]
            assert fit["net_len_mm"] > 0 and fit["freq_derate"] > 0
