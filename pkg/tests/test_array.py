"""Bit-line array semantics: sensing, micro-ops, latches, storage port."""

import numpy as np
import pytest

from cramsim.array import (AddressError, ArrayState, ColumnLatches,
                           ConfigurationError, Func, Geometry, MicroOp,
                           MicroOpError, Pred, StorageOp, WriteCollisionError,
                           configure, exec_microop, from_image, sense,
                           storage_cycle, storage_read, storage_write,
                           to_image, STANDARD_GEOMETRIES, TOTAL_BITS)


def make(rows=512, cols=40):
    g = Geometry(rows, cols)
    return configure(g), ColumnLatches.create(cols)


def set_row(state, row, bits):
    state.bits[row, :len(bits)] = bits


class TestGeometry:
    def test_standard_geometries_hold_the_same_bit_total(self):
        for rows, cols in STANDARD_GEOMETRIES:
            assert rows * cols == TOTAL_BITS
            assert Geometry(rows, cols).is_standard

    def test_parse_round_trip(self):
        g = Geometry.parse("1024x20")
        assert (g.rows, g.cols) == (1024, 20)
        assert str(g) == "1024x20"

    def test_nonpositive_rejected(self):
        with pytest.raises(ConfigurationError):
            Geometry(0, 40)
        with pytest.raises(ConfigurationError):
            Geometry.parse("banana")


class TestSense:
    def test_dual_activation_gives_and_and_nor(self):
        state, _ = make(8, 4)
        set_row(state, 0, [0, 0, 1, 1])
        set_row(state, 1, [0, 1, 0, 1])
        bl, blb = sense(state, 0, 1)
        assert list(bl) == [0, 0, 0, 1]     # a AND b
        assert list(blb) == [1, 0, 0, 0]    # a NOR b

    def test_same_row_twice_rejected(self):
        state, _ = make(8, 4)
        with pytest.raises(MicroOpError):
            sense(state, 3, 3)

    def test_out_of_range_row(self):
        state, _ = make(8, 4)
        with pytest.raises(AddressError):
            sense(state, 0, 8)


LOGIC_CASES = [
    (Func.AND, [0, 0, 0, 1]),
    (Func.OR, [0, 1, 1, 1]),
    (Func.XOR, [0, 1, 1, 0]),
    (Func.NOR, [1, 0, 0, 0]),
    (Func.NAND, [1, 1, 1, 0]),
    (Func.XNOR, [1, 0, 0, 1]),
]


class TestLogicOps:
    @pytest.mark.parametrize("func,expected", LOGIC_CASES)
    def test_truth_tables(self, func, expected):
        state, latches = make(8, 4)
        set_row(state, 0, [0, 0, 1, 1])
        set_row(state, 1, [0, 1, 0, 1])
        exec_microop(state, latches, MicroOp(func, 0, 1, 2))
        assert list(state.bits[2]) == expected

    def test_write_back_same_cycle_reads_old_values(self):
        # destination may alias a source: read happens before write
        state, latches = make(8, 4)
        set_row(state, 0, [1, 0, 1, 0])
        set_row(state, 1, [1, 1, 0, 0])
        exec_microop(state, latches, MicroOp(Func.XOR, 0, 1, 0))
        assert list(state.bits[0]) == [0, 1, 1, 0]
        assert list(state.bits[1]) == [1, 1, 0, 0]


class TestSumSubb:
    def test_sum_truth_table(self):
        # columns enumerate all (a, b, carry-in) combinations
        state, latches = make(8, 8)
        set_row(state, 0, [0, 0, 0, 0, 1, 1, 1, 1])
        set_row(state, 1, [0, 0, 1, 1, 0, 0, 1, 1])
        latches.carry[:] = [0, 1, 0, 1, 0, 1, 0, 1]
        exec_microop(state, latches, MicroOp(Func.SUM, 0, 1, 2))
        assert list(state.bits[2]) == [0, 1, 1, 0, 1, 0, 0, 1]
        assert list(latches.carry) == [0, 0, 0, 1, 0, 1, 1, 1]

    def test_subb_truth_table(self):
        # d = a - b - borrow_in; carry latch holds the borrow chain
        state, latches = make(8, 8)
        set_row(state, 0, [0, 0, 0, 0, 1, 1, 1, 1])
        set_row(state, 1, [0, 0, 1, 1, 0, 0, 1, 1])
        latches.carry[:] = [0, 1, 0, 1, 0, 1, 0, 1]
        exec_microop(state, latches, MicroOp(Func.SUBB, 0, 1, 2))
        assert list(state.bits[2]) == [0, 1, 1, 0, 1, 0, 0, 1]
        assert list(latches.carry) == [0, 1, 1, 1, 0, 0, 0, 1]

    def test_ripple_addition_across_rows(self):
        # 4-bit ripple: 0b0101 + 0b0111 = 0b1100 per column
        state, latches = make(16, 2)
        a, b = 0b0101, 0b0111
        for i in range(4):
            state.bits[i, :] = (a >> i) & 1
            state.bits[4 + i, :] = (b >> i) & 1
        for i in range(4):
            exec_microop(state, latches,
                         MicroOp(Func.SUM, i, 4 + i, 8 + i))
        value = sum(int(state.bits[8 + i, 0]) << i for i in range(4))
        assert value == (a + b) & 0xF


class TestLatchOps:
    def test_tload_loads_tag_and_clears_carry(self):
        state, latches = make(8, 4)
        set_row(state, 3, [1, 0, 1, 0])
        latches.carry[:] = 1
        exec_microop(state, latches, MicroOp(Func.TLOAD, 3))
        assert list(latches.tag) == [1, 0, 1, 0]
        assert list(latches.carry) == [0, 0, 0, 0]

    def test_tload_ignores_predication(self):
        state, latches = make(8, 4)
        set_row(state, 3, [1, 1, 0, 0])
        latches.pred = Pred.TAG            # tag is all zeros: gate closed
        exec_microop(state, latches, MicroOp(Func.TLOAD, 3))
        assert list(latches.tag) == [1, 1, 0, 0]

    def test_tfromc_copies_carry_to_tag(self):
        state, latches = make(8, 4)
        latches.carry[:] = [0, 1, 1, 0]
        exec_microop(state, latches, MicroOp(Func.TFROMC))
        assert list(latches.tag) == [0, 1, 1, 0]

    def test_cset_respects_predication(self):
        state, latches = make(8, 4)
        latches.tag[:] = [1, 0, 1, 0]
        latches.pred = Pred.TAG
        exec_microop(state, latches, MicroOp(Func.CSET1))
        assert list(latches.carry) == [1, 0, 1, 0]
        latches.tag[:] = [1, 0, 0, 0]
        exec_microop(state, latches, MicroOp(Func.CSET0))
        assert list(latches.carry) == [0, 0, 1, 0]


class TestPredication:
    @pytest.mark.parametrize("pred,enabled", [
        (Pred.ALWAYS, [1, 1, 1, 1]),
        (Pred.TAG, [1, 0, 1, 0]),
        (Pred.CARRY, [0, 0, 1, 1]),
        (Pred.NOTCARRY, [1, 1, 0, 0]),
    ])
    def test_row_writes_are_gated(self, pred, enabled):
        state, latches = make(8, 4)
        latches.tag[:] = [1, 0, 1, 0]
        latches.carry[:] = [0, 0, 1, 1]
        latches.pred = pred
        exec_microop(state, latches, MicroOp(Func.WR1, 0, 0, 5))
        assert list(state.bits[5]) == enabled

    def test_sum_carry_update_is_gated(self):
        state, latches = make(8, 4)
        set_row(state, 0, [1, 1, 1, 1])
        set_row(state, 1, [1, 1, 1, 1])
        latches.tag[:] = [1, 0, 1, 0]
        latches.pred = Pred.TAG
        exec_microop(state, latches, MicroOp(Func.SUM, 0, 1, 2))
        assert list(latches.carry) == [1, 0, 1, 0]
        assert list(state.bits[2]) == [0, 0, 0, 0]


class TestStorage:
    def test_read_write_round_trip_column0_is_msb(self):
        state, _ = make(8, 4)
        storage_write(state, 2, 0b1010)
        assert list(state.bits[2]) == [1, 0, 1, 0]
        assert storage_read(state, 2) == 0b1010

    def test_word_wider_than_row_rejected(self):
        state, _ = make(8, 4)
        with pytest.raises(AddressError):
            storage_write(state, 0, 1 << 4)

    def test_dual_port_write_collision(self):
        state, _ = make(8, 4)
        with pytest.raises(WriteCollisionError):
            storage_cycle(state, StorageOp(1, True, 3), StorageOp(1, True, 5))

    def test_dual_port_read_during_write_is_read_first(self):
        state, _ = make(8, 4)
        storage_write(state, 1, 0b1111)
        old, _ = storage_cycle(state, StorageOp(1, False),
                               StorageOp(1, True, 0b0001))
        assert old == 0b1111
        assert storage_read(state, 1) == 0b0001


class TestImage:
    def test_image_round_trip(self):
        state, _ = make(16, 8)
        rng = np.random.default_rng(0)
        state.bits[:] = rng.integers(0, 2, state.bits.shape, dtype=np.uint8)
        again = from_image(to_image(state))
        assert again.geometry == state.geometry
        assert np.array_equal(again.bits, state.bits)
