import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpsim.bitpart import (
    BitGroup,
    PartitionScheme,
    QuantizedVector,
    SignMagnitudeValue,
    bit_partition,
    bp_matmul,
    group_partials,
    reaggregate,
    required_accumulator_bits,
    to_sign_magnitude,
    wide_bp_dot,
)
from bpsim.errors import AccumulatorOverflow, ContractViolation


def direct_dot(x, w):
    return sum(int(a) * int(b) for a, b in zip(x, w))


def radix_digits(value, base, count):
    out = []
    for _ in range(count):
        out.append(value % base)
        value //= base
    return out


class TestPartitionScheme:
    def test_defaults(self):
        s = PartitionScheme()
        assert s.operand_bits == 8 and s.partition_bits == 2
        assert s.partitions_per_operand == 4
        assert s.pair_count == 16
        assert s.shift_sum == 85

    @pytest.mark.parametrize("bits", [3, 5, 0, 16])
    def test_rejects_invalid_partition_width(self, bits):
        with pytest.raises(ContractViolation):
            PartitionScheme(8, bits)

    def test_rejects_non_dividing(self):
        with pytest.raises(ContractViolation):
            PartitionScheme(4, 8)

    @pytest.mark.parametrize("ob,pb", [(8, 1), (8, 2), (8, 4), (8, 8), (4, 1), (4, 2), (4, 4)])
    def test_partition_product(self, ob, pb):
        s = PartitionScheme(ob, pb)
        assert s.partitions_per_operand * s.partition_bits == ob


class TestToSignMagnitude:
    def test_positive(self):
        assert to_sign_magnitude(13, 8) == SignMagnitudeValue(1, 13)

    def test_negative(self):
        assert to_sign_magnitude(-9, 8) == SignMagnitudeValue(-1, 9)

    def test_most_negative_saturates(self):
        v = to_sign_magnitude(-128, 8)
        assert (v.sign, v.magnitude) == (-1, 127)
        assert v.saturated
        # 128 needs 8 magnitude bits; only 7 are available
        assert (128).bit_length() == 8

    def test_zero_canonical(self):
        assert SignMagnitudeValue(-1, 0).sign == 1
        assert to_sign_magnitude(0).sign == 1

    def test_out_of_range(self):
        with pytest.raises(ContractViolation):
            to_sign_magnitude(300, 8)

    @given(st.integers(-127, 127))
    def test_roundtrip(self, v):
        sm = to_sign_magnitude(v, 8)
        assert sm.value == v and not sm.saturated


class TestBitPartition:
    def test_figure_example(self):
        # 13 = 0b1101 -> low digit 01, high digit 11
        groups = bit_partition(QuantizedVector.unsigned([13], PartitionScheme(4, 2)))
        assert groups == [BitGroup(0, (1,), (1,)), BitGroup(2, (3,), (1,))]

    def test_zero_vector(self):
        for pb in (1, 2, 4, 8):
            groups = bit_partition(QuantizedVector.from_ints([0, 0], PartitionScheme(8, pb)))
            assert all(g.partitions == (0, 0) for g in groups)

    def test_saturated_255_range(self):
        # 255 is not an 8-bit two's complement value; the saturating path for
        # the magnitude bound is exercised with -128 -> 127
        qv = QuantizedVector.from_ints([-128], PartitionScheme(8, 2))
        assert qv.saturations == 1
        groups = bit_partition(qv)
        assert [g.partitions[0] for g in groups] == radix_digits(127, 4, 4) == [3, 3, 3, 1]
        assert [g.significance for g in groups] == [0, 2, 4, 6]

    @given(st.lists(st.integers(-127, 127), min_size=1, max_size=40), st.sampled_from([1, 2, 4, 8]))
    def test_reassembly_and_signs(self, values, pb):
        scheme = PartitionScheme(8, pb)
        qv = QuantizedVector.from_ints(values, scheme)
        groups = bit_partition(qv)
        assert len(groups) == scheme.partitions_per_operand
        for k, g in enumerate(groups):
            assert g.significance == k * pb
            assert len(g.partitions) == len(g.signs) == len(values)
            assert all(0 <= d < 2 ** pb for d in g.partitions)
            assert g.signs == tuple(int(s) for s in qv.signs)
        for i, v in enumerate(values):
            assert sum(g.partitions[i] << g.significance for g in groups) == abs(v)


class TestWideBpDot:
    def test_two_element_example(self):
        s = PartitionScheme(4, 2)
        x = QuantizedVector.unsigned([13, 9], s)
        w = QuantizedVector.unsigned([9, 13], s)
        assert wide_bp_dot(x, w) == 13 * 9 + 9 * 13 == 234

    def test_annihilator(self):
        x = QuantizedVector.from_ints([5, -7, 100])
        w = QuantizedVector.from_ints([0, 0, 0])
        assert wide_bp_dot(x, w) == 0

    def test_single_product_decomposition(self):
        s = PartitionScheme(4, 2)
        partials = {(sx, sw): p for sx, sw, p in group_partials(
            QuantizedVector.unsigned([13], s), QuantizedVector.unsigned([9], s))}
        # 13 = (3, 1) in radix 4, 9 = (2, 1)
        assert partials == {(2, 2): 6, (2, 0): 3, (0, 2): 2, (0, 0): 1}
        assert wide_bp_dot(QuantizedVector.unsigned([13], s), QuantizedVector.unsigned([9], s)) == 117

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            wide_bp_dot(QuantizedVector.from_ints([1, 2]), QuantizedVector.from_ints([1]))

    def test_scheme_mismatch(self):
        with pytest.raises(ContractViolation):
            wide_bp_dot(QuantizedVector.from_ints([1], PartitionScheme(8, 2)),
                        QuantizedVector.from_ints([1], PartitionScheme(8, 4)))

    @settings(max_examples=200)
    @given(st.data())
    def test_exact_against_direct(self, data):
        n = data.draw(st.integers(1, 300))
        x = data.draw(st.lists(st.integers(-127, 127), min_size=n, max_size=n))
        w = data.draw(st.lists(st.integers(-127, 127), min_size=n, max_size=n))
        expected = direct_dot(x, w)
        results = {pb: wide_bp_dot(QuantizedVector.from_ints(x, PartitionScheme(8, pb)),
                                   QuantizedVector.from_ints(w, PartitionScheme(8, pb)))
                   for pb in (1, 2, 4, 8)}
        assert set(results.values()) == {expected}

    @given(st.lists(st.tuples(st.integers(-7, 7), st.integers(-7, 7)), min_size=1, max_size=50))
    def test_commutative(self, pairs):
        s = PartitionScheme(4, 1)
        x = QuantizedVector.from_ints([a for a, _ in pairs], s)
        w = QuantizedVector.from_ints([b for _, b in pairs], s)
        assert wide_bp_dot(x, w) == wide_bp_dot(w, x)

    def test_32bit_mode_overflow(self):
        n = 200_000
        x = QuantizedVector.from_ints(np.full(n, 127))
        w = QuantizedVector.from_ints(np.full(n, 127))
        assert wide_bp_dot(x, w) == 127 * 127 * n
        with pytest.raises(AccumulatorOverflow):
            wide_bp_dot(x, w, acc_bits=32)

    def test_result_width_bound(self):
        assert required_accumulator_bits(8, 4096) == 28
        assert required_accumulator_bits(8, 1) == 16


class TestReaggregate:
    def test_example(self):
        assert reaggregate([(2, 2, 6), (2, 0, 3), (0, 2, 2), (0, 0, 1)]) == 117

    def test_identity(self):
        assert reaggregate([(0, 0, 42)]) == 42

    def test_zero(self):
        assert reaggregate([(0, 0, 0), (2, 2, 0)]) == 0

    def test_duplicate(self):
        with pytest.raises(ContractViolation):
            reaggregate([(0, 0, 1), (0, 0, 2)])

    def test_incomplete_for_scheme(self):
        with pytest.raises(ContractViolation):
            reaggregate([(0, 0, 1)], PartitionScheme(4, 2))


class TestBpMatmul:
    @pytest.mark.parametrize("pb", [1, 2, 4, 8])
    def test_matches_numpy(self, pb):
        rng = np.random.default_rng(pb)
        x = rng.integers(-127, 128, size=(7, 33))
        w = rng.integers(-127, 128, size=(5, 33))
        out, sat = bp_matmul(x, w, PartitionScheme(8, pb))
        assert sat == 0
        assert np.array_equal(out, x @ w.T)

    def test_counts_saturation(self):
        out, sat = bp_matmul(np.array([[-128, 1]]), np.array([[1, 1]]))
        assert sat == 1
        assert out[0, 0] == -127 + 1
