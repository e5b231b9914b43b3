import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bpsim.analog import (
    K_BOLTZMANN,
    AdcModel,
    AdcStats,
    CapacitorBank,
    NoiseSpec,
    ProcessModel,
    SupplyThermalModel,
    adc_quantize,
    adc_quantize_array,
    charge_accumulate,
    default_fullscale,
    finetune_weights,
    ideal_acc_voltage,
    nonideal_acc_voltage,
    sample_noise_tensor,
    sample_pvt,
    sampled_input_charge,
    share_voltage,
    simplified_weight_charge,
    thermal_sigma,
    weight_dac_charge,
)
from bpsim.bitpart import PartitionScheme
from bpsim.errors import ContractViolation
from oracles import mc_thermal_sigma

FF = 1e-15
DEFAULT = CapacitorBank()


class TestCapacitorBank:
    def test_defaults(self):
        assert DEFAULT.alpha == pytest.approx(8.0)
        assert DEFAULT.beta == pytest.approx(3.0)

    def test_ratios_follow_capacitances(self):
        b = CapacitorBank(cx=10 * FF, cw=2 * FF, cacc=12 * FF)
        assert b.alpha == pytest.approx(2.0) and b.beta == pytest.approx(5.0)

    @pytest.mark.parametrize("kw", [{"cx": 0}, {"cw": -1e-15}, {"cacc": 0.0}])
    def test_rejects_non_positive(self, kw):
        with pytest.raises(ContractViolation):
            CapacitorBank(**kw)

    def test_from_ratios(self):
        b = CapacitorBank.from_ratios(16, 4)
        assert (b.alpha, b.beta) == pytest.approx((16, 4))


class TestChargeDomain:
    def test_input_charge(self):
        assert sampled_input_charge(3, CapacitorBank(cx=FF), 1.0) == pytest.approx(3e-15)
        assert sampled_input_charge(0, DEFAULT, 1.0) == 0
        assert sampled_input_charge(1, CapacitorBank(cx=2 * FF), 0.5) == pytest.approx(1e-15)

    def test_input_range(self):
        with pytest.raises(ContractViolation):
            sampled_input_charge(4, DEFAULT, 1.0)

    def test_zero_weight_keeps_vdd(self):
        b = CapacitorBank(cx=FF, cw=FF)
        assert share_voltage(3, 0, b, 1.0) == pytest.approx(1.0)
        assert weight_dac_charge(3, 0, b, 1.0) == 0

    def test_share(self):
        b = CapacitorBank(cx=FF, cw=FF)
        assert share_voltage(2, 3, b, 1.0) == pytest.approx(1 / 3)
        assert weight_dac_charge(2, 3, b, 1.0) == pytest.approx(1e-15)

    def test_nonlinearity_shrinks_with_beta(self):
        b = CapacitorBank(cx=10 * FF, cw=FF)
        exact = weight_dac_charge(1, 1, b, 1.0)
        assert exact == pytest.approx(10 / 31 * 1e-15)
        assert simplified_weight_charge(1, 1, b, 1.0) == pytest.approx(1e-15 / 3)
        gaps = [abs(weight_dac_charge(1, 3, CapacitorBank(cx=c * FF), 1.0)
                    - simplified_weight_charge(1, 3, CapacitorBank(cx=c * FF), 1.0))
                for c in (1, 10, 100, 1000)]
        assert gaps == sorted(gaps, reverse=True)


class TestAccumulation:
    def test_ideal(self):
        assert ideal_acc_voltage([3], [2], DEFAULT, 1.0) == pytest.approx(6 / 72)
        assert ideal_acc_voltage([0] * 5, [3] * 5, DEFAULT, 1.0) == 0
        assert ideal_acc_voltage([1] * 32, [1] * 32, DEFAULT, 1.0) == pytest.approx(32 / 72)

    def test_ideal_matches_per_step_charge(self):
        # per step: |x||w| cw vdd / (3 cacc), summed
        W, X = [1, 2, 3, 0], [3, 3, 1, 2]
        direct = sum(w * x * DEFAULT.cw / (3 * DEFAULT.cacc) for w, x in zip(W, X))
        assert ideal_acc_voltage(W, X, DEFAULT, 1.0) == pytest.approx(direct, rel=1e-14)

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            ideal_acc_voltage([1, 2], [1], DEFAULT, 1.0)
        with pytest.raises(ContractViolation):
            nonideal_acc_voltage([1], [1, 2], DEFAULT, 1.0)

    def test_nonideal_one_step(self):
        assert nonideal_acc_voltage([3], [2], DEFAULT, 1.0) == pytest.approx(18 / 324)

    def test_nonideal_zero(self):
        assert nonideal_acc_voltage([0, 0, 0], [3, 2, 1], DEFAULT, 1.0) == 0

    def test_ideal_limit(self):
        b = CapacitorBank.from_ratios(1e6, 1e6)
        ni = nonideal_acc_voltage([3], [2], b, 1.0)
        assert ni == pytest.approx(6 / 9e6, rel=1e-4)
        assert ni == pytest.approx(ideal_acc_voltage([3], [2], b, 1.0), rel=1e-4)

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=64))
    def test_ideal_limit_property(self, pairs):
        b = CapacitorBank.from_ratios(1e6, 1e6)
        W = [w for w, _ in pairs]
        X = [x for _, x in pairs]
        ideal = ideal_acc_voltage(W, X, b, 1.0)
        ni = nonideal_acc_voltage(W, X, b, 1.0)
        assert abs(ni - ideal) <= 1e-4 * abs(ideal) + 1e-300


class TestFinetune:
    def test_single(self):
        wp = finetune_weights([3], DEFAULT, 1.0)
        assert wp[0] == pytest.approx(3 / 27 * 3 / 12)
        assert wp[0] * 2 == pytest.approx(nonideal_acc_voltage([3], [2], DEFAULT, 1.0))

    def test_zero_weight(self):
        for w in range(4):
            assert finetune_weights([0, w], DEFAULT, 1.0)[0] == 0

    def test_two_step(self):
        wp = finetune_weights([1, 1], DEFAULT, 1.0)
        assert wp == pytest.approx([0.01152, 0.012])
        assert sum(wp) == pytest.approx(nonideal_acc_voltage([1, 1], [1, 1], DEFAULT, 1.0), rel=1e-14)

    @settings(max_examples=300)
    @given(
        st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=64),
        st.floats(2, 64), st.floats(1, 16), st.floats(0.5, 1.5),
    )
    def test_unrolling_identity(self, pairs, alpha, beta, vdd):
        b = CapacitorBank.from_ratios(alpha, beta)
        W = [w for w, _ in pairs]
        X = [x for _, x in pairs]
        ref = nonideal_acc_voltage(W, X, b, vdd)
        got = math.fsum(w * x for w, x in zip(finetune_weights(W, b, vdd), X))
        assert abs(got - ref) <= 1e-12 * abs(ref) + 1e-300


class TestChargeAccumulate:
    def test_matches_scalar_recurrence_per_capacitor(self):
        rng = np.random.default_rng(3)
        W = rng.integers(0, 4, size=(5, 20))
        X = rng.integers(0, 4, size=(5, 20))
        neg = rng.integers(0, 2, size=(5, 20)).astype(bool)
        vp, vn = charge_accumulate(W, X, neg, DEFAULT.alpha, DEFAULT.beta, 1.0)
        for k in range(5):
            keep_p = ~neg[k]
            assert vp[k] == pytest.approx(nonideal_acc_voltage(W[k][keep_p], X[k][keep_p], DEFAULT, 1.0), rel=1e-12)
            assert vn[k] == pytest.approx(nonideal_acc_voltage(W[k][neg[k]], X[k][neg[k]], DEFAULT, 1.0), rel=1e-12)


class TestThermalSigma:
    def test_reference_point(self):
        s = thermal_sigma(DEFAULT, 300, 32, 8, 3)
        assert s == pytest.approx(1.17e-3, rel=0.01)

    def test_scaling(self):
        base = thermal_sigma(DEFAULT, 300, 32, 8, 3)
        assert thermal_sigma(DEFAULT, 300, 32, 32, 3) == pytest.approx(2 * base, rel=1e-12)
        assert thermal_sigma(DEFAULT, 1200, 32, 8, 3) == pytest.approx(2 * base, rel=1e-12)

    def test_closed_form_matches_sum(self):
        a = DEFAULT.alpha
        per = K_BOLTZMANN * 300 * (a * 3 + 3 * a + 3) / (9 * a * (a + 1) ** 2 * DEFAULT.cw)
        series = sum((a / (1 + a)) ** (2 * i) for i in range(32))
        assert thermal_sigma(DEFAULT, 300, 32, 8, 3) == pytest.approx(math.sqrt(per * series * 8), rel=1e-12)

    def test_monotone(self):
        ts = [thermal_sigma(DEFAULT, t, 32, 8, 3) for t in (250, 300, 350)]
        ns = [thermal_sigma(DEFAULT, 300, 32, n, 3) for n in (1, 4, 8)]
        cs = [thermal_sigma(CapacitorBank(cx=3 * c, cw=c, cacc=24 * c), 300, 32, 8, 3) for c in (FF, 2 * FF, 4 * FF)]
        assert ts == sorted(set(ts)) and ns == sorted(set(ns))
        assert cs == sorted(set(cs), reverse=True)

    @pytest.mark.parametrize("kw", [{"m": 0}, {"n": 0}, {"T": 0}])
    def test_preconditions(self, kw):
        args = dict(T=300, m=32, n=8, w_last=3)
        args.update(kw)
        with pytest.raises(ContractViolation):
            thermal_sigma(DEFAULT, **args)

    @pytest.mark.parametrize("alpha,m,n", [(8, 32, 8), (4, 8, 4)])
    def test_monte_carlo(self, alpha, m, n):
        b = CapacitorBank.from_ratios(alpha, 3)
        mc = mc_thermal_sigma(b, 300, m, n, 3, trials=20_000)
        assert mc == pytest.approx(thermal_sigma(b, 300, m, n, 3), rel=0.03)


class TestNoiseTensor:
    def test_zero(self):
        t = sample_noise_tensor((4, 5), NoiseSpec(0.0, 3), 1)
        assert t.shape == (4, 5) and not t.any()

    def test_deterministic(self):
        spec = NoiseSpec(1e-3, 2)
        assert np.array_equal(sample_noise_tensor((100,), spec, 7), sample_noise_tensor((100,), spec, 7))

    def test_std(self):
        spec = NoiseSpec(1e-3, 3)
        assert spec.effective_sigma == pytest.approx(0.255)
        t = sample_noise_tensor((1_000_000,), spec, 11)
        assert t.std() == pytest.approx(0.255, rel=0.005)
        assert abs(t.mean()) < 5 * 0.255 / 1000

    def test_bad_shape(self):
        with pytest.raises(ContractViolation):
            sample_noise_tensor((3, 0), NoiseSpec(1e-3), 0)

    def test_shift_sum_from_scheme(self):
        assert NoiseSpec.for_scheme(1e-3, 1).shift_sum == 85
        assert NoiseSpec.for_scheme(1e-3, 1, PartitionScheme(8, 4)).shift_sum == 17
        assert NoiseSpec.for_scheme(1e-3, 1, PartitionScheme(8, 1)).shift_sum == 255

    def test_quadrature_alternative(self):
        spec = NoiseSpec.for_scheme(1e-3, 4, model="quadrature")
        expected = 1e-3 * 2 * math.sqrt(sum(4 ** (p + q) for p in (0, 2, 4, 6) for q in (0, 2, 4, 6)))
        assert spec.effective_sigma == pytest.approx(expected)


class TestPvt:
    def test_zero_sigma_identity(self):
        st_model = SupplyThermalModel(vdd_sigma=0.0, t_sigma=0.0)
        s = sample_pvt(DEFAULT, st_model, ProcessModel(cap_mismatch_sigma=0.0), 5)
        assert s.bank == DEFAULT and s.vdd == 1.0 and s.T == st_model.t_nominal

    def test_defaults(self):
        m = SupplyThermalModel()
        assert m.t_nominal == 329 and 6 * m.t_sigma == pytest.approx(58)
        assert m == SupplyThermalModel.from_range(300, 358)

    def test_ratios_recomputed(self):
        s = sample_pvt(DEFAULT, SupplyThermalModel(), ProcessModel(), 9)
        assert s.bank.alpha == pytest.approx(s.bank.cacc / (3 * s.bank.cw))
        assert s.bank.alpha != DEFAULT.alpha

    def test_process_clamp(self):
        # heavy sigma so the clamp is actually exercised
        proc = ProcessModel(cap_mismatch_sigma=0.05, clamp=0.06)
        rel = []
        for seed in range(2000):
            s = sample_pvt(DEFAULT, SupplyThermalModel(), proc, seed)
            rel.append(s.bank.cw / DEFAULT.cw - 1)
        rel = np.array(rel)
        assert np.abs(rel).max() <= 0.06 + 1e-12
        assert np.isclose(np.abs(rel), 0.06).any()

    def test_vdd_clamp(self):
        model = SupplyThermalModel(vdd_sigma=0.5)
        vdds = [sample_pvt(DEFAULT, model, ProcessModel(), s).vdd for s in range(500)]
        assert max(abs(v - 1.0) for v in vdds) <= 0.2 + 1e-12

    def test_temperature_coverage(self):
        m = SupplyThermalModel()
        _, T = m.sample(np.random.default_rng(0), 1_000_000)
        assert np.mean((T >= 300) & (T <= 358)) >= 0.997


class TestAdc:
    def test_null(self):
        assert adc_quantize(0.3, 0.3, AdcModel(fullscale=1.0)) == 0

    def test_fullscale(self):
        adc = AdcModel(fullscale=0.5)
        assert adc_quantize(0.5, 0.0, adc) == 511
        assert adc_quantize(0.0, 0.5, adc) == -511
        assert adc.codes == 1024

    def test_saturation(self):
        adc = AdcModel(fullscale=0.5)
        stats = AdcStats()
        assert adc_quantize(2.0, 0.0, adc, stats) == 511
        assert adc_quantize(0.0, 2.0, adc, stats) == -512
        assert adc_quantize(0.1, 0.0, adc, stats) == 102
        assert (stats.conversions, stats.saturations) == (3, 2)

    def test_requires_fullscale(self):
        with pytest.raises(ContractViolation):
            adc_quantize(0.1, 0.0, AdcModel())

    def test_latency(self):
        adc = AdcModel()
        assert adc.conversion_cycles(32, 500e6) == 33
        assert AdcModel(sample_rate=1e6).conversion_cycles(32, 500e6) == 500

    def test_default_fullscale(self):
        assert default_fullscale(32, DEFAULT, 1.0) == pytest.approx(32 / 8)
        # the largest in-range window converts without clipping
        adc = AdcModel(fullscale=default_fullscale(32, DEFAULT, 1.0))
        stats = AdcStats()
        adc_quantize(ideal_acc_voltage([3] * 32, [3] * 32, DEFAULT, 1.0), 0, adc, stats)
        assert stats.saturations == 0

    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=50))
    def test_monotone(self, diffs):
        diffs = np.sort(np.array(diffs))
        codes, _ = adc_quantize_array(diffs, np.zeros_like(diffs), AdcModel(fullscale=1.0))
        assert (np.diff(codes) >= 0).all()
