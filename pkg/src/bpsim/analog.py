"""Behavioral model of the switched-capacitor bit-partitioned MACC.

Covers the charge-domain multiply (input DAC sampling, charge sharing onto
the weight DAC), ideal and incomplete-transfer accumulation, the weight
transform that folds the transfer error into the weights, accumulated
thermal noise, PVT sampling, and the differential SAR ADC.

Equations are written for 2-bit partitions: each capacitive DAC holds three
unit capacitors (C and 2C), so partition magnitudes live in [0, 3].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bitpart import PartitionScheme
from .errors import ContractViolation

K_BOLTZMANN = 1.380649e-23
DAC_UNITS = 3  # C + 2C


@dataclass(frozen=True)
class CapacitorBank:
    cx: float = 3e-15
    cw: float = 1e-15
    cacc: float = 24e-15

    def __post_init__(self):
        for name in ("cx", "cw", "cacc"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive")

    @property
    def alpha(self) -> float:
        return self.cacc / (3 * self.cw)

    @property
    def beta(self) -> float:
        return self.cx / self.cw

    @classmethod
    def from_ratios(cls, alpha: float, beta: float, cw: float = 1e-15) -> "CapacitorBank":
        return cls(cx=beta * cw, cw=cw, cacc=3 * alpha * cw)


@dataclass(frozen=True)
class SupplyThermalModel:
    vdd_nominal: float = 1.0
    vdd_sigma: float = 0.2 / 3
    t_nominal: float = (358.0 + 300.0) / 2
    t_sigma: float = (358.0 - 300.0) / 6
    vdd_clamp: float = 0.20
    k_boltzmann: float = K_BOLTZMANN

    @classmethod
    def from_range(cls, t_min: float = 300.0, t_max: float = 358.0, **kw) -> "SupplyThermalModel":
        """Temperature Gaussian whose 6-sigma span equals ``t_max - t_min``."""
        return cls(t_nominal=(t_min + t_max) / 2, t_sigma=(t_max - t_min) / 6, **kw)

    def sample(self, rng: np.random.Generator, size=None):
        """Draw ``(vdd, T)``; the supply is clamped, temperature is not."""
        vdd = self.vdd_nominal + rng.normal(0.0, self.vdd_sigma, size)
        lim = self.vdd_clamp * self.vdd_nominal
        vdd = np.clip(vdd, self.vdd_nominal - lim, self.vdd_nominal + lim)
        T = self.t_nominal + rng.normal(0.0, self.t_sigma, size)
        return vdd, T


@dataclass(frozen=True)
class ProcessModel:
    cap_mismatch_sigma: float = 0.01
    clamp: float = 0.06


@dataclass(frozen=True)
class AdcModel:
    resolution_bits: int = 10
    sample_rate: float = 15e6
    fullscale: float | None = None
    differential: bool = True

    def __post_init__(self):
        if self.resolution_bits < 2:
            raise ContractViolation("ADC needs at least 2 bits")
        if self.sample_rate <= 0:
            raise ContractViolation("sample_rate must be positive")
        if not self.differential:
            raise ContractViolation("only differential converters are modeled")

    @property
    def codes(self) -> int:
        return 1 << self.resolution_bits

    @property
    def code_max(self) -> int:
        return (1 << (self.resolution_bits - 1)) - 1

    @property
    def code_min(self) -> int:
        return -(1 << (self.resolution_bits - 1))

    def conversion_cycles(self, m: int, frequency: float) -> int:
        """Clock cycles one conversion occupies the converter.

        Nominally ``m + 1`` (pipelined with the next window); a converter too
        slow for the clock stretches it to its own conversion time, rounded
        to the nearest cycle.
        """
        return max(m + 1, math.floor(frequency / self.sample_rate + 0.5))

    def with_fullscale(self, fullscale: float) -> "AdcModel":
        return replace(self, fullscale=fullscale)


def default_fullscale(m: int, bank: CapacitorBank, vdd: float, partition_bits: int = 2) -> float:
    """Largest ideal accumulator voltage of an ``m``-cycle window."""
    dmax = (1 << partition_bits) - 1
    return m * dmax * dmax * vdd / (9 * bank.alpha)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_acc: float
    r: int = 1
    shift_sum: int = 85
    model: str = "linear"
    quadrature_factor: float = 4369.0

    def __post_init__(self):
        if self.sigma_acc < 0:
            raise ContractViolation("sigma_acc must be non-negative")
        if self.r < 1:
            raise ContractViolation("r must be at least 1")
        if self.model not in ("linear", "quadrature"):
            raise ContractViolation(f"unknown noise model {self.model!r}")

    @classmethod
    def for_scheme(cls, sigma_acc: float, r: int, scheme: PartitionScheme | None = None,
                   model: str = "linear") -> "NoiseSpec":
        scheme = scheme or PartitionScheme()
        quad = math.sqrt(sum(4 ** (p + q) for p in scheme.significances() for q in scheme.significances()))
        return cls(sigma_acc, r, scheme.shift_sum, model, quad)

    @property
    def effective_sigma(self) -> float:
        if self.model == "linear":
            return self.sigma_acc * self.r * self.shift_sum
        # independent per-window noise shifted by 2^(sx+sw) adds in quadrature
        return self.sigma_acc * math.sqrt(self.r) * self.quadrature_factor


def _check_magnitude(v, name):
    if not 0 <= v <= DAC_UNITS:
        raise ContractViolation(f"{name} must be a 2-bit magnitude in [0, 3], got {v}")


def sampled_input_charge(x_mag: int, bank: CapacitorBank, vdd: float) -> float:
    _check_magnitude(x_mag, "x_mag")
    return vdd * x_mag * bank.cx


def share_voltage(x_mag: int, w_mag: int, bank: CapacitorBank, vdd: float) -> float:
    """Junction voltage after the input DAC shares onto the weight DAC."""
    _check_magnitude(w_mag, "w_mag")
    return sampled_input_charge(x_mag, bank, vdd) / (DAC_UNITS * bank.cx + w_mag * bank.cw)


def weight_dac_charge(x_mag: int, w_mag: int, bank: CapacitorBank, vdd: float) -> float:
    """Charge held by the active weight capacitors, including the |w| term
    in the sharing denominator."""
    return share_voltage(x_mag, w_mag, bank, vdd) * w_mag * bank.cw


def simplified_weight_charge(x_mag: int, w_mag: int, bank: CapacitorBank, vdd: float) -> float:
    """Large-``cx`` approximation ``|x||w| cw vdd / 3``."""
    return x_mag * w_mag * bank.cw * vdd / DAC_UNITS


def _pair(W, X):
    if len(W) != len(X):
        raise ContractViolation(f"length mismatch: {len(W)} weights vs {len(X)} inputs")


def ideal_acc_voltage(W: Sequence[float], X: Sequence[float], bank: CapacitorBank, vdd: float) -> float:
    _pair(W, X)
    unit = vdd / (9 * bank.alpha)
    return math.fsum(unit * w * x for w, x in zip(W, X))


def nonideal_acc_voltage(W: Sequence[float], X: Sequence[float], bank: CapacitorBank, vdd: float) -> float:
    """Accumulator voltage with incomplete charge transfer.

    Each cycle the previous voltage decays by ``3a/(3a+|w|)`` and the new
    product adds ``w x b vdd / ((3a+|w|)(3b+|w|))``.
    """
    _pair(W, X)
    a3 = 3 * bank.alpha
    b = bank.beta
    v = 0.0
    for w, x in zip(W, X):
        aw = abs(w)
        v = a3 / (a3 + aw) * v + w * x * b / ((a3 + aw) * (3 * b + aw)) * vdd
    return v


def finetune_weights(W: Sequence[float], bank: CapacitorBank, vdd: float) -> list[float]:
    """Effective weights that make a plain dot product reproduce
    :func:`nonideal_acc_voltage` over one window.

    Index ``m-1`` is the most recent cycle; its decay product is empty.
    """
    a3 = 3 * bank.alpha
    b = bank.beta
    out = [0.0] * len(W)
    decay = 1.0
    for i in range(len(W) - 1, -1, -1):
        aw = abs(W[i])
        out[i] = W[i] / (a3 + aw) * (b * vdd) / (3 * b + aw) * decay
        decay *= a3 / (a3 + aw)
    return out


def charge_accumulate(w_mag: np.ndarray, x_mag: np.ndarray, to_negative: np.ndarray,
                      alpha: float, beta: float, vdd: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-lane accumulation onto the positive/negative capacitor pair.

    Inputs have the cycle index on the last axis. Only the capacitor selected
    by the sign each cycle is charge-shared (and decays); the other holds.
    Returns the final (v_pos, v_neg) with the cycle axis removed.
    """
    w_mag = np.asarray(w_mag, dtype=np.float64)
    x_mag = np.asarray(x_mag, dtype=np.float64)
    neg = np.asarray(to_negative, dtype=bool)
    a3 = 3 * alpha
    decay = a3 / (a3 + w_mag)
    drive = w_mag * x_mag * beta / ((a3 + w_mag) * (3 * beta + w_mag)) * vdd
    shape = w_mag.shape[:-1]
    v_pos = np.zeros(shape)
    v_neg = np.zeros(shape)
    for t in range(w_mag.shape[-1]):
        d, q, s = decay[..., t], drive[..., t], neg[..., t]
        v_pos = np.where(s, v_pos, d * v_pos + q)
        v_neg = np.where(s, d * v_neg + q, v_neg)
    return v_pos, v_neg


def thermal_sigma(bank: CapacitorBank, T: float, m: int, n: int, w_last: int,
                  k_boltzmann: float = K_BOLTZMANN) -> float:
    """Output-referred thermal noise of one MS-BPMACC after an ``m``-cycle window."""
    if m < 1 or n < 1:
        raise ContractViolation("m and n must be at least 1")
    if T <= 0:
        raise ContractViolation("temperature must be positive")
    a = bank.alpha
    per_cycle = k_boltzmann * T * (a * abs(w_last) + 3 * a + 3) / (9 * a * (a + 1) ** 2 * bank.cw)
    ratio = (a / (1 + a)) ** 2
    geometric = (1 - ratio ** m) / (1 - ratio)
    return math.sqrt(per_cycle * geometric * n)


def sample_noise_tensor(shape, spec: NoiseSpec, rng_seed) -> np.ndarray:
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s <= 0 for s in shape):
        raise ContractViolation(f"non-positive dimension in {shape}")
    rng = np.random.default_rng(rng_seed)
    sigma = spec.effective_sigma
    if sigma == 0:
        return np.zeros(shape)
    return rng.normal(0.0, sigma, size=shape)


@dataclass(frozen=True)
class PvtSample:
    bank: CapacitorBank
    vdd: float
    T: float
    mismatch: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))


def sample_pvt(bank: CapacitorBank, supply_thermal: SupplyThermalModel, process: ProcessModel,
               rng_seed) -> PvtSample:
    """Draw one chip instance: capacitor mismatch, supply and temperature."""
    rng = np.random.default_rng(rng_seed)
    deltas = rng.normal(0.0, process.cap_mismatch_sigma, size=3)
    deltas = np.clip(deltas, -process.clamp, process.clamp)
    perturbed = CapacitorBank(
        cx=bank.cx * (1 + deltas[0]),
        cw=bank.cw * (1 + deltas[1]),
        cacc=bank.cacc * (1 + deltas[2]),
    )
    vdd, T = supply_thermal.sample(rng)
    return PvtSample(perturbed, float(vdd), float(T), tuple(float(d) for d in deltas))


@dataclass
class AdcStats:
    conversions: int = 0
    saturations: int = 0


def adc_quantize(v_pos: float, v_neg: float, adc: AdcModel, stats: AdcStats | None = None,
                 fullscale: float | None = None) -> int:
    """Differential conversion ``round((v_pos - v_neg) / fs * code_max)``."""
    codes, sat = adc_quantize_array(np.array([v_pos]), np.array([v_neg]), adc, fullscale)
    if stats is not None:
        stats.conversions += 1
        stats.saturations += sat
    return int(codes[0])


def adc_quantize_array(v_pos: np.ndarray, v_neg: np.ndarray, adc: AdcModel,
                       fullscale: float | None = None) -> tuple[np.ndarray, int]:
    fs = fullscale if fullscale is not None else adc.fullscale
    if fs is None or fs <= 0:
        raise ContractViolation("ADC fullscale must be set and positive")
    raw = np.floor((np.asarray(v_pos) - np.asarray(v_neg)) / fs * adc.code_max + 0.5)
    clipped = np.clip(raw, adc.code_min, adc.code_max)
    return clipped.astype(np.int64), int(np.count_nonzero(clipped != raw))
