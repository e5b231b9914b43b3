"""MS-WAGG model: a grid of MS-BPMACCs (one per partition pair), each with
n lanes accumulating for m cycles onto a positive/negative capacitor pair,
one converter per MS-BPMACC, and a digital shift-add into an output register.

:class:`MswaggUnit` steps one clock at a time and is the executable
definition. :func:`window_schedule` advances the same state machine one
window at a time for long runs, and the ``*_windows`` functions evaluate
many outputs at once for the simulator's functional path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..analog import AdcModel, CapacitorBank, adc_quantize_array, charge_accumulate, default_fullscale
from ..bitpart import PartitionScheme, partition_digits, sign_magnitude_arrays
from ..errors import PipelineError


class MswaggUnit:
    """Cycle-stepped ideal MS-WAGG.

    Each :meth:`step` is one accumulation cycle over ``n`` lanes; after at
    most ``m`` steps, :meth:`close` spends one cycle charge-sharing and hands
    the window to the converters, which finish ``conversion_cycles`` later
    and add the shifted partials into ``register``. :meth:`tick` is an idle
    cycle.
    """

    def __init__(self, n: int = 8, m: int = 32, scheme: PartitionScheme | None = None,
                 conversion_cycles: int | None = None, acc_bits: int = 32):
        self.n = n
        self.m = m
        self.scheme = scheme or PartitionScheme()
        self.conversion_cycles = conversion_cycles if conversion_cycles is not None else m + 1
        self.acc_bits = acc_bits
        k = self.scheme.partitions_per_operand
        sig = np.array(self.scheme.significances())
        self._shift = sig[:, None] + sig[None, :]
        self.pos = np.zeros((k, k), dtype=np.int64)
        self.neg = np.zeros((k, k), dtype=np.int64)
        self.cycle = 0
        self.filled = 0
        self.adc_free_at = 0
        self.in_flight: list[tuple[int, np.ndarray]] = []
        self.register = 0
        self.windows_done = 0
        self.overflows = 0
        self.events: list[tuple[int, str]] = []

    def _advance(self):
        self.cycle += 1
        done = [w for w in self.in_flight if w[0] <= self.cycle]
        self.in_flight = [w for w in self.in_flight if w[0] > self.cycle]
        for t, partial in done:
            self.register += int((partial << self._shift).sum())
            lim = 1 << (self.acc_bits - 1)
            if not -lim <= self.register < lim:
                self.overflows += 1
            self.windows_done += 1
            self.events.append((t, "window_done"))

    def step(self, x, w):
        x = np.asarray(x, dtype=np.int64)
        w = np.asarray(w, dtype=np.int64)
        if x.shape != (self.n,) or w.shape != (self.n,):
            raise ValueError(f"sub-vectors must have {self.n} lanes")
        if self.filled == self.m:
            raise PipelineError("window is full; close() it before stepping again")
        sx, mx, _ = sign_magnitude_arrays(x, self.scheme.operand_bits)
        sw, mw, _ = sign_magnitude_arrays(w, self.scheme.operand_bits)
        dx = partition_digits(mx, self.scheme)
        dw = partition_digits(mw, self.scheme)
        same = (sx * sw) > 0
        self.pos += (dx * same) @ dw.T
        self.neg += (dx * ~same) @ dw.T
        self.filled += 1
        self._advance()

    def close(self):
        if self.adc_free_at > self.cycle:
            raise PipelineError(f"converter busy until cycle {self.adc_free_at} (now {self.cycle})")
        # charge-share happens in this cycle; the conversion starts with it
        start = self.cycle
        self.adc_free_at = start + self.conversion_cycles
        self.in_flight.append((start + self.conversion_cycles, self.pos - self.neg))
        self.pos = np.zeros_like(self.pos)
        self.neg = np.zeros_like(self.neg)
        self.filled = 0
        self._advance()

    def tick(self):
        self._advance()

    def drain(self):
        while self.in_flight:
            self._advance()

    @property
    def busy(self) -> bool:
        return bool(self.in_flight) or self.filled > 0


@dataclass
class WindowTiming:
    cycles: int
    completions: list[int] = field(default_factory=list)
    stalls: int = 0


def window_schedule(windows: int, m: int, conversion_cycles: int, record: bool = False) -> WindowTiming:
    """Timing of ``windows`` back-to-back full windows on one MS-WAGG,
    advancing :class:`MswaggUnit`'s state machine a window at a time.

    Includes one trailing cycle for the column aggregation and requantization.
    """
    if windows <= 0:
        return WindowTiming(0)
    t = 0
    adc_free = 0
    stalls = 0
    completions = []
    for _ in range(windows):
        t += m                      # accumulation cycles
        if adc_free > t:            # converter still busy: hold the lanes
            stalls += adc_free - t
            t = adc_free
        done = t + conversion_cycles
        adc_free = done
        if record:
            completions.append(done)
        t += 1                      # charge-share cycle
    last = t - 1 + conversion_cycles
    return WindowTiming(last + 1, completions, stalls)


def _windowed(digits: np.ndarray, window: int) -> np.ndarray:
    """(..., L) -> (..., nwin, window), zero padded."""
    L = digits.shape[-1]
    nwin = max(1, math.ceil(L / window))
    pad = nwin * window - L
    if pad:
        digits = np.concatenate([digits, np.zeros(digits.shape[:-1] + (pad,), dtype=digits.dtype)], axis=-1)
    return digits.reshape(digits.shape[:-1] + (nwin, window))


@dataclass
class WindowResult:
    acc: np.ndarray            # (P, Q) int64 accumulators
    windows: int               # conversion windows per output
    sign_saturations: int = 0
    adc_saturations: int = 0
    overflows: int = 0


def _operands(x, w, scheme):
    sx, mx, sat_x = sign_magnitude_arrays(x, scheme.operand_bits)
    sw, mw, sat_w = sign_magnitude_arrays(w, scheme.operand_bits)
    return sx, partition_digits(mx, scheme), sw, partition_digits(mw, scheme), sat_x + sat_w


def _count_overflow(window_values: np.ndarray, acc_bits: int) -> int:
    run = np.cumsum(window_values, axis=-1)
    lim = 1 << (acc_bits - 1)
    return int(np.count_nonzero((run < -lim) | (run >= lim)))


def ideal_windows(x: np.ndarray, w: np.ndarray, n: int, m: int, scheme: PartitionScheme,
                  acc_bits: int = 32) -> WindowResult:
    """Exact window-by-window evaluation of ``x @ w.T`` (x: P x L, w: Q x L).

    Every (window, x-group, w-group) keeps separate positive and negative
    sums; an ideal converter returns their difference exactly.
    """
    sx, dx, sw, dw, sat = _operands(x, w, scheme)
    win = n * m
    xs_pos = _windowed(dx * (sx > 0), win)      # (k, P, nwin, win)
    xs_neg = _windowed(dx * (sx < 0), win)
    ws_pos = _windowed(dw * (sw > 0), win)      # (k, Q, nwin, win)
    ws_neg = _windowed(dw * (sw < 0), win)
    pos = np.einsum("apwe,bqwe->abpqw", xs_pos, ws_pos) + np.einsum("apwe,bqwe->abpqw", xs_neg, ws_neg)
    neg = np.einsum("apwe,bqwe->abpqw", xs_pos, ws_neg) + np.einsum("apwe,bqwe->abpqw", xs_neg, ws_pos)
    sig = np.array(scheme.significances())
    shift = (sig[:, None] + sig[None, :])[:, :, None, None, None]
    per_window = ((pos - neg) << shift).sum(axis=(0, 1))     # (P, Q, nwin)
    return WindowResult(per_window.sum(axis=-1), per_window.shape[-1], sat, 0,
                        _count_overflow(per_window, acc_bits))


@dataclass(frozen=True)
class AnalogSetup:
    bank: CapacitorBank                 # possibly PVT-perturbed
    vdd: float
    nominal_bank: CapacitorBank
    nominal_vdd: float
    adc: AdcModel
    charge_model: str = "nonideal"
    quantize: bool = True
    noise: str = "off"
    sigma_units: float = 0.0            # accumulated thermal noise, in product units


def analog_windows(x: np.ndarray, w: np.ndarray, n: int, m: int, scheme: PartitionScheme,
                   setup: AnalogSetup, rng: np.random.Generator, acc_bits: int = 32,
                   chunk: int = 64) -> WindowResult:
    """Window evaluation through the switched-capacitor model.

    Element ``i`` of a window goes to lane ``i % n`` in cycle ``i // n``. Each
    lane charges its positive or negative capacitor; the n capacitors of
    each sign are then shared, differentially converted, and decoded back to
    product units with the nominal gain.
    """
    if scheme.partition_bits != 2:
        raise ValueError("the charge-domain model is defined for 2-bit partitions")
    sx, dx, sw, dw, sat = _operands(x, w, scheme)
    win = n * m
    k = scheme.partitions_per_operand
    P, Q = x.shape[0], w.shape[0]
    xd = _windowed(dx, win).reshape(k, P, -1, m, n)        # (k, P, nwin, m, n)
    wd = _windowed(dw, win).reshape(k, Q, -1, m, n)
    xsg = _windowed(sx[None], win).reshape(P, -1, m, n)
    wsg = _windowed(sw[None], win).reshape(Q, -1, m, n)
    nwin = xd.shape[2]
    unit = setup.nominal_vdd / (9 * setup.nominal_bank.alpha)
    fs = default_fullscale(m, setup.nominal_bank, setup.nominal_vdd)
    lsb_units = fs / setup.adc.code_max * n / unit
    sig = np.array(scheme.significances())
    shift_w = 2.0 ** (sig[:, None] + sig[None, :])
    a, b = setup.bank.alpha, setup.bank.beta
    acc = np.zeros((P, Q))
    per_window_total = np.zeros((P, Q, nwin))
    adc_sat = 0
    for p0 in range(0, P, chunk):
        ps = slice(p0, min(P, p0 + chunk))
        # (k_x, k_w, p, q, nwin, n, m) with cycles last for charge_accumulate
        X = xd[:, None, ps, None].transpose(0, 1, 2, 3, 4, 6, 5)
        W = wd[None, :, None, :].transpose(0, 1, 2, 3, 4, 6, 5)
        neg = (xsg[ps, None] * wsg[None, :] < 0).transpose(0, 1, 2, 4, 3)[None, None]
        X, W, neg = np.broadcast_arrays(X, W, neg)
        if setup.charge_model == "nonideal":
            vp, vn = charge_accumulate(W, X, neg, a, b, setup.vdd)
        else:
            prod = (W * X).astype(np.float64) * (setup.vdd / (9 * a))
            vp = (prod * ~neg).sum(axis=-1)
            vn = (prod * neg).sum(axis=-1)
        vp = vp.mean(axis=-1)   # charge-share across the n lanes
        vn = vn.mean(axis=-1)
        if setup.quantize:
            codes, s = adc_quantize_array(vp, vn, setup.adc, fs)
            adc_sat += s
            partial = codes * lsb_units
        else:
            partial = (vp - vn) * n / unit
        if setup.noise == "quadrature" and setup.sigma_units > 0:
            partial = partial + rng.normal(0.0, setup.sigma_units, partial.shape)
        per_window = np.einsum("abpqw,ab->pqw", partial, shift_w)
        per_window_total[ps] = per_window
        acc[ps] = per_window.sum(axis=-1)
    if setup.noise == "linear" and setup.sigma_units > 0:
        acc = acc + rng.normal(0.0, setup.sigma_units * nwin * scheme.shift_sum, acc.shape)
    out = np.rint(acc).astype(np.int64)
    return WindowResult(out, nwin, sat, adc_sat, _count_overflow(np.rint(per_window_total), acc_bits))
