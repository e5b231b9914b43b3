"""Exact wide, interleaved, bit-partitioned dot products.

Operands are sign-magnitude integers. Each magnitude is split into
``operand_bits / partition_bits`` digits; digits of equal significance drawn
from every element form one *group*. A dot product becomes one low-bitwidth
partial product per (x-group, w-group) pair, shifted and summed afterwards.
Everything here is exact integer arithmetic and is the functional reference
for the simulator and the analog model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AccumulatorOverflow, ContractViolation

VALID_PARTITION_BITS = (1, 2, 4, 8)


@dataclass(frozen=True)
class PartitionScheme:
    operand_bits: int = 8
    partition_bits: int = 2

    def __post_init__(self):
        if self.operand_bits <= 0:
            raise ContractViolation(f"operand_bits must be positive, got {self.operand_bits}")
        if self.partition_bits not in VALID_PARTITION_BITS:
            raise ContractViolation(
                f"partition_bits must be one of {VALID_PARTITION_BITS}, got {self.partition_bits}"
            )
        if self.operand_bits % self.partition_bits:
            raise ContractViolation(
                f"partition_bits={self.partition_bits} does not divide operand_bits={self.operand_bits}"
            )

    @property
    def partitions_per_operand(self) -> int:
        return self.operand_bits // self.partition_bits

    @property
    def pair_count(self) -> int:
        """Number of (x-group, w-group) partial products, i.e. MS-BPMACCs per MS-WAGG."""
        return self.partitions_per_operand ** 2

    @property
    def digit_max(self) -> int:
        return (1 << self.partition_bits) - 1

    @property
    def max_magnitude(self) -> int:
        return (1 << (self.operand_bits - 1)) - 1

    def significances(self) -> tuple[int, ...]:
        return tuple(k * self.partition_bits for k in range(self.partitions_per_operand))

    @property
    def shift_sum(self) -> int:
        """Sum of the per-group power-of-two weights (85 for 8-bit/2-bit)."""
        return sum(1 << s for s in self.significances())


@dataclass(frozen=True)
class SignMagnitudeValue:
    sign: int
    magnitude: int
    saturated: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ContractViolation(f"sign must be +1 or -1, got {self.sign}")
        if self.magnitude < 0:
            raise ContractViolation(f"magnitude must be non-negative, got {self.magnitude}")
        if self.magnitude == 0 and self.sign == -1:
            object.__setattr__(self, "sign", 1)

    @property
    def value(self) -> int:
        return self.sign * self.magnitude


@dataclass(frozen=True)
class BitGroup:
    significance: int
    partitions: tuple[int, ...]
    signs: tuple[int, ...]


def to_sign_magnitude(v: int, operand_bits: int = 8) -> SignMagnitudeValue:
    """Convert a two's-complement integer, saturating the asymmetric minimum."""
    v = int(v)
    bound = 1 << (operand_bits - 1)
    if abs(v) > bound:
        raise ContractViolation(f"{v} does not fit a {operand_bits}-bit operand")
    limit = bound - 1
    if v < -limit:
        return SignMagnitudeValue(-1, limit, saturated=True)
    if v > limit:
        # only reachable when |v| == bound with a positive sign, which is
        # outside two's complement but accepted by the precondition
        return SignMagnitudeValue(1, limit, saturated=True)
    return SignMagnitudeValue(1 if v >= 0 else -1, abs(v))


def sign_magnitude_arrays(values, operand_bits: int = 8):
    """Vectorized :func:`to_sign_magnitude`.

    Returns ``(signs, magnitudes, saturation_count)``; signs are int64 arrays of
    +1/-1 with zero canonicalized to +1.
    """
    v = np.asarray(values, dtype=np.int64)
    bound = 1 << (operand_bits - 1)
    if v.size and np.abs(v).max() > bound:
        raise ContractViolation(f"values exceed the {operand_bits}-bit operand range")
    limit = bound - 1
    mags = np.abs(v)
    saturated = mags > limit
    mags = np.minimum(mags, limit)
    signs = np.where(v < 0, -1, 1).astype(np.int64)
    signs[mags == 0] = 1
    return signs, mags, int(saturated.sum())


class QuantizedVector:
    """A sign-magnitude vector bound to a partition scheme.

    Magnitudes may use the whole partitioned width (``operand_bits`` bits);
    two's-complement inputs go through :meth:`from_ints`, which saturates at
    the symmetric sign-magnitude bound.

    Storage is columnar (numpy arrays) so million-element vectors stay cheap;
    ``elements`` materializes :class:`SignMagnitudeValue` objects on demand.
    """

    __slots__ = ("signs", "magnitudes", "scheme", "saturations")

    def __init__(self, signs, magnitudes, scheme: PartitionScheme, saturations: int = 0):
        signs = np.asarray(signs, dtype=np.int64)
        magnitudes = np.asarray(magnitudes, dtype=np.int64)
        if signs.shape != magnitudes.shape or signs.ndim != 1:
            raise ContractViolation("signs and magnitudes must be equal-length 1-D sequences")
        limit = (1 << scheme.operand_bits) - 1
        if magnitudes.size and (magnitudes.min() < 0 or magnitudes.max() > limit):
            raise ContractViolation(
                f"magnitudes must lie in [0, {limit}] for {scheme.operand_bits}-bit partitioning"
            )
        if signs.size and not np.isin(signs, (-1, 1)).all():
            raise ContractViolation("signs must be +1 or -1")
        signs = signs.copy()
        signs[magnitudes == 0] = 1
        self.signs = signs
        self.magnitudes = magnitudes
        self.scheme = scheme
        self.saturations = saturations

    @classmethod
    def from_ints(cls, values, scheme: PartitionScheme | None = None) -> "QuantizedVector":
        scheme = scheme or PartitionScheme()
        signs, mags, sat = sign_magnitude_arrays(values, scheme.operand_bits)
        return cls(signs.ravel(), mags.ravel(), scheme, sat)

    @classmethod
    def unsigned(cls, magnitudes, scheme: PartitionScheme) -> "QuantizedVector":
        """Positive operands using the full partitioned width (no sign bit)."""
        mags = np.asarray(magnitudes, dtype=np.int64).ravel()
        return cls(np.ones_like(mags), mags, scheme)

    @classmethod
    def from_elements(cls, elements: Sequence[SignMagnitudeValue], scheme: PartitionScheme) -> "QuantizedVector":
        return cls([e.sign for e in elements], [e.magnitude for e in elements], scheme)

    @property
    def elements(self) -> tuple[SignMagnitudeValue, ...]:
        return tuple(SignMagnitudeValue(int(s), int(m)) for s, m in zip(self.signs, self.magnitudes))

    def values(self) -> np.ndarray:
        return self.signs * self.magnitudes

    def __len__(self):
        return int(self.magnitudes.size)

    def __eq__(self, other):
        if not isinstance(other, QuantizedVector):
            return NotImplemented
        return (
            self.scheme == other.scheme
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.magnitudes, other.magnitudes)
        )

    def __repr__(self):
        return f"QuantizedVector({self.values().tolist()!r}, {self.scheme})"


def partition_digits(magnitudes, scheme: PartitionScheme) -> np.ndarray:
    """Split magnitudes into digits; output has a new leading axis of length
    ``partitions_per_operand`` ordered by increasing significance."""
    mags = np.asarray(magnitudes, dtype=np.int64)
    b = scheme.partition_bits
    shifts = np.arange(scheme.partitions_per_operand, dtype=np.int64) * b
    shifts = shifts.reshape((-1,) + (1,) * mags.ndim)
    return (mags[np.newaxis, ...] >> shifts) & scheme.digit_max


def bit_partition(v: QuantizedVector) -> list[BitGroup]:
    digits = partition_digits(v.magnitudes, v.scheme)
    signs = tuple(int(s) for s in v.signs)
    return [
        BitGroup(sig, tuple(int(d) for d in digits[k]), signs)
        for k, sig in enumerate(v.scheme.significances())
    ]


def _check_width(value: int, acc_bits: int):
    lo = -(1 << (acc_bits - 1))
    hi = (1 << (acc_bits - 1)) - 1
    if not lo <= value <= hi:
        raise AccumulatorOverflow(f"{value} does not fit a {acc_bits}-bit accumulator")


def required_accumulator_bits(operand_bits: int, length: int) -> int:
    return 2 * operand_bits + max(0, math.ceil(math.log2(max(length, 1))))


def reaggregate(group_partials: Iterable[tuple[int, int, int]], scheme: PartitionScheme | None = None,
                acc_bits: int = 64) -> int:
    """Shift each partial by ``sig_x + sig_w`` and sum.

    With ``scheme`` given, exactly one partial per significance pair is
    required. The running sum is checked against ``acc_bits`` after every add,
    mirroring a hardware output register.
    """
    seen = set()
    total = 0
    for sig_x, sig_w, partial in group_partials:
        key = (int(sig_x), int(sig_w))
        if key in seen:
            raise ContractViolation(f"duplicate partial for significance pair {key}")
        seen.add(key)
        total += int(partial) << (key[0] + key[1])
        _check_width(total, acc_bits)
    if scheme is not None:
        expected = {(p, q) for p in scheme.significances() for q in scheme.significances()}
        if seen != expected:
            missing = sorted(expected - seen)
            extra = sorted(seen - expected)
            raise ContractViolation(f"partials do not cover the scheme: missing={missing} extra={extra}")
    return total


def group_partials(X: QuantizedVector, W: QuantizedVector) -> list[tuple[int, int, int]]:
    """Signed partial product for every (x-group, w-group) pair.

    Same-sign lane products go to a positive accumulator and opposite-sign ones
    to a negative accumulator; the partial is their difference.
    """
    if len(X) != len(W):
        raise ContractViolation(f"length mismatch: {len(X)} vs {len(W)}")
    if X.scheme != W.scheme:
        raise ContractViolation(f"scheme mismatch: {X.scheme} vs {W.scheme}")
    scheme = X.scheme
    px = partition_digits(X.magnitudes, scheme)
    pw = partition_digits(W.magnitudes, scheme)
    lane_sign = X.signs * W.signs
    pos = (px * (lane_sign > 0)) @ pw.T
    neg = (px * (lane_sign < 0)) @ pw.T
    partial = pos - neg
    sigs = scheme.significances()
    return [(sigs[p], sigs[q], int(partial[p, q])) for p in range(len(sigs)) for q in range(len(sigs))]


def wide_bp_dot(X: QuantizedVector, W: QuantizedVector, acc_bits: int = 64) -> int:
    """Exact dot product through the bit-partitioned reformulation."""
    return reaggregate(group_partials(X, W), X.scheme, acc_bits)


def bp_matmul(x, w, scheme: PartitionScheme | None = None) -> tuple[np.ndarray, int]:
    """Batched bit-partitioned products ``x @ w.T`` on signed integer arrays.

    ``x`` is (P, L), ``w`` is (Q, L). Returns the exact int64 (P, Q) result and
    the number of operands that saturated during sign-magnitude conversion.
    """
    scheme = scheme or PartitionScheme()
    sx, mx, sat_x = sign_magnitude_arrays(x, scheme.operand_bits)
    sw, mw, sat_w = sign_magnitude_arrays(w, scheme.operand_bits)
    if mx.ndim != 2 or mw.ndim != 2 or mx.shape[1] != mw.shape[1]:
        raise ContractViolation(f"incompatible operand shapes {mx.shape} and {mw.shape}")
    dx = partition_digits(mx, scheme) * sx
    dw = partition_digits(mw, scheme) * sw
    out = np.zeros((mx.shape[0], mw.shape[0]), dtype=np.int64)
    sigs = scheme.significances()
    for p, sp in enumerate(sigs):
        for q, sq in enumerate(sigs):
            out += (dx[p] @ dw[q].T) << (sp + sq)
    return out, sat_x + sat_w
