"""Energy accounting: per-MACC figures, per conversion window, and run
reports split into compute / on-chip memory / interconnect / DRAM.

Per-event unit costs live in :class:`EnergyTable`. The analog MACC and
converter costs are the measured circuit figures; the memory, bus and DRAM
costs are placeholders meant to be overridden from configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable

from .bitpart import PartitionScheme
from .errors import ContractViolation

CATEGORIES = ("compute", "memory", "interconnect", "dram")
FJ = 1e-15
PJ = 1e-12


@dataclass(frozen=True)
class EnergyTable:
    macc_2b_fj: float = 5.1
    adc_conversion_fj: float = 1660.0
    digital_macc_8b_pj: float = 1.0
    # placeholders, not measured values
    sram_read_fj_per_byte: float = 80.0
    sram_write_fj_per_byte: float = 80.0
    dram_pj_per_byte: float = 10.0
    bus_fj_per_byte: float = 40.0
    digital_op_fj: float = 50.0
    reg_add_fj: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ContractViolation(f"energy entry {f.name} must be non-negative")

    def macc_fj(self, partition_bits: int = 2) -> float:
        """Per-lane MACC energy at a partition width.

        Only the 2-bit figure is measured. Other widths scale with the DAC
        capacitance, which grows as ``2^b - 1`` unit capacitors.
        """
        return self.macc_2b_fj * ((1 << partition_bits) - 1) / 3

    def adc_fj(self, partition_bits: int = 2) -> float:
        """Conversion energy at a partition width.

        Only the 2-bit figure is measured. Other widths use a placeholder
        scaling of 4x per extra partition bit, tracking the growth of the
        window's dynamic range.
        """
        return self.adc_conversion_fj * 4.0 ** (partition_bits - 2)


def per_partition_macc_fj(table: EnergyTable, n: int, m: int, partition_bits: int = 2) -> float:
    if n * m <= 0:
        raise ContractViolation("n*m must be positive")
    return (n * m * table.macc_fj(partition_bits) + table.adc_fj(partition_bits)) / (n * m)


def macc_energy_8b(table: EnergyTable, scheme: PartitionScheme, n: int, m: int) -> float:
    """Energy of one full-precision MACC (fJ): the per-partition figure times
    the number of partition pairs."""
    return per_partition_macc_fj(table, n, m, scheme.partition_bits) * scheme.pair_count


def window_energy(table: EnergyTable, n: int, m: int, partition_bits: int = 2) -> float:
    """Energy (fJ) of one MS-BPMACC conversion window."""
    if n < 1 or m < 1:
        raise ContractViolation("n and m must be at least 1")
    return n * m * table.macc_fj(partition_bits) + table.adc_fj(partition_bits)


def digital_to_analog_ratio(table: EnergyTable, scheme: PartitionScheme | None = None,
                            n: int = 8, m: int = 32) -> float:
    scheme = scheme or PartitionScheme()
    return table.digital_macc_8b_pj * 1000 / macc_energy_8b(table, scheme, n, m)


@dataclass(frozen=True)
class Event:
    category: str
    count: float
    unit_joules: float

    @property
    def joules(self) -> float:
        return self.count * self.unit_joules


@dataclass(frozen=True)
class EnergyReport:
    compute: float = 0.0
    memory: float = 0.0
    interconnect: float = 0.0
    dram: float = 0.0

    @property
    def total(self) -> float:
        t = 0.0
        for c in CATEGORIES:
            t += getattr(self, c)
        return t

    def __add__(self, other: "EnergyReport") -> "EnergyReport":
        if not isinstance(other, EnergyReport):
            return NotImplemented
        return EnergyReport(*(getattr(self, c) + getattr(other, c) for c in CATEGORIES))

    def as_rows(self) -> list[tuple[str, float]]:
        return [(c, getattr(self, c)) for c in CATEGORIES] + [("total", self.total)]

    def to_csv(self) -> str:
        lines = ["category,joules"]
        lines += [f"{name},{value:.9e}" for name, value in self.as_rows()]
        return "\n".join(lines) + "\n"


def accumulate_report(events: Iterable[Event]) -> EnergyReport:
    """Sum costed events per category.

    Per-category sums use ``math.fsum`` so the result does not depend on the
    order of the stream.
    """
    buckets: dict[str, list[float]] = {c: [] for c in CATEGORIES}
    for ev in events:
        if ev.category not in buckets:
            raise ContractViolation(f"unknown energy category {ev.category!r}")
        buckets[ev.category].append(ev.joules)
    return EnergyReport(*(math.fsum(buckets[c]) for c in CATEGORIES))
