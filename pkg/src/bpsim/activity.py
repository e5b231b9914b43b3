"""Architectural event counts and their conversion to energy.

The estimator derives these counts in closed form and the simulator counts
them while executing; both price them with :func:`energy_from_counts`, so
equal counts give equal energy.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .energy import FJ, PJ, EnergyTable, Event, accumulate_report, window_energy


@dataclass
class ActivityCounts:
    windows: int = 0            # MS-WAGG conversion windows (one per output per r)
    mac_outputs: int = 0
    operand_read_bytes: int = 0
    digital_ops: int = 0
    digital_read_bytes: int = 0
    fetch_bytes: int = 0        # DRAM reads, once per payload
    delivered_bytes: int = 0    # scratchpad writes, once per destination
    obuf_write_bytes: int = 0
    writeback_bytes: int = 0

    def __add__(self, other: "ActivityCounts") -> "ActivityCounts":
        return ActivityCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __iadd__(self, other: "ActivityCounts") -> "ActivityCounts":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    @property
    def dram_bytes(self) -> int:
        return self.fetch_bytes + self.writeback_bytes


def energy_events(c: ActivityCounts, table: EnergyTable, chip) -> list[Event]:
    pairs = chip.scheme.pair_count
    win_fj = window_energy(table, chip.n_lanes, chip.m_cycles, chip.partition_bits)
    return [
        Event("compute", c.windows * pairs, win_fj * FJ),
        Event("compute", c.windows, table.reg_add_fj * FJ),
        Event("compute", c.digital_ops, table.digital_op_fj * FJ),
        Event("memory", c.operand_read_bytes + c.digital_read_bytes + c.writeback_bytes,
              table.sram_read_fj_per_byte * FJ),
        Event("memory", c.delivered_bytes + c.obuf_write_bytes, table.sram_write_fj_per_byte * FJ),
        Event("interconnect", c.fetch_bytes + c.writeback_bytes, table.bus_fj_per_byte * FJ),
        Event("dram", c.fetch_bytes + c.writeback_bytes, table.dram_pj_per_byte * PJ),
    ]


def energy_from_counts(c: ActivityCounts, table: EnergyTable, chip):
    return accumulate_report(energy_events(c, table, chip))
