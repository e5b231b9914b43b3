"""Statically scheduled bus between the DRAM vaults and the core scratchpads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..isa import CommBlock


@dataclass(frozen=True)
class Delivery:
    block_id: int
    vault: int
    core: int
    start: int
    end: int
    nbytes: int


@dataclass(frozen=True)
class TransferResult:
    start: int
    end: int
    dram_bytes: int
    deliveries: tuple[Delivery, ...]


def region_index(block: CommBlock) -> np.ndarray:
    """Flat DRAM byte addresses of a strided 4-D region, in row-major order."""
    idx = np.full((1, 1, 1, 1), block.dram_address, dtype=np.int64)
    for axis, (n, s) in enumerate(zip(block.shape, block.strides)):
        shape = [1, 1, 1, 1]
        shape[axis] = n
        idx = idx + (np.arange(n, dtype=np.int64) * s).reshape(shape)
    return idx.ravel()


def bus_transfer(block: CommBlock, chip, earliest: int, bus_free: int) -> TransferResult:
    """One traversal of the bus. A multicast reads DRAM once and writes every
    destination scratchpad during the same slot."""
    start = max(earliest, bus_free)
    end = start + chip.transfer_cycles(block.length)
    deliveries = tuple(Delivery(block.block_id, v, c, start, end, block.length) for v, c in block.destinations())
    return TransferResult(start, end, block.length, deliveries)
