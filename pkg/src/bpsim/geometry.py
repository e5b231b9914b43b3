"""Tile geometry shared by the compiler, the validator and the simulator.

A tile covers ``bt`` batch items, ``ct`` output channels and ``ht`` output
rows at full output width. Reductions are never split across tiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .isa import (
    MAC_KINDS,
    P_BATCH,
    P_CIN,
    P_COUT,
    P_H,
    P_HO,
    P_K,
    P_PAD,
    P_STRIDE,
    P_W,
    P_WO,
    LayerEntry,
    LayerKind,
)


@dataclass(frozen=True)
class TileFootprint:
    in_row0: int
    in_rows: int
    in_c0: int
    in_ct: int
    input_bytes: int
    weight_bytes: int
    output_bytes: int


def dot_length(layer: LayerEntry) -> int:
    p = layer.params
    return p[P_K] * p[P_K] * p[P_CIN]


def out_dims(layer: LayerEntry) -> tuple[int, int, int, int]:
    p = layer.params
    return p[P_BATCH], p[P_HO], p[P_WO], p[P_COUT]


def in_dims(layer: LayerEntry) -> tuple[int, int, int, int]:
    p = layer.params
    return p[P_BATCH], p[P_H], p[P_W], p[P_CIN]


def input_rows(layer: LayerEntry, y0: int, ht: int) -> tuple[int, int]:
    """First input row and row count needed for output rows ``[y0, y0+ht)``,
    clipped to the tensor (padding rows are synthesized, not fetched)."""
    p = layer.params
    if ht <= 0:
        return 0, 0
    if layer.kind in MAC_KINDS or layer.kind == LayerKind.POOL:
        k, s = p[P_K], p[P_STRIDE]
        pad = p[P_PAD] if layer.kind in MAC_KINDS else 0
        lo = y0 * s - pad
        hi = (y0 + ht - 1) * s - pad + k
        lo, hi = max(lo, 0), min(hi, p[P_H])
        return lo, max(hi - lo, 0)
    return y0, ht


def footprint(layer: LayerEntry, bt: int, c0: int, ct: int, y0: int, ht: int) -> TileFootprint:
    p = layer.params
    r0, rows = input_rows(layer, y0, ht)
    if layer.kind in MAC_KINDS:
        in_c0, in_ct = 0, p[P_CIN]
        wbytes = ct * dot_length(layer)
    else:
        in_c0, in_ct = c0, ct
        wbytes = 0
    return TileFootprint(
        in_row0=r0, in_rows=rows, in_c0=in_c0, in_ct=in_ct,
        input_bytes=bt * rows * p[P_W] * in_ct,
        weight_bytes=wbytes,
        output_bytes=bt * ht * p[P_WO] * ct,
    )


def windows_per_output(layer: LayerEntry, window_elements: int) -> int:
    return math.ceil(dot_length(layer) / window_elements)


def row_split(rows: int, r: int) -> int:
    """Rows of a column that share one output's windows: the largest divisor
    of ``rows`` not exceeding ``r``."""
    return max(d for d in range(1, rows + 1) if rows % d == 0 and d <= max(r, 1))


def mswagg_windows(positions: int, channels: int, r: int, rows: int, cols: int) -> int:
    """Windows each MS-WAGG runs for a core tile (the busiest one).

    Columns take output channels; within a column ``k`` rows split one
    output's ``r`` windows, so ``rows / k`` positions proceed in parallel.
    """
    if positions <= 0 or channels <= 0:
        return 0
    k = row_split(rows, r)
    return math.ceil(channels / cols) * math.ceil(positions / (rows // k)) * math.ceil(r / k)
