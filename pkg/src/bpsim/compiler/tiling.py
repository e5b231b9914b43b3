"""Tiling/cut candidate space, per-phase planning and the analytic estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

from ..activity import ActivityCounts, energy_from_counts
from ..errors import InfeasibleError
from ..geometry import TileFootprint, dot_length, footprint, input_rows, mswagg_windows
from ..isa import MAC_KINDS, P_BATCH, P_COUT, P_H, P_HO, P_K, P_STRIDE, P_WO, LayerEntry, LayerKind

MAX_TILES = 256


@dataclass(frozen=True, order=True)
class TileSpec:
    batch: int
    channels: int
    rows: int


@dataclass(frozen=True, order=True)
class CutSpec:
    batch: int = 1
    channels: int = 1
    rows: int = 1

    @property
    def cores(self) -> int:
        return self.batch * self.channels * self.rows


@dataclass(frozen=True)
class PartPlan:
    gid: int
    b0: int
    bt: int
    c0: int
    ct: int
    y0: int
    ht: int
    fp: TileFootprint
    cycles: int


@dataclass(frozen=True)
class FetchPlan:
    buffer: str              # "IBUF" or "WBUF"
    b0: int
    bt: int
    c0: int                  # input channel (IBUF) or output channel (WBUF) start
    ct: int
    row0: int
    rows: int
    length: int
    vault_mask: int
    core_mask: int
    dests: tuple[int, ...]


@dataclass(frozen=True)
class PhasePlan:
    parts: tuple[PartPlan, ...]
    fetches: tuple[FetchPlan, ...]


def pow2_sizes(extent: int) -> list[int]:
    out, s = [], 1
    while s < extent:
        out.append(s)
        s *= 2
    out.append(extent)
    return out


def pow2_upto(limit: int) -> list[int]:
    out, s = [], 1
    while s <= limit:
        out.append(s)
        s *= 2
    return out


def split(offset: int, extent: int, parts: int) -> list[tuple[int, int]]:
    """Balanced split; sizes differ by at most one, empty parts come last."""
    base, extra = divmod(extent, parts)
    out, o = [], offset
    for i in range(parts):
        n = base + (1 if i < extra else 0)
        out.append((o, n))
        o += n
    return out


def tile_extents(entry: LayerEntry) -> tuple[int, int, int]:
    p = entry.params
    return p[P_BATCH], p[P_COUT], p[P_HO]


def tile_count(entry: LayerEntry, tile: TileSpec) -> int:
    b, c, h = tile_extents(entry)
    return math.ceil(b / tile.batch) * math.ceil(c / tile.channels) * math.ceil(h / tile.rows)


def tile_origins(entry: LayerEntry, tile: TileSpec):
    """Tiles in program order: batch outermost, then channels, then rows."""
    B, C, H = tile_extents(entry)
    for b0 in range(0, B, tile.batch):
        for c0 in range(0, C, tile.channels):
            for y0 in range(0, H, tile.rows):
                yield (b0, min(tile.batch, B - b0), c0, min(tile.channels, C - c0), y0, min(tile.rows, H - y0))


@lru_cache(maxsize=4096)
def max_input_rows(entry: LayerEntry, tile_rows: int, cut_rows: int) -> int:
    """Most input rows any core fetches when output rows are tiled by
    ``tile_rows`` and each tile is split ``cut_rows`` ways."""
    H = tile_extents(entry)[2]
    best = 0
    for y0 in range(0, H, tile_rows):
        for o, n in split(y0, min(tile_rows, H - y0), cut_rows):
            best = max(best, input_rows(entry, o, n)[1])
    return best


def worst_footprint(entry: LayerEntry, bt: int, ct: int, ht: int, rows: int | None = None) -> TileFootprint:
    """Per-core footprint of a (bt, ct, ht) share fetching ``rows`` input
    rows (default: the unclipped window of ``ht`` output rows)."""
    p = entry.params
    if rows is None:
        if entry.kind in MAC_KINDS or entry.kind == LayerKind.POOL:
            rows = min(p[P_H], (ht - 1) * p[P_STRIDE] + p[P_K])
        else:
            rows = ht
    fp = footprint(entry, bt, 0, ct, 0, ht)
    return TileFootprint(fp.in_row0, rows, fp.in_c0, fp.in_ct, bt * rows * p[2] * fp.in_ct,
                         fp.weight_bytes, fp.output_bytes)


def binding_buffer(entry: LayerEntry, fp: TileFootprint, chip) -> tuple[str, int] | None:
    for name, need in (("IBUF", fp.input_bytes), ("WBUF", fp.weight_bytes), ("OBUF", fp.output_bytes)):
        if need > chip.bank_bytes(name):
            return name, need
    return None


def part_fits(entry: LayerEntry, tile: TileSpec, cut: CutSpec, chip) -> bool:
    fp = worst_footprint(entry, math.ceil(tile.batch / cut.batch), math.ceil(tile.channels / cut.channels),
                         math.ceil(tile.rows / cut.rows), max_input_rows(entry, tile.rows, cut.rows))
    return binding_buffer(entry, fp, chip) is None


def cut_options(tile: TileSpec, chip) -> list[CutSpec]:
    out = []
    for pb, pc, pr in product(pow2_upto(tile.batch), pow2_upto(tile.channels), pow2_upto(tile.rows)):
        if pb * pc * pr <= chip.cores:
            out.append(CutSpec(pb, pc, pr))
    return out


def enumerate_candidates(entry: LayerEntry, chip, max_tiles: int = MAX_TILES) -> list[tuple[TileSpec, list[CutSpec]]]:
    """Feasible (tile, cuts) pairs in lexicographic order.

    Tile sizes are powers of two plus the full extent on each of batch,
    output channels and output rows; cut factors are powers of two whose
    product does not exceed the core count. A cut is feasible when every
    core's share fits half of each scratchpad. Tilings with more than
    ``max_tiles`` tiles are dropped unless nothing else is feasible.
    """
    B, C, H = tile_extents(entry)
    if min(B, C, H) <= 0:
        return []
    minimal = worst_footprint(entry, 1, 1, 1, max_input_rows(entry, 1, 1))
    bind = binding_buffer(entry, minimal, chip)
    if bind is not None:
        raise InfeasibleError(entry.name, bind[0], bind[1], chip.bank_bytes(bind[0]))
    found = []
    for bt, ct, ht in product(pow2_sizes(B), pow2_sizes(C), pow2_sizes(H)):
        tile = TileSpec(bt, ct, ht)
        cuts = [c for c in cut_options(tile, chip) if part_fits(entry, tile, c, chip)]
        if cuts:
            found.append((tile, cuts))
    small = [fc for fc in found if tile_count(entry, fc[0]) <= max_tiles]
    if small:
        return small
    least = min(tile_count(entry, t) for t, _ in found)
    return [fc for fc in found if tile_count(entry, fc[0]) == least]


def mask_groups(gids, cores_per_vault: int) -> list[tuple[int, int]]:
    """Cover a set of cores with (vault_mask, core_mask) products.

    Vaults sharing the same core subset form one group, so a product set
    needs a single multicast.
    """
    per_vault: dict[int, int] = {}
    for g in gids:
        v, c = divmod(g, cores_per_vault)
        per_vault[v] = per_vault.get(v, 0) | (1 << c)
    by_cores: dict[int, int] = {}
    for v, cm in sorted(per_vault.items()):
        by_cores[cm] = by_cores.get(cm, 0) | (1 << v)
    return sorted(((vm, cm) for cm, vm in by_cores.items()), key=lambda x: (x[0] & -x[0], x[1]))


def _gids_in_masks(vm: int, cm: int, cpv: int) -> tuple[int, ...]:
    out = []
    v = 0
    while vm >> v:
        if vm >> v & 1:
            c = 0
            while cm >> c:
                if cm >> c & 1:
                    out.append(v * cpv + c)
                c += 1
        v += 1
    return tuple(sorted(out))


def compute_cycles(entry: LayerEntry, bt: int, ct: int, ht: int, chip) -> int:
    """Closed-form cycles for one core's share of a tile."""
    p = entry.params
    if bt * ct * ht == 0:
        return 0
    if entry.kind in MAC_KINDS:
        r = math.ceil(dot_length(entry) / chip.window_elements)
        w = mswagg_windows(bt * ht * p[P_WO], ct, r, chip.rows, chip.cols)
        return w * chip.window_period + chip.m_cycles + 1 if w else 0
    ops = bt * ht * p[P_WO] * ct * digital_ops_per_output(entry)
    return math.ceil(ops / (chip.cols * chip.digital_throughput)) + 1


def digital_ops_per_output(entry: LayerEntry) -> int:
    return entry.params[P_K] ** 2 if entry.kind == LayerKind.POOL else 1


def plan_phase(entry: LayerEntry, cut: CutSpec, origin, chip) -> PhasePlan:
    """Core shares and fetches of one tile.

    Parts are numbered ``gid = c * (pb * pr) + b * pr + r`` so that a weight
    tile (shared by a channel slice) and an input tile (shared by a batch/row
    slice) usually land on a product of vault and core masks.
    """
    b0, bt, c0, ct, y0, ht = origin
    pb, pc, pr = cut.batch, cut.channels, cut.rows
    bs, cs, rs = split(b0, bt, pb), split(c0, ct, pc), split(y0, ht, pr)
    parts = []
    for ci, (cc0, cct) in enumerate(cs):
        for bi, (bb0, bbt) in enumerate(bs):
            for ri, (yy0, hht) in enumerate(rs):
                if bbt * cct * hht == 0:
                    continue
                gid = ci * pb * pr + bi * pr + ri
                fp = footprint(entry, bbt, cc0, cct, yy0, hht)
                parts.append(PartPlan(gid, bb0, bbt, cc0, cct, yy0, hht, fp,
                                      compute_cycles(entry, bbt, cct, hht, chip)))
    parts.sort(key=lambda q: q.gid)
    cpv = chip.cores_per_vault
    fetches = []
    if entry.kind in MAC_KINDS:
        by_c: dict[tuple, list[PartPlan]] = {}
        by_br: dict[tuple, list[PartPlan]] = {}
        for q in parts:
            by_c.setdefault((q.c0, q.ct), []).append(q)
            by_br.setdefault((q.b0, q.bt, q.y0, q.ht), []).append(q)
        for (cc0, cct), qs in sorted(by_c.items()):
            for vm, cm in mask_groups([q.gid for q in qs], cpv):
                fetches.append(FetchPlan("WBUF", 0, 0, cc0, cct, 0, 0, qs[0].fp.weight_bytes, vm, cm,
                                         _gids_in_masks(vm, cm, cpv)))
        for key, qs in sorted(by_br.items()):
            fp = qs[0].fp
            for vm, cm in mask_groups([q.gid for q in qs], cpv):
                fetches.append(FetchPlan("IBUF", qs[0].b0, qs[0].bt, fp.in_c0, fp.in_ct, fp.in_row0, fp.in_rows,
                                         fp.input_bytes, vm, cm, _gids_in_masks(vm, cm, cpv)))
    else:
        for q in parts:
            v, c = divmod(q.gid, cpv)
            fetches.append(FetchPlan("IBUF", q.b0, q.bt, q.fp.in_c0, q.fp.in_ct, q.fp.in_row0, q.fp.in_rows,
                                     q.fp.input_bytes, 1 << v, 1 << c, (q.gid,)))
    return PhasePlan(tuple(parts), tuple(fetches))


def phase_counts(entry: LayerEntry, plan: PhasePlan, chip) -> ActivityCounts:
    c = ActivityCounts()
    for f in plan.fetches:
        c.fetch_bytes += f.length
        c.delivered_bytes += f.length * len(f.dests)
    for q in plan.parts:
        outs = q.fp.output_bytes
        c.obuf_write_bytes += outs
        c.writeback_bytes += outs
        if entry.kind in MAC_KINDS:
            L = dot_length(entry)
            c.mac_outputs += outs
            c.windows += outs * math.ceil(L / chip.window_elements)
            c.operand_read_bytes += 2 * outs * L
        else:
            ops = outs * digital_ops_per_output(entry)
            c.digital_ops += ops
            c.digital_read_bytes += ops
    return c


@dataclass(frozen=True)
class Estimate:
    cycles: int
    energy: float
    counts: ActivityCounts

    @property
    def score(self) -> float:
        return self.cycles * self.energy


def _phase_summary(entry, cut, origin, chip):
    plan = plan_phase(entry, cut, origin, chip)
    f = sum(chip.transfer_cycles(x.length) for x in plan.fetches)
    w = sum(chip.transfer_cycles(q.fp.output_bytes) for q in plan.parts)
    c = max((q.cycles for q in plan.parts), default=0)
    return f, c, w, phase_counts(entry, plan, chip)


def estimate(entry: LayerEntry, tile: TileSpec, cut: CutSpec, chip, table) -> Estimate:
    """Analytic cycles and energy of one layer under (tile, cut).

    Phases follow the emitted program order ``F0 C0 F1 C1 W0 F2 C2 W1 ...``
    with a serial bus and double-buffered banks: fetch ``t`` waits for the
    compute that last used its bank, compute ``t`` waits for its fetch, the
    previous compute and the drain of its OBUF bank.
    """
    B, C, H = tile_extents(entry)
    if min(B, C, H) <= 0:
        return Estimate(0, 0.0, ActivityCounts())
    summary = lru_cache(maxsize=None)(lambda o: _phase_summary(entry, cut, o, chip))
    counts = ActivityCounts()
    bus = 0
    comp_end = [0, 0]      # by bank: end of the last compute using it
    drain_end = [0, 0]     # by bank: end of the last writeback of it
    prev_end = 0
    pending_w = None       # (bank, w cycles, compute end)
    for t, origin in enumerate(tile_origins(entry, tile)):
        bank = t % 2
        f, c, w, cnt = summary(_norm_origin(entry, origin))
        counts += cnt
        start = max(bus, comp_end[bank])
        fetch_end = start + f
        bus = fetch_end
        begin = max(fetch_end, prev_end, drain_end[bank])
        end = begin + c
        comp_end[bank] = end
        prev_end = end
        if pending_w is not None:
            pb_, pw, pend = pending_w
            bus = max(bus, pend) + pw
            drain_end[pb_] = bus
        pending_w = (bank, w, end)
    if pending_w is not None:
        pb_, pw, pend = pending_w
        bus = max(bus, pend) + pw
    cycles = max(bus, prev_end)
    return Estimate(cycles, energy_from_counts(counts, table, chip).total, counts)


def _norm_origin(entry: LayerEntry, origin):
    """Origin with offsets that do not change the plan zeroed, for caching."""
    b0, bt, c0, ct, y0, ht = origin
    if entry.kind in MAC_KINDS or entry.kind == LayerKind.POOL:
        return (0, bt, 0, ct, y0, ht)
    return (0, bt, 0, ct, 0, ht)
