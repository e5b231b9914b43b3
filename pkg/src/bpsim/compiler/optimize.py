"""Per-layer selection of (tiling, cut) by minimum runtime x energy."""

from __future__ import annotations

from dataclasses import dataclass

from ..energy import EnergyTable
from .model import Layer, LayerDFG, layer_entry
from .tiling import CutSpec, Estimate, TileSpec, enumerate_candidates, estimate


@dataclass(frozen=True)
class LayerPlan:
    layer: Layer
    tile: TileSpec
    cut: CutSpec
    estimate: Estimate
    candidates: int


@dataclass(frozen=True)
class Schedule:
    dfg: LayerDFG
    plans: tuple[LayerPlan, ...]

    @property
    def cycles(self) -> int:
        return sum(p.estimate.cycles for p in self.plans)

    @property
    def energy(self) -> float:
        return sum(p.estimate.energy for p in self.plans)

    def summary(self) -> str:
        lines = ["layer,kind,tile_b,tile_c,tile_r,cut_b,cut_c,cut_r,candidates,est_cycles,est_energy_j"]
        for p in self.plans:
            lines.append(f"{p.layer.name},{p.layer.kind},{p.tile.batch},{p.tile.channels},{p.tile.rows},"
                         f"{p.cut.batch},{p.cut.channels},{p.cut.rows},{p.candidates},"
                         f"{p.estimate.cycles},{p.estimate.energy:.9e}")
        return "\n".join(lines) + "\n"


def selection_key(est: Estimate, index: int) -> tuple:
    """runtime x energy, then energy, then runtime, then enumeration order."""
    return (est.score, est.energy, est.cycles, index)


def choose(entry, chip, table: EnergyTable, candidates=None):
    """Evaluate every candidate of one layer; returns (tile, cut, estimate, count)."""
    if candidates is None:
        candidates = enumerate_candidates(entry, chip)
    best = None
    index = 0
    for tile, cuts in candidates:
        for cut in cuts:
            est = estimate(entry, tile, cut, chip, table)
            key = selection_key(est, index)
            if best is None or key < best[0]:
                best = (key, tile, cut, est)
            index += 1
    if best is None:
        return None
    return best[1], best[2], best[3], index


def optimize(dfg: LayerDFG, chip, table: EnergyTable | None = None) -> Schedule:
    table = table or EnergyTable()
    plans = []
    for layer in dfg.layers:
        entry = layer_entry(layer)
        tile, cut, est, count = choose(entry, chip, table)
        plans.append(LayerPlan(layer, tile, cut, est, count))
    return Schedule(dfg, tuple(plans))
