"""Program-level simulator: serial bus, per-core compute, double-buffered
scratchpads, DRAM image, timing, activity and energy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..activity import ActivityCounts, energy_from_counts
from ..analog import NoiseSpec, sample_pvt, thermal_sigma
from ..config import AnalogConfig, ChipConfig, SimulationConfig
from ..energy import EnergyReport, EnergyTable
from ..errors import CapacityError, ScheduleError
from ..geometry import dot_length
from ..isa import (
    MAC_KINDS,
    P_BIAS,
    P_K,
    P_MODE,
    P_PAD,
    P_SCALE,
    P_SHIFT,
    P_STRIDE,
    P_W,
    P_WO,
    Buffer,
    CommBlock,
    ComputeBlock,
    Direction,
    LayerKind,
    Program,
)
from ..reference import initial_dram, norm_layer, pool_layer, read_symbol, requantize
from .bus import bus_transfer, region_index
from .mswagg import AnalogSetup, analog_windows, ideal_windows, window_schedule


@dataclass
class CycleStats:
    total_cycles: int = 0
    bus_busy: int = 0
    core_busy: dict = field(default_factory=dict)
    windows: int = 0
    adc_conversions: int = 0
    mswagg_windows: int = 0        # windows stepped on the busiest MS-WAGG of each block
    pipeline_stalls: int = 0
    fetch_bytes: int = 0
    writeback_bytes: int = 0
    delivered_bytes: int = 0
    obuf_writes: int = 0
    sign_saturations: int = 0
    adc_saturations: int = 0
    requant_saturations: int = 0
    register_overflows: int = 0
    blocks: int = 0

    @property
    def dram_bytes(self) -> int:
        return self.fetch_bytes + self.writeback_bytes

    def utilization(self, unit) -> float:
        busy = self.bus_busy if unit == "bus" else self.core_busy.get(unit, 0)
        return busy / self.total_cycles if self.total_cycles else 0.0

    def as_rows(self) -> list[tuple[str, object]]:
        rows = [(k, getattr(self, k)) for k in (
            "total_cycles", "bus_busy", "windows", "adc_conversions", "pipeline_stalls", "fetch_bytes",
            "writeback_bytes", "dram_bytes", "delivered_bytes", "obuf_writes", "sign_saturations",
            "adc_saturations", "requant_saturations", "register_overflows", "blocks")]
        rows.append(("bus_utilization", round(self.utilization("bus"), 6)))
        if self.core_busy:
            rows.append(("max_core_utilization", round(max(self.utilization(u) for u in self.core_busy), 6)))
        return rows

    def to_csv(self) -> str:
        return "stat,value\n" + "".join(f"{k},{v}\n" for k, v in self.as_rows())


@dataclass
class SimResult:
    outputs: dict
    accumulators: dict
    stats: CycleStats
    energy: EnergyReport
    counts: ActivityCounts
    trace: list = field(default_factory=list)
    memory: np.ndarray | None = None


def _analog_setup(chip: ChipConfig, analog: AnalogConfig, opts: SimulationConfig) -> AnalogSetup | None:
    if opts.mode == "ideal":
        return None
    bank, vdd = analog.bank, analog.vdd_nominal
    T = analog.t_nominal
    if opts.pvt:
        s = sample_pvt(analog.bank, analog.supply_thermal, analog.process, opts.seed)
        bank, vdd, T = s.bank, s.vdd, s.T
    unit = analog.vdd_nominal / (9 * analog.bank.alpha)
    if opts.noise == "off":
        sigma_units = 0.0
    else:
        sigma_v = opts.sigma_acc if opts.sigma_acc is not None else thermal_sigma(
            bank, T, chip.m_cycles, chip.n_lanes, chip.scheme.digit_max)
        sigma_units = sigma_v / unit
    return AnalogSetup(bank, vdd, analog.bank, analog.vdd_nominal, chip.adc, opts.charge_model,
                       opts.adc_quantization, opts.noise, sigma_units)


def noise_spec_for(layer_dot_length: int, chip: ChipConfig, sigma_acc: float, model: str = "linear") -> NoiseSpec:
    r = math.ceil(layer_dot_length / chip.window_elements)
    return NoiseSpec.for_scheme(sigma_acc, r, chip.scheme, model)


def simulate(program: Program, chip: ChipConfig | None = None, options: SimulationConfig | None = None,
             analog: AnalogConfig | None = None, table: EnergyTable | None = None,
             memory: np.ndarray | None = None, functional: bool = True) -> SimResult:
    """Execute ``program`` in program order.

    Communication blocks occupy the bus one after another; a fetch also waits
    until every destination bank has been released. A compute block starts
    once its fetches have landed, its core is idle and its OBUF bank has been
    drained. Writebacks wait for the compute that filled their bank.
    With ``functional=False`` only timing and activity are modeled.
    """
    chip = chip or ChipConfig()
    opts = options or SimulationConfig()
    analog = analog or AnalogConfig()
    table = table or EnergyTable()
    setup = _analog_setup(chip, analog, opts) if functional else None
    mem = None
    if functional:
        mem = (memory if memory is not None else initial_dram(program, opts.data_seed)).copy()

    stats = CycleStats()
    counts = ActivityCounts()
    trace: list[str] = []
    log = trace.append if opts.trace else None
    accs: dict[str, np.ndarray] = {}
    for layer in program.layers:
        if layer.kind in MAC_KINDS and functional:
            o = program.symbols[layer.output].dims
            accs[layer.name] = np.zeros(o, dtype=np.int64)

    bus_free = 0
    end_of: dict[int, int] = {}
    spad: dict[tuple, tuple[int, np.ndarray | None]] = {}   # (v, c, buf, bank) -> (fetch id, data)
    released_at: dict[tuple, int] = {}
    core_free: dict[tuple, int] = {}
    obuf: dict[tuple, tuple[int, int, np.ndarray | None]] = {}  # (v, c, bank) -> (compute id, end, data)
    drained_at: dict[tuple, int] = {}
    finish = 0

    for block in program.blocks:
        stats.blocks += 1
        if isinstance(block, CommBlock):
            if block.direction == Direction.FETCH:
                cap = chip.bank_bytes(block.target.name)
                if block.length > cap:
                    raise CapacityError(f"block {block.block_id}: {block.length} B exceeds the {cap} B "
                                        f"{block.target.name} bank")
                dests = block.destinations()
                earliest = max((released_at.get((v, c, block.target, block.bank), 0) for v, c in dests), default=0)
                tr = bus_transfer(block, chip, earliest, bus_free)
                data = mem[region_index(block)].copy() if functional else None
                for v, c in dests:
                    spad[(v, c, block.target, block.bank)] = (block.block_id, data)
                stats.fetch_bytes += block.length
                stats.delivered_bytes += block.length * len(dests)
                counts.fetch_bytes += block.length
                counts.delivered_bytes += block.length * len(dests)
            else:
                (v, c), = block.destinations()
                key = (v, c, block.bank)
                if key not in obuf:
                    raise ScheduleError(f"block {block.block_id}: OBUF bank {block.bank} of core ({v},{c}) "
                                        f"holds no output")
                _, ready, data = obuf.pop(key)
                tr = bus_transfer(block, chip, ready, bus_free)
                if functional:
                    mem[region_index(block)] = data
                drained_at[key] = tr.end
                stats.writeback_bytes += block.length
                counts.writeback_bytes += block.length
            if log:
                log(f"{tr.start},bus,{block.direction.name.lower()}_start:{block.block_id}")
                log(f"{tr.end},bus,{block.direction.name.lower()}_done:{block.block_id}")
            stats.bus_busy += tr.end - tr.start
            bus_free = tr.end
            end_of[block.block_id] = tr.end
            finish = max(finish, tr.end)
            continue

        v, c = block.vault, block.core
        ready = 0
        held = {}
        for d in block.depends_on:
            hit = [k for k, val in spad.items() if k[:2] == (v, c) and val[0] == d]
            if not hit:
                raise ScheduleError(f"block {block.block_id} consumes tile {d}, which was never fetched "
                                    f"to core ({v},{c})")
            held[(hit[0][2], hit[0][3])] = spad[hit[0]][1]
            ready = max(ready, end_of[d])
        start = max(ready, core_free.get((v, c), 0))
        duration = 0
        for op in block.ops:
            f = op.as_dict()
            layer = program.layers[f["layer"]]
            okey = (v, c, f["obuf_bank"])
            if okey in obuf:
                raise ScheduleError(f"block {block.block_id} overwrites OBUF bank {f['obuf_bank']} "
                                    f"before it was written back")
            start = max(start, drained_at.get(okey, 0))
            if (Buffer.IBUF, f["ibuf_bank"]) not in held:
                raise ScheduleError(f"block {block.block_id} reads IBUF bank {f['ibuf_bank']}, "
                                    f"which holds no tile for it")
            p = layer.params
            outs = f["bt"] * f["ht"] * p[P_WO] * f["ct"]
            if layer.kind in MAC_KINDS:
                if (Buffer.WBUF, f["wbuf_bank"]) not in held:
                    raise ScheduleError(f"block {block.block_id} reads WBUF bank {f['wbuf_bank']}, "
                                        f"which holds no tile for it")
                L = dot_length(layer)
                r = math.ceil(L / chip.window_elements)
                from ..geometry import mswagg_windows
                w_count = mswagg_windows(f["bt"] * f["ht"] * p[P_WO], f["ct"], r, chip.rows, chip.cols)
                timing = window_schedule(w_count, chip.m_cycles, chip.conversion_cycles, record=bool(log))
                op_cycles = timing.cycles
                stats.mswagg_windows += w_count
                stats.pipeline_stalls += timing.stalls
                if log:
                    for t in timing.completions:
                        log(f"{start + duration + t},core{v}.{c}.mswagg0,window_done")
                stats.windows += outs * r
                stats.adc_conversions += outs * r * chip.scheme.pair_count
                counts.windows += outs * r
                counts.mac_outputs += outs
                counts.operand_read_bytes += 2 * outs * L
                out = None
                if functional:
                    out = _mac(block, layer, f, held, chip, setup, opts, stats, accs)
            else:
                ops = outs * (p[P_K] ** 2 if layer.kind == LayerKind.POOL else 1)
                op_cycles = math.ceil(ops / (chip.cols * chip.digital_throughput)) + 1
                counts.digital_ops += ops
                counts.digital_read_bytes += ops
                out = _digital(layer, f, held, stats) if functional else None
            duration += op_cycles
            stats.obuf_writes += outs
            counts.obuf_write_bytes += outs
            obuf[okey] = (block.block_id, -1, out)
        end = start + duration
        for key, (cid, _, data) in list(obuf.items()):
            if cid == block.block_id:
                obuf[key] = (cid, end, data)
        for d in block.releases:
            for k in [k for k, val in spad.items() if k[:2] == (v, c) and val[0] == d]:
                del spad[k]
                released_at[k] = end
        core_free[(v, c)] = end
        gid = f"core{v}.{c}"
        stats.core_busy[gid] = stats.core_busy.get(gid, 0) + duration
        end_of[block.block_id] = end
        finish = max(finish, end)
        if log:
            log(f"{start},{gid},compute_start:{block.block_id}")
            log(f"{end},{gid},compute_done:{block.block_id}")

    stats.total_cycles = finish
    outputs = {}
    if functional:
        for layer in program.layers:
            outputs[layer.name] = read_symbol(mem, program.symbols[layer.output]).copy()
    if log:
        trace.sort(key=lambda s: int(s.split(",", 1)[0]))
    energy = energy_from_counts(counts, table, chip)
    return SimResult(outputs, accs, stats, energy, counts, trace, mem)


def _input_tile(layer, f, held):
    p = layer.params
    return held[(Buffer.IBUF, f["ibuf_bank"])].reshape(f["bt"], f["in_rows"], p[P_W], f["in_ct"])


def _mac(block: ComputeBlock, layer, f, held, chip, setup, opts, stats, accs):
    p = layer.params
    k, s, pad = p[P_K], p[P_STRIDE], p[P_PAD]
    x = _input_tile(layer, f, held).astype(np.int64)
    # rebuild the zero-padded input window this tile needs
    need0 = f["y0"] * s - pad
    need_rows = (f["ht"] - 1) * s + k
    win = np.zeros((f["bt"], need_rows, p[P_W] + 2 * pad, f["in_ct"]), dtype=np.int64)
    off = f["in_row0"] - need0
    win[:, off:off + f["in_rows"], pad:pad + p[P_W]] = x
    cols = np.lib.stride_tricks.sliding_window_view(win, (k, k), axis=(1, 2))[:, ::s, ::s]
    cols = cols[:, :f["ht"], :p[P_WO]]
    X = np.ascontiguousarray(cols.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, k * k * f["in_ct"])
    W = held[(Buffer.WBUF, f["wbuf_bank"])].reshape(f["ct"], -1).astype(np.int64)
    if setup is None:
        res = ideal_windows(X, W, chip.n_lanes, chip.m_cycles, chip.scheme, chip.acc_bits)
    else:
        rng = np.random.default_rng([opts.seed, block.block_id])
        res = analog_windows(X, W, chip.n_lanes, chip.m_cycles, chip.scheme, setup, rng, chip.acc_bits)
    stats.sign_saturations += res.sign_saturations
    stats.adc_saturations += res.adc_saturations
    stats.register_overflows += res.overflows
    acc = res.acc.reshape(f["bt"], f["ht"], p[P_WO], f["ct"])
    accs[layer.name][f["b0"]:f["b0"] + f["bt"], f["y0"]:f["y0"] + f["ht"], :, f["c0"]:f["c0"] + f["ct"]] = acc
    out, sat = requantize(acc, p[P_SHIFT])
    stats.requant_saturations += sat
    return out.ravel()


def _digital(layer, f, held, stats):
    p = layer.params
    x = _input_tile(layer, f, held)
    if layer.kind == LayerKind.POOL:
        out = pool_layer(x, p[P_K], p[P_STRIDE], p[P_MODE])[:, :f["ht"]]
    elif layer.kind == LayerKind.RELU:
        out = np.maximum(x, 0)
    else:
        out, sat = norm_layer(x, p[P_SCALE], p[P_BIAS], p[P_SHIFT])
        stats.requant_saturations += sat
    return np.ascontiguousarray(out).ravel()
