"""Lower a schedule to a program of communication and compute blocks."""

from __future__ import annotations

from ..isa import (
    MAC_KINDS,
    OP_FOR_KIND,
    Buffer,
    CommBlock,
    ComputeBlock,
    Direction,
    Op,
    Program,
    Role,
    Symbol,
)
from .model import layer_entry
from .optimize import Schedule
from .tiling import plan_phase, tile_origins

ALIGN = 64


def _align(x: int) -> int:
    return (x + ALIGN - 1) // ALIGN * ALIGN


def _contiguous_strides(dims):
    a, b, c, d = dims
    return (b * c * d, c * d, d, 1)


def codegen(schedule: Schedule, chip) -> Program:
    """Emit ``F(t) C(t) W(t-1)`` per tile with banks alternating on a global
    tile counter, and each layer's last writebacks before the next layer."""
    dfg = schedule.dfg
    symbols: list[Symbol] = []
    index: dict[str, int] = {}
    addr = 0

    def alloc(name, dims, role):
        nonlocal addr
        symbols.append(Symbol(name, addr, tuple(dims), role))
        addr = _align(addr + symbols[-1].nbytes)
        return len(symbols) - 1

    for name, shape in dfg.inputs.items():
        index[name] = alloc(name, shape, Role.INPUT)
    entries = []
    for plan in schedule.plans:
        layer = plan.layer
        w_sym = -1
        if layer.is_mac:
            k = layer.kernel if layer.kind == "conv" else 1
            w_sym = alloc(f"{layer.name}.weight", (layer.out_shape[3], k, k, layer.dot_length // (k * k)), Role.WEIGHT)
        index[layer.name] = alloc(layer.name, layer.out_shape, Role.ACTIVATION)
        entries.append(layer_entry(layer, index[layer.input], w_sym, index[layer.name]))

    blocks = []
    next_id = 0
    t_global = 0
    cpv = chip.cores_per_vault

    def new_id():
        nonlocal next_id
        next_id += 1
        return next_id - 1

    def writebacks(entry, parts, bank):
        out = symbols[entry.output]
        strides = _contiguous_strides(out.dims)
        _, ho, wo, co = out.dims
        for q in parts:
            v, c = divmod(q.gid, cpv)
            a = out.address + ((q.b0 * ho + q.y0) * wo) * co + q.c0
            blocks.append(CommBlock(new_id(), Direction.WRITEBACK, Buffer.OBUF, bank, False, 1 << v, 1 << c, a,
                                    q.fp.output_bytes, (q.bt, q.ht, wo, q.ct), strides))

    for li, (plan, entry) in enumerate(zip(schedule.plans, entries)):
        p = entry.params
        h, w, cin = p[1], p[2], p[3]
        in_sym = symbols[entry.input]
        in_strides = (h * w * cin, w * cin, cin, 1)
        opcode = OP_FOR_KIND[entry.kind]
        prev = None
        for origin in tile_origins(entry, plan.tile):
            bank = t_global % 2
            phase = plan_phase(entry, plan.cut, origin, chip)
            delivered: dict[int, list[int]] = {}
            for f in phase.fetches:
                bid = new_id()
                if f.buffer == "WBUF":
                    ws = symbols[entry.weight]
                    L = ws.nbytes // ws.dims[0]
                    a = ws.address + f.c0 * L
                    shape = (f.ct,) + ws.dims[1:]
                    strides = _contiguous_strides(ws.dims)
                    target = Buffer.WBUF
                else:
                    a = in_sym.address + ((f.b0 * h + f.row0) * w) * cin + f.c0
                    shape = (f.bt, f.rows, w, f.ct)
                    strides = in_strides
                    target = Buffer.IBUF
                blocks.append(CommBlock(bid, Direction.FETCH, target, bank, len(f.dests) > 1, f.vault_mask,
                                        f.core_mask, a, f.length, shape, strides))
                for g in f.dests:
                    delivered.setdefault(g, []).append(bid)
            for q in phase.parts:
                v, c = divmod(q.gid, cpv)
                deps = tuple(delivered[q.gid])
                fields = (li, q.b0, q.bt, q.c0, q.ct, q.y0, q.ht, q.fp.in_row0, q.fp.in_rows, q.fp.in_c0,
                          q.fp.in_ct, bank, bank, bank)
                blocks.append(ComputeBlock(new_id(), v, c, chip.partition_bits, chip.m_cycles, deps, deps,
                                           (Op(opcode, fields),)))
            if prev is not None:
                writebacks(entry, *prev)
            prev = (phase.parts, bank)
            t_global += 1
        if prev is not None:
            writebacks(entry, *prev)

    return Program(chip.chip_hash(), chip.wide_masks, tuple(symbols), tuple(entries), tuple(blocks))


def compile_model(dfg, chip, table=None):
    from .optimize import optimize

    schedule = optimize(dfg, chip, table)
    return schedule, codegen(schedule, chip)
