"""Block-structured instruction set: data types, binary codec, validation
and a text disassembly.

Binary layout (all integers little-endian)::

    header   24 B  magic "BPSM" | version u8 | flags u8 | reserved u16 |
                   chip_hash u32 | n_symbols u32 | n_layers u32 | n_blocks u32
    symbols        name str | address u64 | dims 4*u32 | role u8
    layers         name str | kind u8 | input i32 | weight i32 | output i32 | params 12*i32
    blocks         tag u8 | body_len u32 | body
    trailer  4 B   crc32 of every preceding byte

``str`` is a u16 byte length followed by UTF-8. Flag bit 0 selects wide
destination masks (u64 vault / u16 core instead of u16 / u8).

Comm body: id u32 | direction u8 | target u8 | bank u8 | broadcast u8 |
vault_mask | core_mask | dram_address u64 | length u32 | shape 4*u32 |
strides 4*u32.

Compute body: id u32 | vault u8 | core u8 | partition_bits u8 | m u16 |
n_deps u16 | deps u32* | n_releases u16 | releases u32* | n_ops u16 |
ops (opcode u8 | n_fields u8 | fields i32*)*.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum

from .errors import DecodeError

MAGIC = b"BPSM"
VERSION = 1
FLAG_WIDE_MASKS = 0x01
HEADER = struct.Struct("<4sBBHIIII")
TAG_COMM = 1
TAG_COMPUTE = 2
N_LAYER_PARAMS = 12


class Direction(IntEnum):
    FETCH = 0
    WRITEBACK = 1


class Buffer(IntEnum):
    IBUF = 0
    WBUF = 1
    OBUF = 2


class Role(IntEnum):
    INPUT = 0
    WEIGHT = 1
    ACTIVATION = 2


class LayerKind(IntEnum):
    CONV = 0
    FC = 1
    POOL = 2
    RELU = 3
    NORM = 4


class Opcode(IntEnum):
    MAC = 1
    POOL = 2
    RELU = 3
    NORM = 4


MAC_KINDS = (LayerKind.CONV, LayerKind.FC)
OP_FOR_KIND = {
    LayerKind.CONV: Opcode.MAC,
    LayerKind.FC: Opcode.MAC,
    LayerKind.POOL: Opcode.POOL,
    LayerKind.RELU: Opcode.RELU,
    LayerKind.NORM: Opcode.NORM,
}

# Every op carries the same tile descriptor.
OP_FIELDS = ("layer", "b0", "bt", "c0", "ct", "y0", "ht", "in_row0", "in_rows",
             "in_c0", "in_ct", "ibuf_bank", "wbuf_bank", "obuf_bank")

# Layer parameter slots (unused slots are zero).
P_BATCH, P_H, P_W, P_CIN, P_COUT, P_K, P_STRIDE, P_PAD, P_HO, P_WO, P_SHIFT, P_MODE = range(12)
# normalization reuses the kernel/stride slots for its affine constants
P_SCALE, P_BIAS = P_K, P_STRIDE


@dataclass(frozen=True)
class Symbol:
    name: str
    address: int
    dims: tuple[int, int, int, int]
    role: Role

    @property
    def nbytes(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n


@dataclass(frozen=True)
class LayerEntry:
    name: str
    kind: LayerKind
    input: int
    weight: int
    output: int
    params: tuple[int, ...]

    def param(self, slot: int) -> int:
        return self.params[slot]


@dataclass(frozen=True)
class CommBlock:
    block_id: int
    direction: Direction
    target: Buffer
    bank: int
    broadcast: bool
    vault_mask: int
    core_mask: int
    dram_address: int
    length: int
    shape: tuple[int, int, int, int]
    strides: tuple[int, int, int, int]

    def destinations(self) -> list[tuple[int, int]]:
        return [(v, c) for v in _bits(self.vault_mask) for c in _bits(self.core_mask)]


@dataclass(frozen=True)
class Op:
    opcode: Opcode
    fields: tuple[int, ...]

    def get(self, name: str) -> int:
        return self.fields[OP_FIELDS.index(name)]

    def as_dict(self) -> dict[str, int]:
        return dict(zip(OP_FIELDS, self.fields))


@dataclass(frozen=True)
class ComputeBlock:
    block_id: int
    vault: int
    core: int
    partition_bits: int
    m: int
    depends_on: tuple[int, ...]
    releases: tuple[int, ...]
    ops: tuple[Op, ...]


@dataclass(frozen=True)
class Program:
    chip_hash: int = 0
    wide_masks: bool = False
    symbols: tuple[Symbol, ...] = ()
    layers: tuple[LayerEntry, ...] = ()
    blocks: tuple = field(default=())


def _bits(mask: int) -> list[int]:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


# ---------------------------------------------------------------- encoding

def _str(s: str) -> bytes:
    raw = s.encode()
    if len(raw) > 0xFFFF:
        raise ValueError(f"name too long: {s[:20]}...")
    return struct.pack("<H", len(raw)) + raw


def _mask_formats(wide: bool) -> tuple[str, str]:
    return ("Q", "H") if wide else ("H", "B")


def _encode_comm(b: CommBlock, wide: bool) -> bytes:
    vf, cf = _mask_formats(wide)
    return struct.pack(
        f"<IBBBB{vf}{cf}QI4I4I", b.block_id, int(b.direction), int(b.target), b.bank, int(b.broadcast),
        b.vault_mask, b.core_mask, b.dram_address, b.length, *b.shape, *b.strides,
    )


def _encode_compute(b: ComputeBlock) -> bytes:
    parts = [struct.pack("<IBBBH", b.block_id, b.vault, b.core, b.partition_bits, b.m)]
    parts.append(struct.pack(f"<H{len(b.depends_on)}I", len(b.depends_on), *b.depends_on))
    parts.append(struct.pack(f"<H{len(b.releases)}I", len(b.releases), *b.releases))
    parts.append(struct.pack("<H", len(b.ops)))
    for op in b.ops:
        parts.append(struct.pack(f"<BB{len(op.fields)}i", int(op.opcode), len(op.fields), *op.fields))
    return b"".join(parts)


def encode(program: Program) -> bytes:
    try:
        flags = FLAG_WIDE_MASKS if program.wide_masks else 0
        out = [HEADER.pack(MAGIC, VERSION, flags, 0, program.chip_hash, len(program.symbols),
                           len(program.layers), len(program.blocks))]
        for s in program.symbols:
            out.append(_str(s.name) + struct.pack("<Q4IB", s.address, *s.dims, int(s.role)))
        for l in program.layers:
            if len(l.params) != N_LAYER_PARAMS:
                raise ValueError(f"layer {l.name} needs {N_LAYER_PARAMS} params")
            out.append(_str(l.name) + struct.pack(f"<Biii{N_LAYER_PARAMS}i", int(l.kind), l.input, l.weight,
                                                  l.output, *l.params))
        for b in program.blocks:
            if isinstance(b, CommBlock):
                tag, body = TAG_COMM, _encode_comm(b, program.wide_masks)
            else:
                tag, body = TAG_COMPUTE, _encode_compute(b)
            out.append(struct.pack("<BI", tag, len(body)) + body)
    except struct.error as e:
        raise ValueError(f"program field out of range: {e}") from None
    data = b"".join(out)
    return data + struct.pack("<I", zlib.crc32(data))


# ---------------------------------------------------------------- decoding

class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, fmt: str, what: str):
        s = struct.Struct("<" + fmt)
        if self.pos + s.size > self.end:
            raise DecodeError(f"truncated {what}", self.pos)
        vals = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return vals

    def string(self, what: str) -> str:
        (n,) = self.take("H", f"{what} name length")
        start = self.pos
        if start + n > self.end:
            raise DecodeError(f"truncated {what} name", start)
        self.pos += n
        try:
            return self.data[start:start + n].decode()
        except UnicodeDecodeError:
            raise DecodeError(f"{what} name is not valid UTF-8", start) from None


def _enum(cls, value, what, offset):
    try:
        return cls(value)
    except ValueError:
        raise DecodeError(f"invalid {what} {value}", offset) from None


def _decode_comm(r: _Reader, wide: bool) -> CommBlock:
    vf, cf = _mask_formats(wide)
    start = r.pos
    bid, direction, target, bank, bcast, vm, cm, addr, length, *rest = r.take(f"IBBBB{vf}{cf}QI4I4I", "comm block")
    if bcast not in (0, 1):
        raise DecodeError(f"broadcast flag must be 0 or 1, got {bcast}", start + 7)
    return CommBlock(bid, _enum(Direction, direction, "direction", start + 4), _enum(Buffer, target, "target", start + 5),
                     bank, bool(bcast), vm, cm, addr, length, tuple(rest[:4]), tuple(rest[4:]))


def _decode_compute(r: _Reader) -> ComputeBlock:
    bid, vault, core, pb, m = r.take("IBBBH", "compute block")
    (nd,) = r.take("H", "dependency count")
    deps = r.take(f"{nd}I", "dependency list")
    (nr,) = r.take("H", "release count")
    rel = r.take(f"{nr}I", "release list")
    (no,) = r.take("H", "op count")
    ops = []
    for _ in range(no):
        at = r.pos
        code, nf = r.take("BB", "op header")
        opcode = _enum(Opcode, code, "opcode", at)
        ops.append(Op(opcode, tuple(r.take(f"{nf}i", "op fields"))))
    return ComputeBlock(bid, vault, core, pb, m, tuple(deps), tuple(rel), tuple(ops))


def decode(data: bytes) -> Program:
    """Parse a binary program.

    Structure is parsed first so malformed input reports the offending
    offset; the checksum and dangling dependencies are checked afterwards.
    """
    data = bytes(data)
    if len(data) < HEADER.size + 4:
        raise DecodeError("truncated header", 0)
    end = len(data) - 4
    r = _Reader(data, end)
    magic, version, flags, _reserved, chip_hash, ns, nl, nb = r.take(HEADER.format[1:], "header")
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}", 4)
    if flags & ~FLAG_WIDE_MASKS:
        raise DecodeError(f"unknown flag bits {flags:#x}", 5)
    wide = bool(flags & FLAG_WIDE_MASKS)
    symbols = []
    for _ in range(ns):
        name = r.string("symbol")
        at = r.pos
        addr, *dims, role = r.take("Q4IB", "symbol")
        symbols.append(Symbol(name, addr, tuple(dims), _enum(Role, role, "symbol role", at + 24)))
    layers = []
    for _ in range(nl):
        name = r.string("layer")
        at = r.pos
        kind, inp, wt, outp, *params = r.take(f"Biii{N_LAYER_PARAMS}i", "layer")
        layers.append(LayerEntry(name, _enum(LayerKind, kind, "layer kind", at), inp, wt, outp, tuple(params)))
    blocks = []
    for _ in range(nb):
        at = r.pos
        tag, blen = r.take("BI", "block header")
        body_start = r.pos
        if body_start + blen > end:
            raise DecodeError(f"block length {blen} runs past the end of the program", at + 1)
        sub = _Reader(data, body_start + blen)
        sub.pos = body_start
        if tag == TAG_COMM:
            block = _decode_comm(sub, wide)
        elif tag == TAG_COMPUTE:
            block = _decode_compute(sub)
        else:
            raise DecodeError(f"unknown block tag {tag}", at)
        if sub.pos != body_start + blen:
            raise DecodeError(f"block length {blen} does not match its {sub.pos - body_start}-byte body", at + 1)
        r.pos = body_start + blen
        blocks.append(block)
    if r.pos != end:
        raise DecodeError(f"{end - r.pos} trailing bytes before checksum", r.pos)
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise DecodeError("checksum mismatch", end)
    ids = set()
    for b in blocks:
        if isinstance(b, ComputeBlock):
            for d in (*b.depends_on, *b.releases):
                if d not in ids:
                    raise DecodeError(f"block {b.block_id} references unknown or later block {d}")
        ids.add(b.block_id)
    return Program(chip_hash, wide, tuple(symbols), tuple(layers), tuple(blocks))


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Diagnostic:
    code: str
    block_id: int | None
    message: str

    def __str__(self):
        where = f"block {self.block_id}: " if self.block_id is not None else ""
        return f"[{self.code}] {where}{self.message}"


def _region_end(b: CommBlock) -> int:
    return b.dram_address + sum((s - 1) * st for s, st in zip(b.shape, b.strides) if s > 0) + 1


def validate(program: Program, chip) -> list[Diagnostic]:
    """Check a program against a chip; returns every problem found."""
    from .geometry import footprint  # geometry depends on this module

    diags: list[Diagnostic] = []

    def add(code, bid, msg):
        diags.append(Diagnostic(code, bid, msg))

    if program.chip_hash != chip.chip_hash():
        add("chip-hash", None, f"program built for chip {program.chip_hash:#010x}, "
                               f"running on {chip.chip_hash():#010x}")
    if chip.wide_masks and not program.wide_masks:
        add("mask-width", None, "chip needs wide destination masks but the program uses narrow ones")
    vmax, cmax = (64, 16) if program.wide_masks else (16, 4)

    all_ids: dict[int, int] = {}
    for i, b in enumerate(program.blocks):
        if b.block_id in all_ids:
            add("duplicate-id", b.block_id, f"block id also used at position {all_ids[b.block_id]}")
        else:
            all_ids[b.block_id] = i

    sym_ranges = [(s.address, s.address + s.nbytes) for s in program.symbols]
    seen: dict[int, object] = {}
    holder: dict[tuple, int] = {}          # (vault, core, buffer, bank) -> fetch id
    released: set[tuple[int, int, int]] = set()  # (fetch id, vault, core)
    pending_out: dict[tuple, tuple[int, int]] = {}  # (vault, core, bank) -> (compute id, bytes)

    for pos, b in enumerate(program.blocks):
        bid = b.block_id
        if isinstance(b, CommBlock):
            if b.length <= 0:
                add("length", bid, "length must be positive")
            n = 1
            for s in b.shape:
                n *= s
            if n != b.length:
                add("shape", bid, f"shape {b.shape} holds {n} bytes, length is {b.length}")
            if b.bank not in (0, 1):
                add("bank", bid, f"bank must be 0 or 1, got {b.bank}")
            if b.vault_mask >> min(chip.vaults, vmax) or b.core_mask >> min(chip.cores_per_vault, cmax):
                add("mask", bid, f"destination masks {b.vault_mask:#x}/{b.core_mask:#x} exceed the chip")
            if b.length > 0 and not any(lo <= b.dram_address and _region_end(b) <= hi for lo, hi in sym_ranges):
                add("dram-bounds", bid, f"region at {b.dram_address} does not lie inside one symbol")
            dests = b.destinations()
            if b.direction == Direction.FETCH:
                if not dests:
                    add("no-destination", bid, "fetch has no destination core")
                if b.target == Buffer.OBUF:
                    add("target", bid, "fetches may only target IBUF or WBUF")
                elif b.length > chip.bank_bytes(b.target.name):
                    add("capacity", bid, f"{b.length} B exceeds the {chip.bank_bytes(b.target.name)} B "
                                         f"{b.target.name} bank")
                if b.broadcast != (len(dests) > 1):
                    add("broadcast-flag", bid, f"broadcast flag disagrees with {len(dests)} destination(s)")
                for v, c in dests:
                    key = (v, c, b.target, b.bank)
                    if key in holder:
                        add("bank-overwrite", bid, f"{b.target.name} bank {b.bank} of core ({v},{c}) still holds "
                                                   f"unreleased block {holder[key]}")
                    holder[key] = bid
            else:
                if len(dests) != 1:
                    add("writeback-source", bid, f"writeback needs exactly one source core, has {len(dests)}")
                if b.target != Buffer.OBUF:
                    add("target", bid, "writebacks drain the OBUF")
                for v, c in dests[:1]:
                    key = (v, c, b.bank)
                    if key not in pending_out:
                        add("writeback-source", bid, f"OBUF bank {b.bank} of core ({v},{c}) holds no finished output")
                    else:
                        _, nbytes = pending_out.pop(key)
                        if nbytes != b.length:
                            add("writeback-length", bid, f"drains {b.length} B but the output tile is {nbytes} B")
        else:
            if not (0 <= b.vault < chip.vaults and 0 <= b.core < chip.cores_per_vault):
                add("core", bid, f"core ({b.vault},{b.core}) does not exist")
            if b.partition_bits not in (1, 2, 4, 8) or chip.operand_bits % b.partition_bits:
                add("partition", bid, f"partition width {b.partition_bits} is illegal for "
                                      f"{chip.operand_bits}-bit operands")
            elif b.partition_bits != chip.partition_bits:
                add("partition", bid, f"partition width {b.partition_bits} differs from the chip's "
                                      f"{chip.partition_bits}")
            if b.m != chip.m_cycles:
                add("m", bid, f"accumulation cycles {b.m} differ from the chip's {chip.m_cycles}")
            fetched: dict[tuple, CommBlock] = {}
            for d in b.depends_on:
                if d not in all_ids:
                    add("unresolved-dependency", bid, f"unresolved dependency {d}")
                    continue
                if d not in seen:
                    add("dependency-order", bid, f"dependency {d} comes later in the program")
                    continue
                dep = seen[d]
                if not isinstance(dep, CommBlock) or dep.direction != Direction.FETCH:
                    add("dependency-kind", bid, f"dependency {d} is not a fetch")
                    continue
                if (b.vault, b.core) not in dep.destinations():
                    add("dependency-target", bid, f"fetch {d} is not delivered to core ({b.vault},{b.core})")
                    continue
                if (d, b.vault, b.core) in released:
                    add("use-after-release", bid, f"dependency {d} was already released")
                fetched[(dep.target, dep.bank)] = dep
            for rel in b.releases:
                if rel not in b.depends_on:
                    add("release", bid, f"releases {rel}, which it does not depend on")
            for op in b.ops:
                if len(op.fields) != len(OP_FIELDS):
                    add("op-fields", bid, f"{op.opcode.name} op has {len(op.fields)} fields, "
                                          f"expected {len(OP_FIELDS)}")
                    continue
                f = op.as_dict()
                if not 0 <= f["layer"] < len(program.layers):
                    add("op-layer", bid, f"op names layer {f['layer']}, program has {len(program.layers)}")
                    continue
                layer = program.layers[f["layer"]]
                if OP_FOR_KIND[layer.kind] != op.opcode:
                    add("op-kind", bid, f"{op.opcode.name} op on {layer.kind.name} layer")
                fp = footprint(layer, f["bt"], f["c0"], f["ct"], f["y0"], f["ht"])
                if (fp.in_row0, fp.in_rows, fp.in_c0, fp.in_ct) != (f["in_row0"], f["in_rows"], f["in_c0"], f["in_ct"]):
                    add("op-geometry", bid, "input window fields do not match the layer geometry")
                inb = fetched.get((Buffer.IBUF, f["ibuf_bank"]))
                if inb is None:
                    add("unfetched", bid, f"IBUF bank {f['ibuf_bank']} was not fetched for this block")
                elif inb.length != fp.input_bytes:
                    add("op-geometry", bid, f"input tile is {fp.input_bytes} B, fetch {inb.block_id} "
                                            f"delivers {inb.length} B")
                if fp.weight_bytes:
                    wb = fetched.get((Buffer.WBUF, f["wbuf_bank"]))
                    if wb is None:
                        add("unfetched", bid, f"WBUF bank {f['wbuf_bank']} was not fetched for this block")
                    elif wb.length != fp.weight_bytes:
                        add("op-geometry", bid, f"weight tile is {fp.weight_bytes} B, fetch {wb.block_id} "
                                                f"delivers {wb.length} B")
                if fp.output_bytes > chip.bank_bytes("OBUF"):
                    add("capacity", bid, f"output tile of {fp.output_bytes} B exceeds the OBUF bank")
                okey = (b.vault, b.core, f["obuf_bank"])
                if okey in pending_out:
                    add("obuf-overwrite", bid, f"OBUF bank {f['obuf_bank']} still holds the output of block "
                                               f"{pending_out[okey][0]}")
                pending_out[okey] = (bid, fp.output_bytes)
            for rel in b.releases:
                dep = seen.get(rel)
                if isinstance(dep, CommBlock):
                    released.add((rel, b.vault, b.core))
                    key = (b.vault, b.core, dep.target, dep.bank)
                    if holder.get(key) == rel:
                        del holder[key]
        seen[bid] = b

    for (v, c, bank), (cid, _) in sorted(pending_out.items()):
        add("no-writeback", cid, f"output in OBUF bank {bank} of core ({v},{c}) is never written back")
    for (v, c, buf, bank), fid in sorted(holder.items()):
        add("never-released", fid, f"{buf.name} bank {bank} of core ({v},{c}) is never released")
    return diags


# ---------------------------------------------------------------- text form

def _mask_str(mask: int) -> str:
    return ",".join(str(i) for i in _bits(mask)) or "-"


def disassemble(program: Program) -> str:
    lines = [f"program version={VERSION} chip={program.chip_hash:#010x} wide_masks={int(program.wide_masks)}"]
    for i, s in enumerate(program.symbols):
        lines.append(f"symbol {i} {s.name} {s.role.name.lower()} @{s.address} dims={'x'.join(map(str, s.dims))}")
    for i, l in enumerate(program.layers):
        lines.append(f"layer {i} {l.name} {l.kind.name.lower()} in={l.input} w={l.weight} out={l.output} "
                     f"params={','.join(map(str, l.params))}")
    for b in program.blocks:
        if isinstance(b, CommBlock):
            lines.append(
                f"{b.block_id:>5} {b.direction.name.lower():<9} {b.target.name}[{b.bank}] "
                f"vaults={_mask_str(b.vault_mask)} cores={_mask_str(b.core_mask)}"
                f"{' bcast' if b.broadcast else ''} dram={b.dram_address}+{b.length} "
                f"shape={'x'.join(map(str, b.shape))} strides={','.join(map(str, b.strides))}"
            )
        else:
            lines.append(f"{b.block_id:>5} compute   core=({b.vault},{b.core}) bits={b.partition_bits} m={b.m} "
                         f"deps={','.join(map(str, b.depends_on)) or '-'} "
                         f"releases={','.join(map(str, b.releases)) or '-'}")
            for op in b.ops:
                args = " ".join(f"{k}={v}" for k, v in op.as_dict().items()) if len(op.fields) == len(OP_FIELDS) \
                    else ",".join(map(str, op.fields))
                lines.append(f"        {op.opcode.name.lower()} {args}")
    return "\n".join(lines) + "\n"
