"""Layer-level functional reference built on the exact bit-partitioned
product, plus the DRAM image that programs run against."""

from __future__ import annotations

import numpy as np

from .bitpart import PartitionScheme, bp_matmul
from .isa import (
    MAC_KINDS,
    P_BIAS,
    P_K,
    P_MODE,
    P_PAD,
    P_SCALE,
    P_SHIFT,
    P_STRIDE,
    LayerKind,
    Program,
    Role,
    Symbol,
)

QMAX = 127


def initial_dram(program: Program, seed: int = 1) -> np.ndarray:
    """Flat int8 memory with every input and weight symbol filled from ``seed``.

    Values are uniform in [-127, 127]; activations start at zero.
    """
    size = max((s.address + s.nbytes for s in program.symbols), default=0)
    mem = np.zeros(size, dtype=np.int8)
    for i, s in enumerate(program.symbols):
        if s.role in (Role.INPUT, Role.WEIGHT):
            rng = np.random.default_rng([seed, i])
            mem[s.address:s.address + s.nbytes] = rng.integers(-QMAX, QMAX + 1, size=s.nbytes)
    return mem


def read_symbol(mem: np.ndarray, sym: Symbol) -> np.ndarray:
    return mem[sym.address:sym.address + sym.nbytes].reshape(sym.dims)


def requantize(acc: np.ndarray, shift: int) -> tuple[np.ndarray, int]:
    """Arithmetic right shift, then saturate to the symmetric int8 range."""
    shifted = np.right_shift(np.asarray(acc, dtype=np.int64), shift)
    out = np.clip(shifted, -QMAX, QMAX)
    return out.astype(np.int8), int(np.count_nonzero(out != shifted))


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(B, H, W, C) -> (B, Ho, Wo, k*k*C) with (ky, kx, c) ordering."""
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))  # B, Ho', Wo', C, k, k
    win = win[:, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(win.shape[:3] + (-1,))


def mac_layer(x: np.ndarray, w: np.ndarray, k: int, stride: int, pad: int,
              scheme: PartitionScheme | None = None) -> tuple[np.ndarray, int]:
    """Accumulators of a convolution (``fc`` is the 1x1 case on a flattened input)."""
    cols = im2col(x, k, stride, pad)
    acc, sat = bp_matmul(cols.reshape(-1, cols.shape[-1]), w.reshape(w.shape[0], -1), scheme)
    return acc.reshape(cols.shape[:3] + (w.shape[0],)), sat


def pool_layer(x: np.ndarray, k: int, stride: int, mode: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    if mode == 0:
        return win.max(axis=(-2, -1)).astype(np.int8)
    s = win.astype(np.int64).sum(axis=(-2, -1))
    return np.floor_divide(s, k * k).astype(np.int8)


def norm_layer(x: np.ndarray, scale: int, bias: int, shift: int) -> tuple[np.ndarray, int]:
    return requantize(x.astype(np.int64) * scale + bias, shift)


def evaluate(program: Program, mem: np.ndarray, scheme: PartitionScheme | None = None):
    """Run every layer of ``program`` on a copy of ``mem``.

    Returns ``(outputs, accumulators)``: int8 output tensors by layer name and
    int64 pre-requantization accumulators for the MAC layers.
    """
    mem = mem.copy()
    outputs, accs = {}, {}
    for layer in program.layers:
        p = layer.params
        src = program.symbols[layer.input]
        dst = program.symbols[layer.output]
        x = read_symbol(mem, src)
        if layer.kind in MAC_KINDS:
            x = x.reshape(p[0], p[1], p[2], p[3])
            w = read_symbol(mem, program.symbols[layer.weight])
            acc, _ = mac_layer(x, w, p[P_K], p[P_STRIDE], p[P_PAD], scheme)
            accs[layer.name] = acc
            out, _ = requantize(acc, p[P_SHIFT])
        elif layer.kind == LayerKind.POOL:
            out = pool_layer(x, p[P_K], p[P_STRIDE], p[P_MODE])
        elif layer.kind == LayerKind.RELU:
            out = np.maximum(x, 0)
        else:
            out, _ = norm_layer(x, p[P_SCALE], p[P_BIAS], p[P_SHIFT])
        out = out.reshape(dst.dims)
        mem[dst.address:dst.address + dst.nbytes] = out.ravel()
        outputs[layer.name] = out
    return outputs, accs
