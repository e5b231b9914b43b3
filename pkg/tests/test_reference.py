import numpy as np
import pytest

from bpsim.compiler import compile_model, parse_model
from bpsim.config import ChipConfig
from bpsim.isa import Role
from bpsim.reference import im2col, initial_dram, mac_layer, norm_layer, pool_layer, requantize


def naive_conv(x, w, k, s, pad):
    b, h, wd, c = x.shape
    co = w.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))).astype(np.int64)
    ho, wo = (h + 2 * pad - k) // s + 1, (wd + 2 * pad - k) // s + 1
    out = np.zeros((b, ho, wo, co), dtype=np.int64)
    for n in range(b):
        for y in range(ho):
            for xx in range(wo):
                for o in range(co):
                    out[n, y, xx, o] = int((xp[n, y * s:y * s + k, xx * s:xx * s + k, :] * w[o]).sum())
    return out


@pytest.mark.parametrize("k,s,pad", [(1, 1, 0), (3, 1, 1), (3, 2, 0), (2, 2, 1)])
def test_conv_matches_naive(k, s, pad):
    rng = np.random.default_rng(k * 10 + s)
    x = rng.integers(-127, 128, (2, 6, 5, 3))
    w = rng.integers(-127, 128, (4, k, k, 3))
    acc, sat = mac_layer(x, w, k, s, pad)
    assert sat == 0
    assert np.array_equal(acc, naive_conv(x, w, k, s, pad))


def test_im2col_order():
    x = np.arange(3 * 3 * 2).reshape(1, 3, 3, 2)
    cols = im2col(x, 2, 1, 0)
    assert cols.shape == (1, 2, 2, 8)
    assert cols[0, 0, 0].tolist() == [0, 1, 2, 3, 6, 7, 8, 9]


def test_requantize():
    out, sat = requantize(np.array([1000, -1000, 255, -256, 7]), 1)
    assert out.tolist() == [127, -127, 127, -127, 3]
    assert sat == 3    # 255 >> 1 == 127 still fits
    assert requantize(np.array([-3]), 1)[0].tolist() == [-2]   # arithmetic shift floors


def test_pool_modes():
    x = np.array([[1, -2], [3, 4]], dtype=np.int8).reshape(1, 2, 2, 1)
    assert pool_layer(x, 2, 2, 0).ravel().tolist() == [4]
    assert pool_layer(x, 2, 2, 1).ravel().tolist() == [1]
    y = np.array([-1, -2, -2, -2], dtype=np.int8).reshape(1, 2, 2, 1)
    assert pool_layer(y, 2, 2, 1).ravel().tolist() == [-2]


def test_norm():
    out, sat = norm_layer(np.array([10, -10, 100], dtype=np.int8), -3, 4, 1)
    assert out.tolist() == [-13, 17, -127]
    assert sat == 1


def test_initial_dram_deterministic():
    prog = compile_model(parse_model("input x: batch=1 channels=20\nfc f: in=x out_features=3"), ChipConfig())[1]
    a, b = initial_dram(prog, 5), initial_dram(prog, 5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, initial_dram(prog, 6))
    out = next(s for s in prog.symbols if s.role == Role.ACTIVATION)
    assert not a[out.address:out.address + out.nbytes].any()
    assert a.min() >= -127
