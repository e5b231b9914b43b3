"""Text model format and the layer dataflow graph.

One declaration per line::

    <kind> <name>: key=value key=value ...

Kinds and their keys (defaults in brackets):

    input          batch height[1] width[1] channels
    conv           in out_channels kernel stride[1] pad[0] shift[0]
    fc             in out_features shift[0]
    pool           in kernel stride[kernel] mode[max]      (max | avg)
    activation     in fn[relu]
    normalization  in scale[1] bias[0] shift[0]

``#`` starts a comment. Tensors are NHWC int8; ``fc`` flattens its input.
A layer's output tensor takes the layer's name.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ModelError

LINE = re.compile(r"^\s*(\w+)\s+([A-Za-z_][\w.\-]*)\s*:\s*(.*)$")

SPEC = {
    "input": ({"batch", "channels"}, {"height": 1, "width": 1}),
    "conv": ({"in", "out_channels", "kernel"}, {"stride": 1, "pad": 0, "shift": 0}),
    "fc": ({"in", "out_features"}, {"shift": 0}),
    "pool": ({"in", "kernel"}, {"stride": None, "mode": "max"}),
    "activation": ({"in"}, {"fn": "relu"}),
    "normalization": ({"in"}, {"scale": 1, "bias": 0, "shift": 0}),
}
TEXT_FIELDS = {"in", "mode", "fn"}
SIGNED_FIELDS = {"bias", "scale"}


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str
    input: str
    attrs: dict = field(hash=False)
    in_shape: tuple[int, int, int, int]
    out_shape: tuple[int, int, int, int]
    line: int = 0

    @property
    def is_mac(self) -> bool:
        return self.kind in ("conv", "fc")

    @property
    def kernel(self) -> int:
        return self.attrs.get("kernel", 1)

    @property
    def dot_length(self) -> int:
        if self.kind == "fc":
            b, h, w, c = self.in_shape
            return h * w * c
        if self.kind == "conv":
            return self.kernel * self.kernel * self.in_shape[3]
        return 0


@dataclass(frozen=True)
class LayerDFG:
    inputs: dict = field(default_factory=dict)   # name -> shape
    layers: tuple[Layer, ...] = ()

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(l.input, l.name) for l in self.layers]

    def shape_of(self, tensor: str) -> tuple[int, int, int, int]:
        if tensor in self.inputs:
            return self.inputs[tensor]
        for l in self.layers:
            if l.name == tensor:
                return l.out_shape
        raise KeyError(tensor)


def _parse_value(key, raw, lineno):
    if key in TEXT_FIELDS:
        return raw
    try:
        v = int(raw)
    except ValueError:
        raise ModelError(f"expected an integer, got {raw!r}", lineno, key) from None
    if v < 0 and key not in SIGNED_FIELDS:
        raise ModelError(f"must be non-negative, got {v}", lineno, key)
    return v


def _infer(kind, name, attrs, src, in_shape, lineno):
    b, h, w, c = in_shape
    edge = f"edge {src} -> {name}"
    if kind == "conv":
        k, s, p = attrs["kernel"], attrs["stride"], attrs["pad"]
        for key in ("kernel", "stride", "out_channels"):
            if attrs[key] < 1:
                raise ModelError("must be at least 1", lineno, key)
        if k > h + 2 * p or k > w + 2 * p:
            raise ModelError(f"shape mismatch on {edge}: kernel {k} exceeds padded input {h}x{w}", lineno, "kernel")
        return b, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1, attrs["out_channels"]
    if kind == "fc":
        if attrs["out_features"] < 1:
            raise ModelError("must be at least 1", lineno, "out_features")
        return b, 1, 1, attrs["out_features"]
    if kind == "pool":
        k = attrs["kernel"]
        if attrs["stride"] is None:
            attrs["stride"] = k
        s = attrs["stride"]
        if k < 1 or s < 1:
            raise ModelError("kernel and stride must be at least 1", lineno, "kernel")
        if attrs["mode"] not in ("max", "avg"):
            raise ModelError(f"unknown pooling mode {attrs['mode']!r}", lineno, "mode")
        if k > h or k > w:
            raise ModelError(f"shape mismatch on {edge}: window {k} exceeds input {h}x{w}", lineno, "kernel")
        return b, (h - k) // s + 1, (w - k) // s + 1, c
    if kind == "activation":
        if attrs["fn"] != "relu":
            raise ModelError(f"unsupported activation {attrs['fn']!r}", lineno, "fn")
        return in_shape
    return in_shape


def parse_model(text: str) -> LayerDFG:
    inputs: dict[str, tuple] = {}
    layers: list[Layer] = []
    shapes: dict[str, tuple] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = LINE.match(line)
        if not m:
            raise ModelError("expected '<kind> <name>: key=value ...'", lineno)
        kind, name, rest = m.groups()
        if kind not in SPEC:
            raise ModelError(f"unknown layer kind {kind!r}", lineno, "kind")
        if name in shapes:
            raise ModelError(f"duplicate tensor name {name!r}", lineno, "name")
        required, defaults = SPEC[kind]
        attrs = dict(defaults)
        seen = set()
        for tok in rest.split():
            if "=" not in tok:
                raise ModelError(f"expected key=value, got {tok!r}", lineno)
            key, val = tok.split("=", 1)
            if key not in required and key not in defaults:
                raise ModelError(f"unknown field for {kind}", lineno, key)
            if key in seen:
                raise ModelError("given twice", lineno, key)
            seen.add(key)
            attrs[key] = _parse_value(key, val, lineno)
        for key in sorted(required - seen):
            raise ModelError("missing required field", lineno, key)
        if kind == "input":
            shape = (attrs["batch"], attrs["height"], attrs["width"], attrs["channels"])
            if min(shape) < 1:
                raise ModelError("input dimensions must be positive", lineno, "batch")
            inputs[name] = shape
            shapes[name] = shape
            continue
        src = attrs.pop("in")
        if src not in shapes:
            raise ModelError(f"dangling tensor reference {src!r}", lineno, "in")
        out = _infer(kind, name, attrs, src, shapes[src], lineno)
        layers.append(Layer(name, kind, src, attrs, shapes[src], out, lineno))
        shapes[name] = out
    return LayerDFG(inputs, tuple(layers))


def load_model(path: str | Path) -> LayerDFG:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ModelError(f"cannot read model {path}: {e}") from None
    return parse_model(text)


def layer_entry(layer: Layer, input_sym: int = -1, weight_sym: int = -1, output_sym: int = -1):
    """Binary layer-table row for ``layer`` (see ``bpsim.isa`` for slots)."""
    from ..isa import LayerEntry, LayerKind

    b, h, w, c = layer.in_shape
    _, ho, wo, co = layer.out_shape
    a = layer.attrs
    if layer.kind == "conv":
        kind = LayerKind.CONV
        params = (b, h, w, c, co, a["kernel"], a["stride"], a["pad"], ho, wo, a["shift"], 0)
    elif layer.kind == "fc":
        # a flattened NHWC tensor is a 1x1 image with h*w*c channels
        kind = LayerKind.FC
        params = (b, 1, 1, h * w * c, co, 1, 1, 0, 1, 1, a["shift"], 0)
    elif layer.kind == "pool":
        kind = LayerKind.POOL
        params = (b, h, w, c, c, a["kernel"], a["stride"], 0, ho, wo, 0, 0 if a["mode"] == "max" else 1)
    elif layer.kind == "activation":
        kind = LayerKind.RELU
        params = (b, h, w, c, c, 1, 1, 0, h, w, 0, 0)
    else:
        kind = LayerKind.NORM
        params = (b, h, w, c, c, a["scale"], a["bias"], 0, h, w, a["shift"], 0)
    return LayerEntry(layer.name, kind, input_sym, weight_sym, output_sym, params)
