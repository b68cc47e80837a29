"""JSON network descriptions: parse, validate, serialize.

The on-disk form is a versioned JSON object; see schemas/network.schema.json.
Parsing reports the failing layer index and field, then the shape chain is
checked by building the NetworkGraph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..nn.graph import LayerSpec, NetworkGraph

SCHEMA_VERSION = 1

_LAYER_FIELDS = {
    "conv": {"out_channels": int, "kernel": list, "stride": list, "pad": list},
    "fc": {"out_features": int, "bias": bool},
    "relu": {},
    "pool": {"pool": str, "window": list, "stride": list},
    "batchnorm": {"momentum": float},
    "reshape": {"shape": list},
    "scalar": {"op": str, "operand": float},
    "loss": {"loss": str},
}
_REQUIRED = {"conv": ("out_channels", "kernel"), "fc": ("out_features",),
             "pool": ("window",), "scalar": ("op", "operand"), "loss": ("loss",)}


class ParseError(ValueError):
    """Schema-level failure with a layer index (-1 for top-level fields)."""

    def __init__(self, index: int, field_name: str, message: str):
        self.index = index
        self.field = field_name
        where = f"layer {index}" if index >= 0 else "network"
        super().__init__(f"{where} ({field_name}): {message}")


@dataclass
class NetworkDescription:
    name: str
    batch: int
    input_shape: tuple
    layers: list                  # LayerSpec
    seed: int = 0
    checkpoint: str | None = None
    graph: NetworkGraph = field(init=False, repr=False)

    def __post_init__(self):
        self.graph = NetworkGraph(self.name, self.batch, self.input_shape, self.layers)


def _pair(value, index, name):
    if not (isinstance(value, (list, tuple)) and len(value) == 2
            and all(isinstance(v, int) and v >= 0 for v in value)):
        raise ParseError(index, name, f"expected a pair of non-negative ints, got {value!r}")
    return tuple(value)


def _layer_from_dict(i: int, obj) -> LayerSpec:
    if not isinstance(obj, dict):
        raise ParseError(i, "layer", f"expected an object, got {type(obj).__name__}")
    kind = obj.get("kind")
    if kind not in _LAYER_FIELDS:
        raise ParseError(i, "kind", f"unknown layer kind {kind!r}")
    for req in _REQUIRED.get(kind, ()):
        if req not in obj:
            raise ParseError(i, req, f"required for {kind} layers")
    allowed = {"kind", "name"} | set(_LAYER_FIELDS[kind])
    for key in obj:
        if key not in allowed:
            raise ParseError(i, key, f"unknown field for {kind} layers")

    spec = LayerSpec(kind=kind, name=obj.get("name", ""))
    if kind == "conv":
        spec.out_channels = obj["out_channels"]
        spec.kernel = _pair(obj["kernel"], i, "kernel")
        spec.stride = _pair(obj.get("stride", [1, 1]), i, "stride")
        spec.pad = _pair(obj.get("pad", [0, 0]), i, "pad")
    elif kind == "fc":
        spec.out_features = obj["out_features"]
        spec.bias = bool(obj.get("bias", True))
    elif kind == "pool":
        spec.pool = obj.get("pool", "max")
        spec.window = _pair(obj["window"], i, "window")
        spec.stride = _pair(obj.get("stride", obj["window"]), i, "stride")
    elif kind == "batchnorm":
        spec.momentum = float(obj.get("momentum", 0.9))
        if not 0.0 <= spec.momentum < 1.0:
            raise ParseError(i, "momentum", "must be in [0, 1)")
    elif kind == "reshape":
        spec.shape = tuple(obj["shape"]) if obj.get("shape") else None
    elif kind == "scalar":
        spec.op = obj["op"]
        spec.operand = float(obj["operand"])
    elif kind == "loss":
        spec.loss = obj["loss"]
    return spec


def network_from_dict(obj) -> NetworkDescription:
    if not isinstance(obj, dict):
        raise ParseError(-1, "document", "expected a JSON object")
    version = obj.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ParseError(-1, "schema_version", f"unsupported version {version}")
    for req in ("name", "batch", "input_shape", "layers"):
        if req not in obj:
            raise ParseError(-1, req, "missing required field")
    if not isinstance(obj["batch"], int) or obj["batch"] < 1:
        raise ParseError(-1, "batch", f"must be a positive int, got {obj['batch']!r}")
    shape = obj["input_shape"]
    if not (isinstance(shape, list) and len(shape) == 3
            and all(isinstance(v, int) and v > 0 for v in shape)):
        raise ParseError(-1, "input_shape", f"expected [C, H, W], got {shape!r}")
    layers = [_layer_from_dict(i, l) for i, l in enumerate(obj["layers"])]
    return NetworkDescription(
        name=str(obj["name"]),
        batch=obj["batch"],
        input_shape=tuple(shape),
        layers=layers,
        seed=int(obj.get("seed", 0)),
        checkpoint=obj.get("checkpoint"),
    )


def parse_network(text: str) -> NetworkDescription:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(-1, "document", f"invalid JSON: {e}") from None
    return network_from_dict(obj)


def network_to_dict(nd: NetworkDescription) -> dict:
    layers = []
    for spec in nd.layers:
        entry = {"kind": spec.kind}
        if spec.name:
            entry["name"] = spec.name
        if spec.kind == "conv":
            entry.update(out_channels=spec.out_channels, kernel=list(spec.kernel),
                         stride=list(spec.stride), pad=list(spec.pad))
        elif spec.kind == "fc":
            entry.update(out_features=spec.out_features, bias=spec.bias)
        elif spec.kind == "pool":
            entry.update(pool=spec.pool, window=list(spec.window), stride=list(spec.stride))
        elif spec.kind == "batchnorm":
            entry.update(momentum=spec.momentum)
        elif spec.kind == "reshape":
            if spec.shape:
                entry.update(shape=list(spec.shape))
        elif spec.kind == "scalar":
            entry.update(op=spec.op, operand=spec.operand)
        elif spec.kind == "loss":
            entry.update(loss=spec.loss)
        layers.append(entry)
    out = {
        "schema_version": SCHEMA_VERSION,
        "name": nd.name,
        "batch": nd.batch,
        "seed": nd.seed,
        "input_shape": list(nd.input_shape),
        "layers": layers,
    }
    if nd.checkpoint:
        out["checkpoint"] = nd.checkpoint
    return out


def serialize_network(nd: NetworkDescription) -> str:
    return json.dumps(network_to_dict(nd), indent=2)


def load_network(path: str) -> NetworkDescription:
    with open(path) as f:
        return parse_network(f.read())
