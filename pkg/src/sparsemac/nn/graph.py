"""Network description, validation, and the quantized training loop.

A network is an ordered layer list over NCHW activations.  Validation chains
the shapes end to end and resolves conv/fc geometry; execution threads every
tensor through the compressed MaskedTensor form.  All randomness (init,
rounding draws, data order) derives from one master seed, so a (seed, graph,
data) triple fully determines every numeric output.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from ..fixedpoint import QFormat, mix64, quantize_real_raw
from ..sparse import MaskedTensor
from . import layers as L

LAYER_KINDS = ("conv", "fc", "relu", "pool", "batchnorm", "reshape", "scalar", "loss")
POOL_KINDS = ("max", "min", "mean")
LOSS_KINDS = ("l1", "l2", "softmax-xent")


class GraphError(ValueError):
    """Validation failure, pinned to a layer index and field."""

    def __init__(self, index: int, field_name: str, message: str):
        self.index = index
        self.field = field_name
        super().__init__(f"layer {index} ({field_name}): {message}")


@dataclass
class LayerSpec:
    kind: str
    name: str = ""
    out_channels: int = 0          # conv
    kernel: tuple = (1, 1)         # conv
    stride: tuple = (1, 1)         # conv / pool
    pad: tuple = (0, 0)            # conv
    out_features: int = 0          # fc
    bias: bool = True              # fc
    pool: str = "max"              # pool
    window: tuple = (2, 2)         # pool
    momentum: float = 0.9          # batchnorm
    op: str = "add"                # scalar
    operand: float = 0.0           # scalar
    shape: tuple | None = None     # reshape target (per sample); None = flatten
    loss: str = "softmax-xent"     # loss


@dataclass
class NetworkGraph:
    """Validated network: per-layer specs plus the resolved shape chain."""

    name: str
    batch: int
    input_shape: tuple  # (C, H, W)
    layers: list
    shapes: list = field(default_factory=list)       # per-layer output shape
    conv_specs: dict = field(default_factory=dict)   # layer index -> ConvSpec
    fc_specs: dict = field(default_factory=dict)     # layer index -> FcSpec
    loss_index: int | None = None

    def __post_init__(self):
        self._validate()

    def _validate(self):
        if self.batch < 1:
            raise GraphError(-1, "batch", "batch size must be >= 1")
        if len(self.input_shape) != 3:
            raise GraphError(-1, "input_shape", "expected (C, H, W)")
        cur = (self.batch, *self.input_shape)
        self.shapes = []
        self.conv_specs = {}
        self.fc_specs = {}
        self.loss_index = None
        for i, spec in enumerate(self.layers):
            if spec.kind not in LAYER_KINDS:
                raise GraphError(i, "kind", f"unknown layer kind {spec.kind!r}")
            if self.loss_index is not None:
                raise GraphError(i, "kind", "no layers may follow the loss layer")
            cur = self._shape_step(i, spec, cur)
            self.shapes.append(cur)

    def _shape_step(self, i, spec, cur):
        kind = spec.kind
        if kind == "conv":
            if len(cur) != 4:
                raise GraphError(i, "kind", f"conv needs a 4-D input, got {cur}")
            if spec.out_channels < 1:
                raise GraphError(i, "out_channels", "must be >= 1")
            try:
                cs = L.ConvSpec(
                    n=cur[0], k=spec.out_channels, c=cur[1], h=cur[2], w=cur[3],
                    r=spec.kernel[0], s=spec.kernel[1],
                    u=spec.stride[0], v=spec.stride[1],
                    pad_h=spec.pad[0], pad_w=spec.pad[1],
                )
            except ValueError as e:
                raise GraphError(i, "kernel", str(e)) from None
            self.conv_specs[i] = cs
            return (cs.n, cs.k, cs.p, cs.q)
        if kind == "fc":
            if len(cur) != 2:
                raise GraphError(i, "kind", f"fc needs a 2-D input, got {cur} (add a reshape)")
            if spec.out_features < 1:
                raise GraphError(i, "out_features", "must be >= 1")
            self.fc_specs[i] = L.FcSpec(m=spec.out_features, n=cur[1], bias=spec.bias)
            return (cur[0], spec.out_features)
        if kind == "pool":
            if len(cur) != 4:
                raise GraphError(i, "kind", "pool needs a 4-D input")
            if spec.pool not in POOL_KINDS:
                raise GraphError(i, "pool", f"unknown pool kind {spec.pool!r}")
            h, w = cur[2], cur[3]
            r, s = spec.window
            u, v = spec.stride
            if r > h or s > w or (h - r) % u or (w - s) % v:
                raise GraphError(i, "window", f"{r}x{s}/{u}x{v} does not tile {h}x{w}")
            return (cur[0], cur[1], (h - r) // u + 1, (w - s) // v + 1)
        if kind == "reshape":
            per_sample = int(np.prod(cur[1:]))
            if spec.shape is None:
                return (cur[0], per_sample)
            if int(np.prod(spec.shape)) != per_sample:
                raise GraphError(i, "shape", f"{spec.shape} has wrong element count")
            return (cur[0], *spec.shape)
        if kind == "loss":
            if spec.loss not in LOSS_KINDS:
                raise GraphError(i, "loss", f"unknown loss kind {spec.loss!r}")
            if i != len(self.layers) - 1:
                raise GraphError(i, "kind", "loss must be the last layer")
            if spec.loss == "softmax-xent" and len(cur) != 2:
                raise GraphError(i, "kind", "softmax-xent needs a 2-D input")
            self.loss_index = i
            return cur
        if kind == "scalar" and spec.op not in ("add", "sub"):
            raise GraphError(i, "op", f"unknown scalar op {spec.op!r}")
        # relu / batchnorm / scalar keep their input shape
        if kind == "batchnorm" and len(cur) not in (2, 4):
            raise GraphError(i, "kind", "batchnorm needs a 2-D or 4-D input")
        return cur

    @property
    def compute_layers(self):
        """Indices of layers executed by forward() (everything but loss)."""
        end = self.loss_index if self.loss_index is not None else len(self.layers)
        return range(end)


# ---------------------------------------------------------------------------
# parameters and state
# ---------------------------------------------------------------------------

def init_real_params(graph: NetworkGraph, seed: int) -> list:
    """Per-layer float64 parameter draws (shared with the real-valued shadow)."""
    params = []
    for i, spec in enumerate(graph.layers):
        rng = np.random.default_rng(mix64(seed, i, 0xA11))
        if spec.kind == "conv":
            cs = graph.conv_specs[i]
            lim = np.sqrt(6.0 / (cs.c * cs.r * cs.s))
            params.append({"weight": rng.uniform(-lim, lim, size=(cs.k, cs.c, cs.r, cs.s))})
        elif spec.kind == "fc":
            fs = graph.fc_specs[i]
            lim = np.sqrt(6.0 / fs.n)
            p = {"weight": rng.uniform(-lim, lim, size=(fs.m, fs.n))}
            if fs.bias:
                p["bias"] = np.zeros(fs.m)
            params.append(p)
        elif spec.kind == "batchnorm":
            c = graph.shapes[i][1]
            params.append({"gamma": np.ones(c), "beta": np.zeros(c)})
        else:
            params.append({})
    return params


@dataclass
class TrainState:
    fmt: QFormat
    lr: float
    seed: int
    step: int
    params: list          # per layer: dict of MaskedTensor
    bn: dict              # layer index -> BnState
    saturations: int = 0  # running total over all rounding sites


def init_state(graph: NetworkGraph, fmt: QFormat, lr: float, seed: int) -> TrainState:
    real = init_real_params(graph, seed)
    params = []
    bn = {}
    for i, spec in enumerate(graph.layers):
        q = {}
        for key, arr in real[i].items():
            raw, _ = quantize_real_raw(arr, fmt, "nearest")
            q[key] = MaskedTensor.from_dense(raw.reshape(arr.shape), fmt)
        params.append(q)
        if spec.kind == "batchnorm":
            bn[i] = L.BnState.fresh(graph.shapes[i][1], spec.momentum)
    return TrainState(fmt=fmt, lr=lr, seed=seed, step=0, params=params, bn=bn)


def _seed(state: TrainState, layer: int, tag: int) -> int:
    return mix64(state.seed, state.step, layer, tag)


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def forward(graph: NetworkGraph, state: TrainState, x: MaskedTensor,
            mode: str = "nearest", train: bool = False):
    """Run all compute layers; returns (output, caches, per-layer stats).

    Caches hold what backward needs: the layer input, plus batch-norm
    internals and pending running-stat updates in train mode.
    """
    caches = []
    stats = []
    cur = x
    for i in graph.compute_layers:
        spec = graph.layers[i]
        p = state.params[i]
        seed = _seed(state, i, 1)
        cache = {"input": cur}
        if spec.kind == "conv":
            cur, st = L.conv_forward(cur, p["weight"], graph.conv_specs[i], mode, seed)
        elif spec.kind == "fc":
            cur, st = L.fc_forward(cur, p["weight"], p.get("bias"),
                                   graph.fc_specs[i], mode, seed)
        elif spec.kind == "relu":
            cur, st = L.relu(cur)
        elif spec.kind == "pool":
            cur, st = L.pool_forward(cur, spec.pool, spec.window, spec.stride, mode, seed)
        elif spec.kind == "batchnorm":
            cur, new_bn, bn_cache, st = L.batchnorm_forward(
                cur, p["gamma"], p["beta"], train, state.bn[i], mode, seed)
            cache["bn"] = bn_cache
            cache["bn_state"] = new_bn
        elif spec.kind == "reshape":
            target = (cur.shape[0], *spec.shape) if spec.shape else \
                (cur.shape[0], int(np.prod(cur.shape[1:])))
            cur = L.reshape(cur, target)
            st = L.LayerStats(out_elements=cur.size)
        elif spec.kind == "scalar":
            opnd, _ = quantize_real_raw(np.array([spec.operand]), cur.fmt, "nearest")
            cur, st = L.scalar_op(cur, spec.op, int(opnd[0]))
        else:
            raise GraphError(i, "kind", f"cannot execute {spec.kind!r}")
        caches.append(cache)
        stats.append(st)
    return cur, caches, stats


def train_step(graph: NetworkGraph, state: TrainState, x: MaskedTensor, targets,
               mode: str = "stochastic"):
    """One SGD step; returns (loss, new TrainState, per-layer stats)."""
    if graph.loss_index is None:
        raise GraphError(len(graph.layers) - 1, "kind", "training needs a loss layer")
    out, caches, stats = forward(graph, state, x, mode, train=True)
    loss_spec = graph.layers[graph.loss_index]
    loss, grad, loss_stats = L.loss_fn(out, targets, loss_spec.loss, mode,
                                       _seed(state, graph.loss_index, 4))
    stats = stats + [loss_stats]

    new_params = [dict(p) for p in state.params]
    new_bn = dict(state.bn)
    sat = sum(st.saturations for st in stats)
    grads = {}

    for i in reversed(list(graph.compute_layers)):
        spec = graph.layers[i]
        p = state.params[i]
        cache = caches[i]
        seed = _seed(state, i, 2)
        if spec.kind == "conv":
            grad, gw, st = L.conv_backward(grad, cache["input"], p["weight"],
                                           graph.conv_specs[i], mode, seed)
            grads[i] = {"weight": gw}
        elif spec.kind == "fc":
            grad, gw, gb, st = L.fc_backward(grad, cache["input"], p["weight"],
                                             graph.fc_specs[i], mode, seed)
            grads[i] = {"weight": gw, "bias": gb} if "bias" in p else {"weight": gw}
        elif spec.kind == "relu":
            grad, st = L.relu_backward(grad, cache["input"])
        elif spec.kind == "pool":
            grad, st = L.pool_backward(grad, cache["input"], spec.pool,
                                       spec.window, spec.stride, mode, seed)
        elif spec.kind == "batchnorm":
            grad, gg, gb, st = L.batchnorm_backward(grad, cache["bn"], state.fmt, mode, seed)
            grads[i] = {"gamma": gg, "beta": gb}
            new_bn[i] = cache["bn_state"]
        elif spec.kind == "reshape":
            grad = L.reshape(grad, cache["input"].shape)
            st = L.LayerStats()
        elif spec.kind == "scalar":
            st = L.LayerStats()  # add/sub of a constant: gradient passes through
        else:
            raise GraphError(i, "kind", f"cannot differentiate {spec.kind!r}")
        sat += st.saturations

    param_tag = {"weight": 3, "bias": 5, "gamma": 6, "beta": 7}
    for i, layer_grads in grads.items():
        for key, g in layer_grads.items():
            new_params[i][key], s = L.sgd_update(
                state.params[i][key], g, state.lr, mode, _seed(state, i, param_tag[key]))
            sat += s

    new_state = replace(state, step=state.step + 1, params=new_params, bn=new_bn,
                        saturations=state.saturations + sat)
    return loss, new_state, stats


def predict(graph: NetworkGraph, state: TrainState, x: MaskedTensor,
            mode: str = "nearest") -> np.ndarray:
    out, _, _ = forward(graph, state, x, mode, train=False)
    return out.to_real()


def measure(graph: NetworkGraph, state: TrainState, x: MaskedTensor,
            mode: str = "nearest", train: bool = False) -> list:
    """Forward pass returning per-layer stats, for perf coupling and the
    sparsity report (loss layer excluded: it does no MAC work)."""
    _, _, stats = forward(graph, state, x, mode, train=train)
    return stats


# ---------------------------------------------------------------------------
# checkpoints: one MaskedTensor file per parameter plus a JSON manifest
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, graph: NetworkGraph, state: TrainState):
    os.makedirs(path, exist_ok=True)
    manifest = {
        "network": graph.name,
        "qformat": {"il": state.fmt.il, "fl": state.fmt.fl},
        "lr": state.lr,
        "seed": state.seed,
        "step": state.step,
        "layers": [],
    }
    for i, spec in enumerate(graph.layers):
        entry = {"index": i, "kind": spec.kind, "name": spec.name, "tensors": {}}
        for key, mt in state.params[i].items():
            fname = f"layer{i:03d}_{key}.mt"
            mt.save(os.path.join(path, fname))
            entry["tensors"][key] = fname
        if i in state.bn:
            bn = state.bn[i]
            entry["bn"] = {
                "running_mean": bn.running_mean.tolist(),
                "running_var": bn.running_var.tolist(),
                "momentum": bn.momentum,
            }
        manifest["layers"].append(entry)
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_checkpoint(path: str, graph: NetworkGraph) -> TrainState:
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    fmt = QFormat(manifest["qformat"]["il"], manifest["qformat"]["fl"])
    params = []
    bn = {}
    for entry in manifest["layers"]:
        q = {}
        for key, fname in entry["tensors"].items():
            q[key] = MaskedTensor.load(os.path.join(path, fname))
        params.append(q)
        if "bn" in entry:
            bn[entry["index"]] = L.BnState(
                np.array(entry["bn"]["running_mean"]),
                np.array(entry["bn"]["running_var"]),
                entry["bn"]["momentum"],
            )
    if len(params) != len(graph.layers):
        raise ValueError(f"checkpoint has {len(params)} layers, network has {len(graph.layers)}")
    return TrainState(fmt=fmt, lr=manifest["lr"], seed=manifest["seed"],
                      step=manifest["step"], params=params, bn=bn)
