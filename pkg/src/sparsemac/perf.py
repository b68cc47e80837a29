"""Analytical performance and energy model of the accelerator.

Every MAC layer (conv, fc-as-1x1-conv) is tiled against the three on-chip
buffers and walked in the fixed loop-nest order: batch outermost, then the
filter extents (never tiled), input channels, input spatial, and output
channels innermost.  Tile extents start at the full layer and the lowest
priority dimension is halved first (out-channel, then spatial, then
in-channel, then batch) until every tile's working set fits.

Cycle model per tile: ceil(aligned MACs / (PEs * lanes * multipliers)).  The
operand-alignment scan is pipelined, so it costs one pipeline fill of the
MAC-lane mask tile per work tile, never throughput.  Memory time comes from
replaying the plan's DMA list against the memory model; a layer's total is
max(compute, memory) plus the fill overhead (double-buffered DMA assumed).

Traffic accounting (documented model, not a hardware claim):
  - weights: fetched once if the whole layer's weights fit the weight
    buffer, else streamed once per (batch-tile x spatial-tile) sweep;
  - inputs: each (batch, channel, spatial) patch fetched once, halo overlap
    included;
  - outputs: written once compressed; if the in-channel dimension is tiled,
    partial sums spill and reload at wide width per extra channel tile;
  - compressed sizes scale payload bytes by density and add one mask bit
    per logical element; partial sums are never compressed.

Energy constants are calibration placeholders; the tests assert accounting
identities and ratios, never absolute joules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .fixedpoint import QFormat
from .mem import MemoryConfig, MemoryModel, MemRequest

LOOP_ORDER = ("batch", "weight", "in_channel", "input", "out_channel")


@dataclass
class AcceleratorConfig:
    clock_hz: float = 700e6
    num_pes: int = 64
    lanes_per_pe: int = 72
    mults_per_lane: int = 16
    weight_buffer_bytes: int = 24 << 20
    activation_buffer_bytes: int = 12 << 20
    mask_buffer_bytes: int = 4 << 20
    loop_order: tuple = LOOP_ORDER
    qformat: QFormat = field(default_factory=lambda: QFormat(4, 16))
    mask_tile: int = 16              # MAC-lane vector width, pipeline fill unit
    elem_ops_per_cycle: int = 0      # 0 -> num_pes * lanes_per_pe
    # per-event energy constants (placeholders, see module docstring)
    e_mac_pj: float = 2.0
    e_round_pj: float = 1.0
    e_scan_per_bit_pj: float = 0.01
    e_elem_pj: float = 1.0
    e_wbuf_pj_per_byte: float = 0.5
    e_abuf_pj_per_byte: float = 0.5
    e_mbuf_pj_per_byte: float = 0.5
    e_leak_pj_per_cycle: float = 50.0

    def __post_init__(self):
        for name in ("num_pes", "lanes_per_pe", "mults_per_lane", "weight_buffer_bytes",
                     "activation_buffer_bytes", "mask_buffer_bytes", "mask_tile"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if tuple(self.loop_order) != LOOP_ORDER:
            raise ValueError(f"loop order is fixed: {LOOP_ORDER}")
        if self.elem_ops_per_cycle <= 0:
            self.elem_ops_per_cycle = self.num_pes * self.lanes_per_pe

    @property
    def peak_macs_per_cycle(self) -> int:
        return self.num_pes * self.lanes_per_pe * self.mults_per_lane


@dataclass
class LayerWork:
    """Normalized layer description the model plans against."""

    name: str
    kind: str                 # "conv" | "fc" | "elem"
    in_elements: int = 0
    out_elements: int = 0
    weight_elements: int = 0
    # mac geometry (fc maps to a 1x1 conv: C=inputs, K=outputs, spatial 1)
    n: int = 0
    k: int = 0
    c: int = 0
    h: int = 0
    w: int = 0
    r: int = 1
    s: int = 1
    u: int = 1
    v: int = 1
    p: int = 1
    q: int = 1

    @property
    def is_mac(self) -> bool:
        return self.kind in ("conv", "fc")

    @property
    def dense_macs(self) -> int:
        if not self.is_mac:
            return 0
        return self.n * self.k * self.c * self.r * self.s * self.p * self.q


@dataclass
class Tile:
    n: tuple
    c: tuple
    p: tuple
    q: tuple
    k: tuple

    def extent(self, dim: str) -> int:
        lo, hi = getattr(self, dim)
        return hi - lo


@dataclass
class Transfer:
    tensor: str        # weight | input | output | psum
    kind: str          # read | write
    payload_bytes: int
    mask_bytes: int = 0

    @property
    def total_bytes(self) -> int:
        return self.payload_bytes + self.mask_bytes


@dataclass
class WorkloadPlan:
    work: LayerWork
    tile_extents: dict
    tiles: list
    dma: list                      # Transfer list
    dense_macs: int
    tile_dense_macs: list

    @property
    def dma_bytes(self) -> int:
        return sum(t.total_bytes for t in self.dma)


@dataclass
class LayerCost:
    name: str
    compute_cycles: int
    fill_cycles: int
    memory_cycles: int
    total_cycles: int
    dense_macs: int
    aligned_macs: int
    dma_bytes: int
    energy_pj: dict
    bottleneck: str


@dataclass
class SimReport:
    network: str
    mode: str
    density_source: str
    layers: list
    total_cycles: int
    latency_s: float
    energy_pj: dict
    total_energy_pj: float
    average_power_w: float
    utilization: float
    peak_macs_per_cycle: int
    clock_hz: float
    saturations: int = 0


class PlanError(ValueError):
    pass


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

def _bits(cfg: AcceleratorConfig) -> int:
    return cfg.qformat.width


def _compressed_bytes(elements: int, density: float, bits: int) -> tuple[int, int]:
    payload = math.ceil(elements * density * bits / 8)
    mask = math.ceil(elements / 8)
    return payload, mask


def _patch_extent(lo: int, hi: int, stride: int, kernel: int, limit: int) -> int:
    # input rows touched by output rows [lo, hi)
    return min(limit, (hi - 1) * stride + kernel) - lo * stride


def plan_layer(work: LayerWork, cfg: AcceleratorConfig) -> WorkloadPlan:
    """Tile the layer against the buffers and lay out its DMA traffic."""
    bits = _bits(cfg)
    if not work.is_mac:
        dma = []
        if work.in_elements:
            pay, mask = _compressed_bytes(work.in_elements, 1.0, bits)
            dma.append(Transfer("input", "read", pay, mask))
        if work.out_elements:
            pay, mask = _compressed_bytes(work.out_elements, 1.0, bits)
            dma.append(Transfer("output", "write", pay, mask))
        return WorkloadPlan(work, {}, [], dma, 0, [])

    wide_bits = 2 * bits
    ph = work.h  # already the padded extent by the time work is built
    pw = work.w
    t = {"n": work.n, "c": work.c, "p": work.p, "q": work.q, "k": work.k}
    shrink_order = ("k", "q", "p", "c", "n")  # reverse loop-order priority

    def fits() -> bool:
        ih = (t["p"] - 1) * work.u + work.r
        iw = (t["q"] - 1) * work.v + work.s
        weight_bits = t["k"] * t["c"] * work.r * work.s * bits
        input_bits = t["n"] * t["c"] * ih * iw * bits
        output_bits = t["n"] * t["k"] * t["p"] * t["q"] * wide_bits
        mask_bits = (t["n"] * t["c"] * ih * iw
                     + t["k"] * t["c"] * work.r * work.s
                     + t["n"] * t["k"] * t["p"] * t["q"])
        return (weight_bits <= cfg.weight_buffer_bytes * 8
                and input_bits + output_bits <= cfg.activation_buffer_bytes * 8
                and mask_bits <= cfg.mask_buffer_bytes * 8)

    while not fits():
        for dim in shrink_order:
            if t[dim] > 1:
                t[dim] = (t[dim] + 1) // 2
                break
        else:
            raise PlanError(
                f"layer {work.name}: a single minimum tile exceeds the buffers")

    def ranges(total, step):
        return [(lo, min(lo + step, total)) for lo in range(0, total, step)]

    tiles = []
    tile_macs = []
    # documented nest order: n -> (r,s whole) -> c -> (p,q) -> k
    for n0, n1 in ranges(work.n, t["n"]):
        for c0, c1 in ranges(work.c, t["c"]):
            for p0, p1 in ranges(work.p, t["p"]):
                for q0, q1 in ranges(work.q, t["q"]):
                    for k0, k1 in ranges(work.k, t["k"]):
                        tile = Tile((n0, n1), (c0, c1), (p0, p1), (q0, q1), (k0, k1))
                        tiles.append(tile)
                        tile_macs.append(
                            (n1 - n0) * (k1 - k0) * (c1 - c0)
                            * work.r * work.s * (p1 - p0) * (q1 - q0))
    plan = WorkloadPlan(work, dict(t), tiles, [], work.dense_macs, tile_macs)
    plan.dma = _plan_dma(plan, cfg, 1.0, 1.0, 1.0)  # dense baseline transfer list
    return plan


def _plan_dma(plan: WorkloadPlan, cfg: AcceleratorConfig, act_density: float,
              wt_density: float, out_density: float) -> list:
    """Traffic per the documented reuse model; densities scale payloads."""
    work = plan.work
    bits = _bits(cfg)
    dma = []
    if not work.is_mac:
        for tr in plan.dma:
            # rescale the placeholder dense transfers
            elements = work.in_elements if tr.tensor == "input" else work.out_elements
            d = act_density if tr.tensor == "input" else out_density
            pay, mask = _compressed_bytes(elements, d, bits)
            dma.append(Transfer(tr.tensor, tr.kind, pay, mask))
        return dma

    t = plan.tile_extents
    tc = math.ceil(work.c / t["c"])
    tn = math.ceil(work.n / t["n"])
    tpq = math.ceil(work.p / t["p"]) * math.ceil(work.q / t["q"])

    # weights: resident once if they fit, else streamed per (n, pq) sweep
    w_elements = work.k * work.c * work.r * work.s
    w_pay, w_mask = _compressed_bytes(w_elements, wt_density, bits)
    sweeps = 1 if (w_pay + w_mask) <= cfg.weight_buffer_bytes else tn * tpq
    for _ in range(sweeps):
        dma.append(Transfer("weight", "read", w_pay, w_mask))

    # inputs: one patch per (n, c, pq) tile, halo included
    for tile in plan.tiles:
        if tile.k != (0, min(t["k"], work.k)):  # count each patch once (k loop reuses it)
            continue
        ih = _patch_extent(tile.p[0], tile.p[1], work.u, work.r, work.h)
        iw = _patch_extent(tile.q[0], tile.q[1], work.v, work.s, work.w)
        elements = tile.extent("n") * tile.extent("c") * ih * iw
        pay, mask = _compressed_bytes(elements, act_density, bits)
        dma.append(Transfer("input", "read", pay, mask))

    # outputs: final compressed write once; extra channel tiles spill and
    # reload the wide partial sums
    out_elements = work.n * work.k * work.p * work.q
    o_pay, o_mask = _compressed_bytes(out_elements, out_density, bits)
    psum_bytes = math.ceil(out_elements * 2 * bits / 8)
    for _ in range(tc - 1):
        dma.append(Transfer("psum", "write", psum_bytes))
        dma.append(Transfer("psum", "read", psum_bytes))
    dma.append(Transfer("output", "write", o_pay, o_mask))
    return dma


# ---------------------------------------------------------------------------
# cost estimation
# ---------------------------------------------------------------------------

class _AddressSpace:
    """Bump allocator handing out row-aligned regions of the memory space."""

    def __init__(self, cfg: MemoryConfig):
        self.cfg = cfg
        self.cursor = 0

    def region(self, nbytes: int) -> tuple[int, int]:
        rows = max(1, math.ceil(nbytes / self.cfg.row_bytes))
        base = self.cursor
        self.cursor = (self.cursor + rows) % (self.cfg.n_rows // 2)
        return base, rows


def _replay_dma(dma, mem: MemoryModel, space: _AddressSpace, start_ns: float) -> float:
    """Issue the transfer list as row requests; returns the busy span in ns."""
    cfg = mem.cfg
    regions = {}
    end = start_ns
    for tr in dma:
        if tr.total_bytes <= 0:
            continue
        key = tr.tensor
        if key not in regions:
            regions[key] = space.region(tr.total_bytes)
        base, rows = regions[key]
        need = max(1, math.ceil(tr.total_bytes / cfg.row_bytes))
        if need > rows:
            regions[key] = space.region(tr.total_bytes)
            base, rows = regions[key]
        req = MemRequest("read" if tr.kind == "read" else "write",
                         base * cfg.row_bytes, need * cfg.row_bytes, start_ns)
        end = max(end, mem.access(req))
    return end - start_ns


def estimate_layer(plan: WorkloadPlan, cfg: AcceleratorConfig, mem: MemoryModel,
                   space: _AddressSpace, start_ns: float,
                   act_density: float = 0.5, wt_density: float = 0.5,
                   out_density: float | None = None,
                   aligned_macs: int | None = None) -> LayerCost:
    """Cycle and energy cost of one planned layer.

    `aligned_macs` (measured mode) pins the exact MAC count; otherwise the
    independent-mask expectation act_density * wt_density is used.
    """
    work = plan.work
    out_density = act_density if out_density is None else out_density
    if work.is_mac:
        if aligned_macs is None:
            ratio = act_density * wt_density
            aligned = int(round(work.dense_macs * ratio))
        else:
            aligned = aligned_macs
            ratio = aligned / work.dense_macs if work.dense_macs else 0.0
        compute = sum(math.ceil(m * ratio / cfg.peak_macs_per_cycle)
                      for m in plan.tile_dense_macs)
        fill = len(plan.tiles) * cfg.mask_tile
        scan_bits = 2 * work.dense_macs
        rounds = work.out_elements
        elem_energy = 0.0
    else:
        aligned = 0
        compute = math.ceil(max(work.in_elements, work.out_elements)
                            / cfg.elem_ops_per_cycle)
        fill = 0
        scan_bits = 0
        rounds = 0
        elem_energy = work.out_elements * cfg.e_elem_pj

    dma = _plan_dma(plan, cfg, act_density, wt_density, out_density)
    before = mem.energy_pj(start_ns)
    mem_ns = _replay_dma(dma, mem, space, start_ns)
    after = mem.energy_pj(start_ns + mem_ns)
    memory_cycles = math.ceil(mem_ns * cfg.clock_hz / 1e9)

    total = max(compute, memory_cycles) + fill

    wbuf = sum(t.payload_bytes for t in dma if t.tensor == "weight")
    abuf = sum(t.payload_bytes for t in dma if t.tensor in ("input", "output", "psum"))
    mbuf = sum(t.mask_bytes for t in dma)
    energy = {
        "mac": aligned * cfg.e_mac_pj,
        "rounding": rounds * cfg.e_round_pj,
        "sparsity_scan": scan_bits * cfg.e_scan_per_bit_pj,
        "elementwise": elem_energy,
        "weight_buffer": wbuf * cfg.e_wbuf_pj_per_byte,
        "activation_buffer": abuf * cfg.e_abuf_pj_per_byte,
        "mask_buffer": mbuf * cfg.e_mbuf_pj_per_byte,
        "leakage": total * cfg.e_leak_pj_per_cycle,
        "memory_array_read": after["array_read"] - before["array_read"],
        "memory_array_write": after["array_write"] - before["array_write"],
        "memory_bus": after["bus"] - before["bus"],
    }
    cost = LayerCost(
        name=work.name,
        compute_cycles=compute,
        fill_cycles=fill,
        memory_cycles=memory_cycles,
        total_cycles=total,
        dense_macs=work.dense_macs,
        aligned_macs=aligned,
        dma_bytes=sum(t.total_bytes for t in dma),
        energy_pj=energy,
        bottleneck="",
    )
    cost.bottleneck = classify_bottleneck(cost)
    return cost


def classify_bottleneck(cost: LayerCost) -> str:
    """Compute-bound iff MAC cycles meet or exceed DMA cycles (tie: compute)."""
    return "compute-bound" if cost.compute_cycles >= cost.memory_cycles else "memory-bound"


# ---------------------------------------------------------------------------
# whole-network simulation
# ---------------------------------------------------------------------------

def layer_work_from_graph(graph) -> list:
    """Normalize a validated NetworkGraph into LayerWork items."""
    works = []
    prev_shape = (graph.batch, *graph.input_shape)
    for i, spec in enumerate(graph.layers):
        shape = graph.shapes[i]
        name = spec.name or f"{i}:{spec.kind}"
        in_el = int(_prod(prev_shape))
        out_el = int(_prod(shape))
        if spec.kind == "conv":
            cs = graph.conv_specs[i]
            works.append(LayerWork(
                name=name, kind="conv", in_elements=in_el, out_elements=out_el,
                weight_elements=cs.k * cs.c * cs.r * cs.s,
                n=cs.n, k=cs.k, c=cs.c,
                h=cs.h + 2 * cs.pad_h, w=cs.w + 2 * cs.pad_w,
                r=cs.r, s=cs.s, u=cs.u, v=cs.v, p=cs.p, q=cs.q))
        elif spec.kind == "fc":
            fs = graph.fc_specs[i]
            works.append(LayerWork(
                name=name, kind="fc", in_elements=in_el, out_elements=out_el,
                weight_elements=fs.m * fs.n,
                n=prev_shape[0], k=fs.m, c=fs.n, h=1, w=1, p=1, q=1))
        else:
            works.append(LayerWork(name=name, kind="elem",
                                   in_elements=in_el, out_elements=out_el))
        prev_shape = shape
    return works


def _prod(t):
    out = 1
    for v in t:
        out *= v
    return out


def simulate_network(graph, cfg: AcceleratorConfig, mem_cfg: MemoryConfig,
                     mode: str = "infer", density_source: str = "assumed",
                     assumed_density: float = 0.5, measured=None,
                     saturations: int = 0) -> SimReport:
    """Full-network cost roll-up.

    Layers run sequentially on one shared memory timeline.  Training adds,
    per MAC layer, the two gradient passes (2x forward MACs) and the
    activation-retention traffic: inputs and weights are re-read and both
    gradients written back; elementwise layers cost one extra pass.
    """
    if density_source not in ("assumed", "measured"):
        raise ValueError(f"unknown density source {density_source!r}")
    if density_source == "measured" and measured is None:
        raise ValueError("measured density source needs per-layer stats")
    if not 0.0 <= assumed_density <= 1.0:
        raise ValueError("assumed density must be in [0, 1]")

    works = layer_work_from_graph(graph)
    if density_source == "measured" and len(measured) < len(works):
        # functional stats stop before the loss layer; carry the last
        # activation density through
        from .nn.layers import LayerStats

        tail = measured[-1].out_density if measured else assumed_density
        measured = list(measured) + [
            LayerStats(in_density=tail, out_density=tail)
            for _ in range(len(works) - len(measured))
        ]
    mem = MemoryModel(mem_cfg)
    space = _AddressSpace(mem_cfg)
    costs = []
    cursor_ns = 0.0
    train = mode == "train"

    for i, work in enumerate(works):
        plan = plan_layer(work, cfg)
        if density_source == "measured":
            st = measured[i]
            act_d = st.in_density
            wt_d = st.wt_density
            out_d = st.out_density
            aligned = st.aligned_macs if work.is_mac else None
        else:
            act_d = wt_d = out_d = assumed_density
            aligned = None
        cost = estimate_layer(plan, cfg, mem, space, cursor_ns,
                              act_d, wt_d, out_d, aligned)
        cursor_ns += cost.total_cycles / cfg.clock_hz * 1e9
        if train:
            bwd = _backward_cost(plan, cfg, mem, space, cursor_ns, act_d, wt_d,
                                 out_d, cost)
            cursor_ns += bwd.total_cycles / cfg.clock_hz * 1e9
            cost = _merge_costs(cost, bwd)
        costs.append(cost)

    total_cycles = sum(c.total_cycles for c in costs)
    energy = {}
    for c in costs:
        for k, v in c.energy_pj.items():
            energy[k] = energy.get(k, 0.0) + v
    final = mem.energy_pj(cursor_ns)
    energy["memory_standby"] = final["standby"]
    energy["memory_powered_down"] = final["powered_down"]
    total_energy = sum(energy.values())

    latency = total_cycles / cfg.clock_hz
    power = (total_energy * 1e-12) / latency if latency > 0 else 0.0
    total_aligned = sum(c.aligned_macs for c in costs)
    util = (total_aligned / (total_cycles * cfg.peak_macs_per_cycle)
            if total_cycles else 0.0)
    return SimReport(
        network=graph.name,
        mode=mode,
        density_source=density_source,
        layers=costs,
        total_cycles=total_cycles,
        latency_s=latency,
        energy_pj=energy,
        total_energy_pj=total_energy,
        average_power_w=power,
        utilization=util,
        peak_macs_per_cycle=cfg.peak_macs_per_cycle,
        clock_hz=cfg.clock_hz,
        saturations=saturations,
    )


def _backward_cost(plan: WorkloadPlan, cfg: AcceleratorConfig, mem: MemoryModel,
                   space: _AddressSpace, start_ns: float, act_d: float,
                   wt_d: float, out_d: float, fwd: LayerCost) -> LayerCost:
    """Gradient-pass cost: 2x forward MAC work plus retention traffic."""
    work = plan.work
    bits = _bits(cfg)
    if work.is_mac:
        compute = 2 * fwd.compute_cycles
        fill = 2 * fwd.fill_cycles
        aligned = 2 * fwd.aligned_macs
        scan_bits = 4 * work.dense_macs
        rounds = work.in_elements + work.weight_elements
        in_pay, in_mask = _compressed_bytes(work.in_elements, act_d, bits)
        w_pay, w_mask = _compressed_bytes(work.weight_elements, wt_d, bits)
        go_pay, go_mask = _compressed_bytes(work.out_elements, out_d, bits)
        dma = [
            Transfer("input", "read", in_pay, in_mask),      # retained activations
            Transfer("weight", "read", w_pay, w_mask),
            Transfer("output", "read", go_pay, go_mask),     # upstream gradient
            Transfer("input", "write", in_pay, in_mask),     # grad wrt input
            Transfer("weight", "write", w_pay, w_mask),      # grad wrt weights
        ]
    else:
        compute = fwd.compute_cycles
        fill = 0
        aligned = 0
        scan_bits = 0
        rounds = 0
        pay, mask = _compressed_bytes(work.in_elements, act_d, bits)
        dma = [Transfer("input", "read", pay, mask),
               Transfer("input", "write", pay, mask)]

    before = mem.energy_pj(start_ns)
    mem_ns = _replay_dma(dma, mem, space, start_ns)
    after = mem.energy_pj(start_ns + mem_ns)
    memory_cycles = math.ceil(mem_ns * cfg.clock_hz / 1e9)
    total = max(compute, memory_cycles) + fill
    wbuf = sum(t.payload_bytes for t in dma if t.tensor == "weight")
    abuf = sum(t.payload_bytes for t in dma if t.tensor in ("input", "output", "psum"))
    mbuf = sum(t.mask_bytes for t in dma)
    energy = {
        "mac": aligned * cfg.e_mac_pj,
        "rounding": rounds * cfg.e_round_pj,
        "sparsity_scan": scan_bits * cfg.e_scan_per_bit_pj,
        "elementwise": (0.0 if work.is_mac else work.out_elements * cfg.e_elem_pj),
        "weight_buffer": wbuf * cfg.e_wbuf_pj_per_byte,
        "activation_buffer": abuf * cfg.e_abuf_pj_per_byte,
        "mask_buffer": mbuf * cfg.e_mbuf_pj_per_byte,
        "leakage": total * cfg.e_leak_pj_per_cycle,
        "memory_array_read": after["array_read"] - before["array_read"],
        "memory_array_write": after["array_write"] - before["array_write"],
        "memory_bus": after["bus"] - before["bus"],
    }
    cost = LayerCost(
        name=work.name + ":backward", compute_cycles=compute, fill_cycles=fill,
        memory_cycles=memory_cycles, total_cycles=total,
        dense_macs=2 * work.dense_macs, aligned_macs=aligned,
        dma_bytes=sum(t.total_bytes for t in dma), energy_pj=energy, bottleneck="")
    cost.bottleneck = classify_bottleneck(cost)
    return cost


def _merge_costs(fwd: LayerCost, bwd: LayerCost) -> LayerCost:
    energy = {k: fwd.energy_pj.get(k, 0.0) + bwd.energy_pj.get(k, 0.0)
              for k in set(fwd.energy_pj) | set(bwd.energy_pj)}
    merged = LayerCost(
        name=fwd.name,
        compute_cycles=fwd.compute_cycles + bwd.compute_cycles,
        fill_cycles=fwd.fill_cycles + bwd.fill_cycles,
        memory_cycles=fwd.memory_cycles + bwd.memory_cycles,
        total_cycles=fwd.total_cycles + bwd.total_cycles,
        dense_macs=fwd.dense_macs + bwd.dense_macs,
        aligned_macs=fwd.aligned_macs + bwd.aligned_macs,
        dma_bytes=fwd.dma_bytes + bwd.dma_bytes,
        energy_pj=energy,
        bottleneck="",
    )
    merged.bottleneck = classify_bottleneck(merged)
    return merged
