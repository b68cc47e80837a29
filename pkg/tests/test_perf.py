"""Performance model tests: tiling coverage, cycle oracles, accounting."""

import math

import numpy as np
import pytest

from sparsemac.fixedpoint import QFormat, quantize_real_raw
from sparsemac.mem import MemoryConfig, MemoryModel
from sparsemac.nn import LayerSpec, NetworkGraph, init_state, measure
from sparsemac.perf import (
    AcceleratorConfig,
    LayerWork,
    PlanError,
    _AddressSpace,
    classify_bottleneck,
    estimate_layer,
    layer_work_from_graph,
    plan_layer,
    simulate_network,
)
from sparsemac.sparse import MaskedTensor

PEAK = 64 * 72 * 16  # Table-1 lane product


def conv_work(name="c", n=32, k=64, c=64, hw=14, rs=3, pad=1):
    p = hw + 2 * pad - rs + 1
    return LayerWork(name=name, kind="conv",
                     in_elements=n * c * hw * hw, out_elements=n * k * p * p,
                     weight_elements=k * c * rs * rs,
                     n=n, k=k, c=c, h=hw + 2 * pad, w=hw + 2 * pad,
                     r=rs, s=rs, p=p, q=p)


def fc_work(name="f", batch=32, m=4096, n_in=8192):
    return LayerWork(name=name, kind="fc",
                     in_elements=batch * n_in, out_elements=batch * m,
                     weight_elements=m * n_in,
                     n=batch, k=m, c=n_in, h=1, w=1, p=1, q=1)


def fresh_mem(cfg=None):
    mc = cfg or MemoryConfig()
    return MemoryModel(mc), _AddressSpace(mc)


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

def test_small_layer_is_single_tile():
    cfg = AcceleratorConfig()
    plan = plan_layer(conv_work(n=2, k=8, c=4, hw=8), cfg)
    assert len(plan.tiles) == 1
    assert sum(plan.tile_dense_macs) == plan.dense_macs


def test_oversized_fc_weights_get_multiple_tiles():
    cfg = AcceleratorConfig()
    # 48 MiB of weights against a 24 MiB buffer: at least 2 weight tiles
    m = 4096
    n_in = (48 << 20) // (math.ceil(cfg.qformat.width / 8) * m) + 16
    w = fc_work(m=m, n_in=n_in)
    assert w.weight_elements * cfg.qformat.width / 8 > 48 << 20 - 1
    plan = plan_layer(w, cfg)
    k_tiles = math.ceil(w.k / plan.tile_extents["k"])
    c_tiles = math.ceil(w.c / plan.tile_extents["c"])
    assert k_tiles * c_tiles >= 2
    assert sum(plan.tile_dense_macs) == plan.dense_macs


def test_work_conservation_across_tilings():
    cfg = AcceleratorConfig()
    for w in (conv_work(), conv_work(k=512, c=512, hw=28), fc_work()):
        plan = plan_layer(w, cfg)
        assert sum(plan.tile_dense_macs) == w.dense_macs
        assert plan.dense_macs == w.n * w.k * w.c * w.r * w.s * w.p * w.q


def test_tiles_respect_buffer_capacities():
    cfg = AcceleratorConfig()
    plan = plan_layer(conv_work(k=512, c=512, hw=28), cfg)
    t = plan.tile_extents
    bits = cfg.qformat.width
    ih = (t["p"] - 1) + 3
    iw = (t["q"] - 1) + 3
    assert t["k"] * t["c"] * 9 * bits <= cfg.weight_buffer_bytes * 8
    assert (t["n"] * t["c"] * ih * iw * bits
            + t["n"] * t["k"] * t["p"] * t["q"] * 2 * bits) <= cfg.activation_buffer_bytes * 8


def test_plan_error_when_nothing_fits():
    cfg = AcceleratorConfig(weight_buffer_bytes=4)
    with pytest.raises(PlanError):
        plan_layer(conv_work(), cfg)


def test_dma_total_equals_slice_sum_oracle():
    # VGG-style conv: recompute the expected byte total from the tile list
    cfg = AcceleratorConfig()
    w = conv_work(n=32, k=128, c=64, hw=32, rs=3, pad=1)
    plan = plan_layer(w, cfg)
    bits = cfg.qformat.width
    t = plan.tile_extents

    def comp(elements, density=1.0):
        return math.ceil(elements * density * bits / 8) + math.ceil(elements / 8)

    expect = 0
    w_bytes = comp(w.weight_elements)
    sweeps = 1 if w_bytes <= cfg.weight_buffer_bytes else \
        math.ceil(w.n / t["n"]) * math.ceil(w.p / t["p"]) * math.ceil(w.q / t["q"])
    expect += sweeps * w_bytes
    for tile in plan.tiles:
        if tile.k[0] != 0:
            continue
        ih = min(w.h, (tile.p[1] - 1) * w.u + w.r) - tile.p[0] * w.u
        iw = min(w.w, (tile.q[1] - 1) * w.v + w.s) - tile.q[0] * w.v
        expect += comp(tile.extent("n") * tile.extent("c") * ih * iw)
    tc = math.ceil(w.c / t["c"])
    expect += (tc - 1) * 2 * math.ceil(w.out_elements * 2 * bits / 8)
    expect += comp(w.out_elements)
    assert plan.dma_bytes == expect


# ---------------------------------------------------------------------------
# cycle oracles
# ---------------------------------------------------------------------------

def test_dense_compute_cycles_closed_form():
    cfg = AcceleratorConfig()
    w = conv_work(n=2, k=8, c=4, hw=8)
    plan = plan_layer(w, cfg)
    mem, space = fresh_mem()
    cost = estimate_layer(plan, cfg, mem, space, 0.0, 1.0, 1.0, 1.0)
    assert cost.compute_cycles == math.ceil(w.dense_macs / PEAK)
    assert cost.aligned_macs == w.dense_macs
    assert cost.fill_cycles == len(plan.tiles) * cfg.mask_tile


def test_zero_weight_density_means_zero_mac_cycles():
    cfg = AcceleratorConfig()
    plan = plan_layer(conv_work(n=2, k=8, c=4, hw=8), cfg)
    mem, space = fresh_mem()
    cost = estimate_layer(plan, cfg, mem, space, 0.0, act_density=1.0, wt_density=0.0)
    assert cost.compute_cycles == 0
    assert cost.aligned_macs == 0
    assert cost.dma_bytes > 0  # masks and metadata still move


def test_independent_half_density_masks_give_quarter_macs():
    # measured route: random 50%/50% tensors, aligned ratio ~= 25%
    rng = np.random.default_rng(30)
    fmt = QFormat(4, 16)
    g = NetworkGraph("one-fc", 64, (1, 1, 256),
                     [LayerSpec(kind="reshape"), LayerSpec(kind="fc", out_features=128)])
    state = init_state(g, fmt, 0.1, 0)
    w_real = rng.uniform(-1, 1, (128, 256))
    w_real[rng.random(w_real.shape) >= 0.5] = 0.0
    raw, _ = quantize_real_raw(w_real, fmt, "nearest")
    state.params[1]["weight"] = MaskedTensor.from_dense(raw, fmt)
    x_real = rng.uniform(0.1, 1, (64, 1, 1, 256))
    x_real[rng.random(x_real.shape) >= 0.5] = 0.0
    xraw, _ = quantize_real_raw(x_real, fmt, "nearest")
    stats = measure(g, state, MaskedTensor.from_dense(xraw, fmt))
    fc = stats[1]
    ratio = fc.aligned_macs / fc.dense_macs
    assert abs(ratio - 0.25) <= 0.05


def test_measured_mode_pins_exact_mac_count():
    fmt = QFormat(4, 16)
    g = NetworkGraph("one-fc", 8, (1, 1, 64),
                     [LayerSpec(kind="reshape"), LayerSpec(kind="fc", out_features=32)])
    state = init_state(g, fmt, 0.1, 3)
    rng = np.random.default_rng(31)
    xraw, _ = quantize_real_raw(rng.uniform(-1, 1, (8, 1, 1, 64)), fmt, "nearest")
    stats = measure(g, state, MaskedTensor.from_dense(xraw, fmt))
    report = simulate_network(g, AcceleratorConfig(), MemoryConfig(),
                              density_source="measured", measured=stats)
    fc_cost = report.layers[1]
    assert fc_cost.aligned_macs == stats[1].aligned_macs


# ---------------------------------------------------------------------------
# bottleneck classification
# ---------------------------------------------------------------------------

def test_big_conv_small_weights_is_compute_bound():
    cfg = AcceleratorConfig()
    # 3x3x256x256 at 28x28: heavy MAC work against modest traffic
    plan = plan_layer(conv_work(n=32, k=256, c=256, hw=28), cfg)
    mem, space = fresh_mem()
    cost = estimate_layer(plan, cfg, mem, space, 0.0, 1.0, 1.0, 1.0)
    assert cost.bottleneck == "compute-bound"


def test_large_fc_at_batch_1_is_memory_bound():
    cfg = AcceleratorConfig()
    plan = plan_layer(fc_work(batch=1), cfg)
    mem, space = fresh_mem()
    cost = estimate_layer(plan, cfg, mem, space, 0.0, 0.5, 0.5)
    assert cost.bottleneck == "memory-bound"


def test_tie_classifies_compute_bound():
    from sparsemac.perf import LayerCost

    cost = LayerCost("t", 100, 0, 100, 100, 0, 0, 0, {}, "")
    assert classify_bottleneck(cost) == "compute-bound"


# ---------------------------------------------------------------------------
# report identities and monotonicity
# ---------------------------------------------------------------------------

def small_graph(batch=8):
    return NetworkGraph("small", batch, (1, 8, 8), [
        LayerSpec(kind="conv", out_channels=8, kernel=(3, 3), pad=(1, 1)),
        LayerSpec(kind="relu"),
        LayerSpec(kind="reshape"),
        LayerSpec(kind="fc", out_features=10),
    ])


def test_energy_closure_and_latency_power_identities():
    report = simulate_network(small_graph(), AcceleratorConfig(), MemoryConfig(),
                              mode="infer", assumed_density=0.5)
    assert report.total_energy_pj == pytest.approx(sum(report.energy_pj.values()), rel=1e-12)
    for cost in report.layers:
        assert cost.total_cycles == max(cost.compute_cycles, cost.memory_cycles) + cost.fill_cycles
    assert report.latency_s == pytest.approx(report.total_cycles / report.clock_hz)
    assert report.average_power_w == pytest.approx(
        report.total_energy_pj * 1e-12 / report.latency_s)


def test_empty_graph_zero_report():
    g = NetworkGraph("empty", 1, (1, 2, 2), [])
    report = simulate_network(g, AcceleratorConfig(), MemoryConfig())
    assert report.total_cycles == 0
    assert report.total_energy_pj == pytest.approx(sum(report.energy_pj.values()))


def test_density_monotone_in_compute_cycles():
    cfg = AcceleratorConfig()
    w = conv_work(n=8, k=64, c=64, hw=14)
    plan = plan_layer(w, cfg)
    prev = -1
    for d in (0.0, 0.25, 0.5, 0.75, 1.0):
        mem, space = fresh_mem()
        cost = estimate_layer(plan, cfg, mem, space, 0.0, d, d)
        assert cost.compute_cycles >= prev
        prev = cost.compute_cycles


def test_bigger_buffers_never_increase_dma_bytes():
    w = conv_work(n=32, k=256, c=256, hw=28)
    sizes = [(6 << 20, 3 << 20), (12 << 20, 6 << 20), (24 << 20, 12 << 20), (96 << 20, 48 << 20)]
    prev = None
    for wb, ab in sizes:
        cfg = AcceleratorConfig(weight_buffer_bytes=wb, activation_buffer_bytes=ab)
        plan = plan_layer(w, cfg)
        total = plan.dma_bytes
        if prev is not None:
            assert total <= prev
        prev = total


def test_train_mode_adds_backward_work():
    g = small_graph()
    infer = simulate_network(g, AcceleratorConfig(), MemoryConfig(), mode="infer")
    train = simulate_network(g, AcceleratorConfig(), MemoryConfig(), mode="train")
    for fi, ti in zip(infer.layers, train.layers):
        assert ti.compute_cycles >= fi.compute_cycles
        assert ti.dma_bytes > fi.dma_bytes
    conv_f, conv_t = infer.layers[0], train.layers[0]
    assert conv_t.dense_macs == 3 * conv_f.dense_macs  # fwd + 2x backward


def test_clock_doubling_identities_on_compute_bound_fixture():
    g = NetworkGraph("fat-conv", 32, (512, 28, 28),
                     [LayerSpec(kind="conv", out_channels=512, kernel=(3, 3), pad=(1, 1))])
    mem_cfg = MemoryConfig(p_standby_mw=0.0, p_powered_down_mw=0.0)
    base = simulate_network(g, AcceleratorConfig(), mem_cfg, assumed_density=1.0)
    fast = simulate_network(g, AcceleratorConfig(clock_hz=1400e6), mem_cfg, assumed_density=1.0)
    assert base.layers[0].bottleneck == "compute-bound"
    assert fast.layers[0].bottleneck == "compute-bound"
    assert base.total_cycles == fast.total_cycles
    assert fast.latency_s == pytest.approx(base.latency_s / 2)
    assert fast.total_energy_pj == pytest.approx(base.total_energy_pj)
    assert fast.average_power_w == pytest.approx(2 * base.average_power_w)
