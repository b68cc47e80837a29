"""Quantized layer semantics tests.

Oracles: a direct seven-loop convolution over Python ints for the forward
sum, central finite differences of the float64 shadow for every backward,
and the sparse-module alignment pipeline for bit-identity of the MAC path.
"""

import copy
import math

import numpy as np
import pytest

from sparsemac.fixedpoint import Lfsr, QFormat, derive_lfsr_state, mix64, quantize_real_raw
from sparsemac.nn import layers as L
from sparsemac.nn import reference as R
from sparsemac.nn.graph import (
    GraphError,
    LayerSpec,
    NetworkGraph,
    init_state,
    forward,
    predict,
    train_step,
)
from sparsemac.sparse import MaskedTensor, align, compress, sparse_dot

Q416 = QFormat(4, 16)
EPS = Q416.eps


def q(values, fmt=Q416):
    raw, _ = quantize_real_raw(np.asarray(values, dtype=np.float64), fmt, "nearest")
    return MaskedTensor.from_dense(raw.reshape(np.asarray(values).shape), fmt)


def loopnest_conv_oracle(x_raw, w_raw, spec, fmt, mode, seed):
    """Eq.-style seven-loop sum with Python ints, then the same rounding."""
    n_, k_, c_ = spec.n, spec.k, spec.c
    out = np.zeros((n_, k_, spec.p, spec.q), dtype=np.int64)
    xp = np.pad(x_raw, ((0, 0), (0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))
    flat = 0
    for n in range(n_):
        for k in range(k_):
            for p in range(spec.p):
                for qq in range(spec.q):
                    total = 0
                    for c in range(c_):
                        for r in range(spec.r):
                            for s in range(spec.s):
                                total += int(xp[n, c, p * spec.u + r, qq * spec.v + s]) * int(w_raw[k, c, r, s])
                    total = max(fmt.wide_raw_min, min(fmt.wide_raw_max, total))
                    floor = total >> fmt.fl
                    residue = total & ((1 << fmt.fl) - 1)
                    if mode == "nearest":
                        up = residue >= (1 << (fmt.fl - 1))
                    else:
                        u, _ = Lfsr(derive_lfsr_state(seed, flat)).next_bits(fmt.fl)
                        up = u < residue
                    v = floor + (1 if up else 0)
                    out[n, k, p, qq] = max(fmt.raw_min, min(fmt.raw_max, v))
                    flat += 1
    return out


def fd_check(got_real, fd_real, eps=EPS):
    tol = np.maximum(1e-3 * np.abs(fd_real), 2 * eps)
    assert np.all(np.abs(got_real - fd_real) <= tol), \
        f"max err {np.abs(got_real - fd_real).max()} vs tol {tol.min()}"


# ---------------------------------------------------------------------------
# conv forward
# ---------------------------------------------------------------------------

def test_conv_1x1_identity_case():
    spec = L.ConvSpec(n=1, k=1, c=1, h=1, w=1, r=1, s=1)
    x = q(np.array([[[[2.0]]]]))
    w = q(np.array([[[[3.0]]]]))
    y, stats = L.conv_forward(x, w, spec, "nearest", 0)
    assert y.to_real()[0, 0, 0, 0] == 6.0
    assert stats.dense_macs == 1 and stats.aligned_macs == 1


def test_conv_3x3_input_2x2_filter_matches_loopnest():
    rng = np.random.default_rng(10)
    spec = L.ConvSpec(n=1, k=1, c=1, h=3, w=3, r=2, s=2)
    x_raw = rng.integers(-2000, 2000, size=(1, 1, 3, 3), dtype=np.int64)
    w_raw = rng.integers(-2000, 2000, size=(1, 1, 2, 2), dtype=np.int64)
    x = MaskedTensor.from_dense(x_raw, Q416)
    w = MaskedTensor.from_dense(w_raw, Q416)
    y, _ = L.conv_forward(x, w, spec, "nearest", 0)
    want = loopnest_conv_oracle(x_raw, w_raw, spec, Q416, "nearest", 0)
    assert np.array_equal(y.to_dense(), want)
    assert y.shape == (1, 1, 2, 2)


def test_conv_random_cases_match_loopnest_both_modes():
    rng = np.random.default_rng(11)
    for trial in range(6):
        spec = L.ConvSpec(
            n=int(rng.integers(1, 3)), k=int(rng.integers(1, 4)), c=int(rng.integers(1, 3)),
            h=5, w=5, r=3, s=3, u=1, v=1,
            pad_h=int(rng.integers(0, 2)), pad_w=int(rng.integers(0, 2)),
        )
        x_raw = rng.integers(-3000, 3000, size=(spec.n, spec.c, 5, 5), dtype=np.int64)
        x_raw[rng.random(x_raw.shape) < 0.5] = 0
        w_raw = rng.integers(-3000, 3000, size=(spec.k, spec.c, 3, 3), dtype=np.int64)
        w_raw[rng.random(w_raw.shape) < 0.5] = 0
        mode = "stochastic" if trial % 2 else "nearest"
        seed = 100 + trial
        y, _ = L.conv_forward(MaskedTensor.from_dense(x_raw, Q416),
                              MaskedTensor.from_dense(w_raw, Q416), spec, mode, seed)
        want = loopnest_conv_oracle(x_raw, w_raw, spec, Q416, mode, seed)
        assert np.array_equal(y.to_dense(), want)


def test_conv_shape_formula_224():
    spec = L.ConvSpec(n=1, k=1, c=1, h=224, w=224, r=7, s=7, u=2, v=2, pad_h=3, pad_w=3)
    assert spec.p == 112 and spec.q == 112


def test_conv_rejects_invalid_output_size():
    with pytest.raises(ValueError):
        L.ConvSpec(n=1, k=1, c=1, h=2, w=2, r=3, s=3)
    # floor sizing: a 5x5 input with 2x2 kernel at stride 2 is fine (P=2)
    assert L.ConvSpec(n=1, k=1, c=1, h=5, w=5, r=2, s=2, u=2, v=2).p == 2


def test_conv_engine_bit_identical_to_sparse_pipeline():
    # per-output-element composition of compress/align/sparse_dot must equal
    # the vectorized engine exactly, stochastic draws included
    rng = np.random.default_rng(12)
    spec = L.ConvSpec(n=2, k=3, c=2, h=4, w=4, r=3, s=3, pad_h=1, pad_w=1)
    x_raw = rng.integers(-5000, 5000, size=(2, 2, 4, 4), dtype=np.int64)
    x_raw[rng.random(x_raw.shape) < 0.5] = 0
    w_raw = rng.integers(-5000, 5000, size=(3, 2, 3, 3), dtype=np.int64)
    w_raw[rng.random(w_raw.shape) < 0.4] = 0
    seed = 77
    y, stats = L.conv_forward(MaskedTensor.from_dense(x_raw, Q416),
                              MaskedTensor.from_dense(w_raw, Q416), spec, "stochastic", seed)
    xp = np.pad(x_raw, ((0, 0), (0, 0), (1, 1), (1, 1)))
    w2 = w_raw.reshape(3, -1)
    flat = 0
    aligned_total = 0
    for n in range(spec.n):
        for k in range(spec.k):
            for p in range(spec.p):
                for qq in range(spec.q):
                    patch = xp[n, :, p : p + 3, qq : qq + 3].reshape(-1)
                    pair = align(compress(patch, Q416), compress(w2[k], Q416))
                    aligned_total += pair.activations.size
                    got, _ = sparse_dot(pair, "stochastic", Lfsr(derive_lfsr_state(seed, flat)))
                    assert got.raw == y.to_dense()[n, k, p, qq]
                    flat += 1
    assert aligned_total == stats.aligned_macs


# ---------------------------------------------------------------------------
# conv backward
# ---------------------------------------------------------------------------

def test_conv_backward_zero_grad_gives_zeros():
    spec = L.ConvSpec(n=1, k=2, c=1, h=4, w=4, r=3, s=3)
    x = q(np.random.default_rng(13).uniform(-1, 1, (1, 1, 4, 4)))
    w = q(np.random.default_rng(14).uniform(-1, 1, (2, 1, 3, 3)))
    go = MaskedTensor.from_dense(np.zeros((1, 2, 2, 2), dtype=np.int64), Q416)
    gx, gw, _ = L.conv_backward(go, x, w, spec, "nearest", 0)
    assert gx.nnz == 0 and gw.nnz == 0


def test_conv_backward_1x1_scalar_chain_rule():
    spec = L.ConvSpec(n=1, k=1, c=1, h=1, w=1, r=1, s=1)
    x = q(np.array([[[[0.5]]]]))
    w = q(np.array([[[[0.25]]]]))
    go = q(np.array([[[[1.5]]]]))
    gx, gw, _ = L.conv_backward(go, x, w, spec, "nearest", 0)
    assert gw.to_real()[0, 0, 0, 0] == 1.5 * 0.5
    assert gx.to_real()[0, 0, 0, 0] == 1.5 * 0.25


def test_conv_backward_matches_finite_differences():
    rng = np.random.default_rng(15)
    spec = L.ConvSpec(n=2, k=2, c=2, h=5, w=5, r=3, s=3, pad_h=1, pad_w=1)
    x = q(rng.uniform(-0.5, 0.5, (2, 2, 5, 5)))
    w = q(rng.uniform(-0.5, 0.5, (2, 2, 3, 3)))
    go = q(rng.uniform(-0.01, 0.01, (2, 2, 5, 5)))
    gx, gw, _ = L.conv_backward(go, x, w, spec, "nearest", 0)

    xr, wr, gor = x.to_real(), w.to_real(), go.to_real()
    h = 2 * EPS

    def loss_of_x(xv):
        return float((R.conv_f(xv, wr, spec) * gor).sum())

    fd = np.zeros_like(xr)
    it = np.nditer(xr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up, dn = xr.copy(), xr.copy()
        up[idx] += h
        dn[idx] -= h
        fd[idx] = (loss_of_x(up) - loss_of_x(dn)) / (2 * h)
    fd_check(gx.to_real(), fd)

    def loss_of_w(wv):
        return float((R.conv_f(xr, wv, spec) * gor).sum())

    fdw = np.zeros_like(wr)
    it = np.nditer(wr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up, dn = wr.copy(), wr.copy()
        up[idx] += h
        dn[idx] -= h
        fdw[idx] = (loss_of_w(up) - loss_of_w(dn)) / (2 * h)
    fd_check(gw.to_real(), fdw)


# ---------------------------------------------------------------------------
# fc
# ---------------------------------------------------------------------------

def test_fc_identity_weights():
    spec = L.FcSpec(m=4, n=4, bias=False)
    x = q(np.array([[0.5, -1.0, 2.0, 0.0]]))
    w = q(np.eye(4))
    y, _ = L.fc_forward(x, w, None, spec, "nearest", 0)
    assert np.array_equal(y.to_dense(), x.to_dense())


def test_fc_dense_matvec_oracle():
    # wider integer range so the textbook example value 16 is in range
    fmt = QFormat(8, 8)
    spec = L.FcSpec(m=1, n=2, bias=True)
    x = q(np.array([[3.0, 4.0]]), fmt)
    w = q(np.array([[1.0, 2.0]]), fmt)
    b = q(np.array([5.0]), fmt)
    y, _ = L.fc_forward(x, w, b, spec, "nearest", 0)
    assert y.to_real()[0, 0] == 16.0


def test_fc_zero_input_gives_bias():
    spec = L.FcSpec(m=3, n=5, bias=True)
    x = MaskedTensor.from_dense(np.zeros((2, 5), dtype=np.int64), Q416)
    w = q(np.random.default_rng(16).uniform(-1, 1, (3, 5)))
    b = q(np.array([0.25, -0.5, 1.0]))
    y, _ = L.fc_forward(x, w, b, spec, "nearest", 0)
    assert np.array_equal(y.to_dense(), np.tile(b.to_dense(), (2, 1)))


def test_fc_backward_trivial_and_fd():
    spec = L.FcSpec(m=1, n=1, bias=True)
    x = q(np.array([[0.5]]))
    w = q(np.array([[0.75]]))
    go = q(np.array([[0.125]]))
    gx, gw, gb, _ = L.fc_backward(go, x, w, spec, "nearest", 0)
    assert gw.to_real()[0, 0] == 0.125 * 0.5
    assert gx.to_real()[0, 0] == 0.125 * 0.75
    assert gb.to_real()[0] == 0.125

    rng = np.random.default_rng(17)
    spec = L.FcSpec(m=3, n=6, bias=True)
    x = q(rng.uniform(-0.5, 0.5, (2, 6)))
    w = q(rng.uniform(-0.5, 0.5, (3, 6)))
    go = q(rng.uniform(-0.02, 0.02, (2, 3)))
    gx, gw, gb, _ = L.fc_backward(go, x, w, spec, "nearest", 0)
    xr, wr, gor = x.to_real(), w.to_real(), go.to_real()
    fd_check(gx.to_real(), gor @ wr)
    fd_check(gw.to_real(), gor.T @ xr)
    fd_check(gb.to_real(), gor.sum(axis=0))


def test_fc_zero_grad():
    spec = L.FcSpec(m=2, n=2, bias=True)
    x = q(np.array([[1.0, 2.0]]))
    w = q(np.eye(2))
    go = MaskedTensor.from_dense(np.zeros((1, 2), dtype=np.int64), Q416)
    gx, gw, gb, _ = L.fc_backward(go, x, w, spec, "nearest", 0)
    assert gx.nnz == 0 and gw.nnz == 0 and gb.nnz == 0


# ---------------------------------------------------------------------------
# relu / pool
# ---------------------------------------------------------------------------

def test_relu_clamps_and_clears_mask():
    x = q(np.array([[-1.0, 0.0, 0.5, -0.25]]))
    y, _ = L.relu(x)
    assert np.array_equal(y.to_dense(), [[0, 0, 32768, 0]])
    assert y.nnz == 1  # mask bits cleared where clamped


def test_relu_never_increases_density():
    rng = np.random.default_rng(18)
    for _ in range(20):
        x = q(rng.uniform(-1, 1, (2, 3, 4, 4)))
        y, _ = L.relu(x)
        assert y.density <= x.density
        assert np.array_equal(y.to_dense(), np.maximum(x.to_dense(), 0))


def test_relu_backward_gates_by_input_sign():
    x = q(np.array([[-1.0, 2.0, 0.0, 3.0]]))
    g = q(np.array([[0.5, 0.5, 0.5, 0.5]]))
    gx, _ = L.relu_backward(g, x)
    assert np.array_equal(gx.to_real(), [[0, 0.5, 0, 0.5]])


def test_pool_max_2x2():
    x = q(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    y, _ = L.pool_forward(x, "max", (2, 2), (2, 2), "nearest", 0)
    assert y.to_real()[0, 0, 0, 0] == 4.0


def test_pool_mean_of_identical_values():
    x = q(np.full((1, 1, 4, 4), 0.75))
    y, _ = L.pool_forward(x, "mean", (2, 2), (2, 2), "nearest", 0)
    assert np.all(y.to_real() == 0.75)


def test_pool_matches_reference_reduction():
    rng = np.random.default_rng(19)
    for kind in ("max", "min", "mean"):
        x = q(rng.uniform(-2, 2, (2, 3, 6, 6)))
        y, _ = L.pool_forward(x, kind, (2, 2), (2, 2), "nearest", 0)
        ref = R.pool_f(x.to_real(), kind, (2, 2), (2, 2))
        if kind == "mean":
            assert np.all(np.abs(y.to_real() - ref) <= EPS)  # one rounded division
        else:
            assert np.array_equal(y.to_real(), ref)


def test_pool_backward_first_occurrence_tie_break():
    # all-equal window: entire gradient goes to the first element
    x = q(np.full((1, 1, 2, 2), 0.5))
    g = q(np.array([[[[1.0]]]]))
    gx, _ = L.pool_backward(g, x, "max", (2, 2), (2, 2), "nearest", 0)
    assert np.array_equal(gx.to_real(), [[[[1.0, 0.0], [0.0, 0.0]]]])


def test_pool_backward_fd():
    rng = np.random.default_rng(20)
    x = q(rng.uniform(-1, 1, (1, 2, 4, 4)))
    go = q(rng.uniform(-0.05, 0.05, (1, 2, 2, 2)))
    for kind in ("max", "min", "mean"):
        gx, _ = L.pool_backward(go, x, kind, (2, 2), (2, 2), "nearest", 0)
        ref = R.pool_grad(go.to_real(), x.to_real(), kind, (2, 2), (2, 2))
        fd_check(gx.to_real(), ref)


# ---------------------------------------------------------------------------
# batchnorm
# ---------------------------------------------------------------------------

def test_batchnorm_constant_input_gives_beta():
    x = q(np.full((4, 2, 3, 3), 0.5))
    gamma = q(np.array([1.0, 1.0]))
    beta = q(np.array([0.25, -0.125]))
    st = L.BnState.fresh(2)
    y, _, _, _ = L.batchnorm_forward(x, gamma, beta, True, st, "nearest", 0)
    yr = y.to_real()
    assert np.all(yr[:, 0] == 0.25)
    assert np.all(yr[:, 1] == -0.125)


def test_batchnorm_normalized_input_passthrough():
    rng = np.random.default_rng(21)
    xr = rng.normal(0, 1, (64, 3, 4, 4))
    xr = (xr - xr.mean(axis=(0, 2, 3), keepdims=True)) / xr.std(axis=(0, 2, 3), keepdims=True)
    x = q(np.clip(xr, -4, 4))
    gamma = q(np.ones(3))
    beta = q(np.zeros(3))
    y, _, _, _ = L.batchnorm_forward(x, gamma, beta, True, L.BnState.fresh(3), "nearest", 0)
    # variance guard shifts values slightly; stay within a loose quantized band
    assert np.abs(y.to_real() - x.to_real()).max() < 0.01


def test_batchnorm_running_stats_update():
    rng = np.random.default_rng(22)
    x = q(rng.uniform(-1, 1, (8, 2, 3, 3)))
    st0 = L.BnState.fresh(2, momentum=0.9)
    _, st1, _, _ = L.batchnorm_forward(x, q(np.ones(2)), q(np.zeros(2)), True, st0, "nearest", 0)
    mu = x.to_real().mean(axis=(0, 2, 3))
    assert np.allclose(st1.running_mean, 0.9 * 0 + 0.1 * mu)


def test_batchnorm_backward_fd_two_channel_toy():
    rng = np.random.default_rng(23)
    x = q(rng.uniform(-1, 1, (4, 2, 2, 2)))
    gamma = q(np.array([1.25, 0.5]))
    beta = q(np.array([0.1, -0.2]))
    go = q(rng.uniform(-0.05, 0.05, (4, 2, 2, 2)))
    _, _, cache, _ = L.batchnorm_forward(x, gamma, beta, True, L.BnState.fresh(2), "nearest", 0)
    gx, gg, gb, _ = L.batchnorm_backward(go, cache, Q416, "nearest", 0)

    xr, gr, br, gor = x.to_real(), gamma.to_real(), beta.to_real(), go.to_real()
    h = 2 * EPS

    def loss_of(xv):
        y, _, _ = R.bn_f(xv, gr, br, True, None, None)
        return float((y * gor).sum())

    fd = np.zeros_like(xr)
    it = np.nditer(xr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        up, dn = xr.copy(), xr.copy()
        up[idx] += h
        dn[idx] -= h
        fd[idx] = (loss_of(up) - loss_of(dn)) / (2 * h)
    fd_check(gx.to_real(), fd)

    y0, mu, var = R.bn_f(xr, gr, br, True, None, None)
    xhat = (xr - mu.reshape(1, -1, 1, 1)) / np.sqrt(var + L.BN_EPS).reshape(1, -1, 1, 1)
    fd_check(gg.to_real(), (gor * xhat).sum(axis=(0, 2, 3)))
    fd_check(gb.to_real(), gor.sum(axis=(0, 2, 3)))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_l2_loss_zero_at_target():
    p = q(np.array([[0.5, -0.25]]))
    loss, grad, _ = L.loss_fn(p, p.to_real(), "l2", "nearest", 0)
    assert loss == 0.0 and grad.nnz == 0


def test_softmax_xent_uniform_logits():
    for k in (2, 5, 10):
        p = MaskedTensor.from_dense(np.zeros((3, k), dtype=np.int64), Q416)
        loss, _, _ = L.loss_fn(p, np.zeros(3, dtype=np.int64), "softmax-xent", "nearest", 0)
        assert abs(loss - math.log(k)) < 1e-9


def test_loss_rejects_bad_class_index():
    p = MaskedTensor.from_dense(np.zeros((2, 3), dtype=np.int64), Q416)
    with pytest.raises(ValueError):
        L.loss_fn(p, np.array([0, 3]), "softmax-xent", "nearest", 0)


def test_losses_match_real_oracle():
    rng = np.random.default_rng(24)
    p = q(rng.uniform(-2, 2, (4, 6)))
    t = rng.uniform(-2, 2, (4, 6))
    for kind in ("l1", "l2"):
        loss, grad, _ = L.loss_fn(p, t, kind, "nearest", 0)
        want_loss, want_grad = R.loss_f(p.to_real(), t, kind)
        assert abs(loss - want_loss) < 1e-12
        assert np.all(np.abs(grad.to_real() - want_grad) <= EPS)
    labels = rng.integers(0, 6, size=4)
    loss, grad, _ = L.loss_fn(p, labels, "softmax-xent", "nearest", 0)
    want_loss, want_grad = R.loss_f(p.to_real(), labels, "softmax-xent")
    assert abs(loss - want_loss) < 1e-12
    assert np.all(np.abs(grad.to_real() - want_grad) <= EPS)


# ---------------------------------------------------------------------------
# sgd
# ---------------------------------------------------------------------------

def test_sgd_zero_grad_keeps_weights():
    w = q(np.array([0.5, -0.25, 1.0]))
    g = MaskedTensor.from_dense(np.zeros(3, dtype=np.int64), Q416)
    w2, _ = L.sgd_update(w, g, 0.1, "stochastic", 0)
    assert np.array_equal(w2.to_dense(), w.to_dense())


def test_sgd_subepsilon_update_probability():
    # lr*g = eps/4: the weight moves with probability 1/4 under stochastic
    # rounding, never under nearest
    n = 40000
    w = MaskedTensor.from_dense(np.zeros(n, dtype=np.int64), Q416)
    g_raw = np.full(n, 1 << 14, dtype=np.int64)  # g = 0.25
    g = MaskedTensor.from_dense(g_raw, Q416)
    lr = EPS  # lr*g = eps/4
    w2, _ = L.sgd_update(w, g, lr, "stochastic", 99)
    frac = np.count_nonzero(w2.to_dense()) / n
    assert abs(frac - 0.25) < 4 * math.sqrt(0.25 * 0.75 / n)
    w3, _ = L.sgd_update(w, g, lr, "nearest", 99)
    assert w3.nnz == 0


def test_sgd_matches_real_oracle_within_eps():
    rng = np.random.default_rng(25)
    w = q(rng.uniform(-1, 1, (4, 4)))
    g = q(rng.uniform(-0.5, 0.5, (4, 4)))
    lr = 0.125
    w2, _ = L.sgd_update(w, g, lr, "stochastic", 3)
    want = w.to_real() - lr * g.to_real()
    assert np.all(np.abs(w2.to_real() - want) < EPS)


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

def lenet_graph(batch=4, hw=14, loss="softmax-xent"):
    return NetworkGraph(
        name="lenet-toy",
        batch=batch,
        input_shape=(1, hw, hw),
        layers=[
            LayerSpec(kind="conv", out_channels=4, kernel=(3, 3)),
            LayerSpec(kind="relu"),
            LayerSpec(kind="pool", pool="max", window=(2, 2), stride=(2, 2)),
            LayerSpec(kind="conv", out_channels=8, kernel=(3, 3)),
            LayerSpec(kind="relu"),
            LayerSpec(kind="pool", pool="max", window=(2, 2), stride=(2, 2)),
            LayerSpec(kind="reshape"),
            LayerSpec(kind="fc", out_features=16),
            LayerSpec(kind="relu"),
            LayerSpec(kind="fc", out_features=2),
            LayerSpec(kind="loss", loss=loss),
        ],
    )


def test_graph_shape_chain():
    g = lenet_graph()
    assert g.shapes[0] == (4, 4, 12, 12)
    assert g.shapes[2] == (4, 4, 6, 6)
    assert g.shapes[5] == (4, 8, 2, 2)
    assert g.shapes[6] == (4, 32)
    assert g.shapes[-1] == (4, 2)


def test_graph_rejects_bad_conv():
    with pytest.raises(GraphError) as e:
        NetworkGraph("bad", 1, (1, 2, 2),
                     [LayerSpec(kind="relu"),
                      LayerSpec(kind="conv", out_channels=1, kernel=(3, 3))])
    assert e.value.index == 1


def test_identity_fc_graph_passthrough():
    g = NetworkGraph("id", 1, (1, 1, 4),
                     [LayerSpec(kind="reshape"), LayerSpec(kind="fc", out_features=4, bias=False)])
    state = init_state(g, Q416, 0.1, 0)
    state.params[1]["weight"] = q(np.eye(4))
    x = q(np.array([0.5, -0.25, 1.0, 0.0]).reshape(1, 1, 1, 4))
    out = predict(g, state, x)
    assert np.array_equal(out, [[0.5, -0.25, 1.0, 0.0]])


def test_train_step_deterministic():
    g = lenet_graph()
    rng = np.random.default_rng(26)
    x = q(rng.uniform(0, 1, (4, 1, 14, 14)))
    labels = np.array([0, 1, 0, 1])
    s1 = init_state(g, Q416, 0.05, 42)
    s2 = init_state(g, Q416, 0.05, 42)
    l1, s1, _ = train_step(g, s1, x, labels)
    l2, s2, _ = train_step(g, s2, x, labels)
    assert l1 == l2
    for p1, p2 in zip(s1.params, s2.params):
        for k in p1:
            assert np.array_equal(p1[k].to_dense(), p2[k].to_dense())
    l1b, _, _ = train_step(g, s1, x, labels)
    l2b, _, _ = train_step(g, s2, x, labels)
    assert l1b == l2b


def test_quadratic_toy_loss_non_increasing():
    # one fc weight, l2 target: exact-representable lr keeps SGD monotone
    g = NetworkGraph("quad", 1, (1, 1, 1),
                     [LayerSpec(kind="reshape"),
                      LayerSpec(kind="fc", out_features=1, bias=False),
                      LayerSpec(kind="loss", loss="l2")])
    state = init_state(g, Q416, 0.25, 7)
    state.params[1]["weight"] = q(np.array([[0.125]]))
    x = q(np.array([[[[1.0]]]]))
    target = np.array([[1.0]])
    losses = []
    for _ in range(8):
        loss, state, _ = train_step(g, state, x, target, mode="nearest")
        losses.append(loss)
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_forward_activation_shapes_and_stats():
    g = lenet_graph()
    state = init_state(g, Q416, 0.05, 1)
    x = q(np.random.default_rng(27).uniform(0, 1, (4, 1, 14, 14)))
    out, caches, stats = forward(g, state, x, "nearest")
    assert out.shape == (4, 2)
    assert len(caches) == len(list(g.compute_layers))
    conv_stats = stats[0]
    assert conv_stats.dense_macs == 4 * 4 * 1 * 3 * 3 * 12 * 12
    assert 0 < conv_stats.aligned_macs <= conv_stats.dense_macs
