"""Quantized CNN layer kernels, forward and backward.

Every multiply-accumulate works on raw scaled integers: products of two
narrow values are exact in the wide format, the reduction over a dot product
is an exact integer sum clamped once at the wide boundary, and each output
element is rounded exactly once.  The per-element rounding stream is derived
from (layer seed, flat output index), so results are independent of how the
work is split and bit-identical whether the operands arrive compressed or
dense (skipping zero terms cannot change an exact sum).

Batch-norm statistics, softmax and the loss functions run in host float64 on
dequantized values and are quantized on egress; this is the stated modeling
simplification for the ops the MAC array does not cover.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fixedpoint import (
    QFormat,
    derive_lfsr_states,
    lfsr_bits_vec,
    quantize_real_raw,
    round_nearest_raw,
    round_stochastic_raw,
    saturate_raw,
)
from ..sparse import MaskedTensor

BN_EPS = 2.0 ** -10  # variance guard in the wide grid


@dataclass
class ConvSpec:
    """Convolution geometry: NCHW input, KCRS weights, strides and padding."""

    n: int
    k: int
    c: int
    h: int
    w: int
    r: int
    s: int
    u: int = 1
    v: int = 1
    pad_h: int = 0
    pad_w: int = 0

    def __post_init__(self):
        # floor-division sizing (framework convention): trailing padded
        # columns that no window reaches are simply unused
        ph, pw = self.h + 2 * self.pad_h, self.w + 2 * self.pad_w
        self.p = (ph - self.r) // self.u + 1
        self.q = (pw - self.s) // self.v + 1
        if self.r > ph or self.s > pw or self.p < 1 or self.q < 1:
            raise ValueError(
                f"invalid output size for {self.h}x{self.w} input, "
                f"{self.r}x{self.s} kernel, stride {self.u}x{self.v}, pad {self.pad_h}x{self.pad_w}"
            )

    @property
    def dense_macs(self) -> int:
        return self.n * self.k * self.c * self.r * self.s * self.p * self.q


@dataclass
class FcSpec:
    m: int  # outputs
    n: int  # inputs
    bias: bool = True

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("fc dims must be >= 1")


@dataclass
class LayerStats:
    """Per-invocation work and saturation accounting."""

    dense_macs: int = 0
    aligned_macs: int = 0
    out_elements: int = 0
    saturations: int = 0
    in_density: float = 0.0
    out_density: float = 0.0
    wt_density: float = 0.0


def _check_chain(fmt: QFormat, chain_len: int):
    # int64 accumulation must stay exact: |partial| < chain * 2**(2w-2)
    head = 2 * fmt.width - 2 + max(1, chain_len).bit_length()
    if head > 62:
        raise ValueError(
            f"reduction of {chain_len} wide products exceeds the exact int64 range "
            f"for Q{fmt.il}.{fmt.fl}"
        )


def _round_wide(wide: np.ndarray, fmt: QFormat, mode: str, seed: int,
                counter_base: int = 0) -> tuple[np.ndarray, int]:
    """Clamp at the wide boundary, then one rounding per element."""
    wide, sat_w = saturate_raw(wide, fmt.wide_raw_min, fmt.wide_raw_max)
    if mode == "nearest":
        out, sat_n = round_nearest_raw(wide, fmt)
    elif mode == "stochastic":
        out, sat_n = round_stochastic_raw(wide, fmt, seed, counter_base)
    else:
        raise ValueError(f"unknown rounding mode {mode!r}")
    return out, sat_w + sat_n


def _im2col(xp: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """(N, C*R*S, P*Q) patch matrix from the padded input."""
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, spec.r, spec.s, spec.p, spec.q), dtype=np.int64)
    for r in range(spec.r):
        for s in range(spec.s):
            cols[:, :, r, s] = xp[
                :, :,
                r : r + spec.u * (spec.p - 1) + 1 : spec.u,
                s : s + spec.v * (spec.q - 1) + 1 : spec.v,
            ]
    return cols.reshape(n, c * spec.r * spec.s, spec.p * spec.q)


def _col2im(gcols: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Scatter-add the patch-matrix gradient back onto the padded input grid."""
    n = gcols.shape[0]
    hp, wp = spec.h + 2 * spec.pad_h, spec.w + 2 * spec.pad_w
    g = gcols.reshape(n, spec.c, spec.r, spec.s, spec.p, spec.q)
    gxp = np.zeros((n, spec.c, hp, wp), dtype=np.int64)
    for r in range(spec.r):
        for s in range(spec.s):
            gxp[
                :, :,
                r : r + spec.u * (spec.p - 1) + 1 : spec.u,
                s : s + spec.v * (spec.q - 1) + 1 : spec.v,
            ] += g[:, :, r, s]
    return gxp


def _pad(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    if spec.pad_h == 0 and spec.pad_w == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_forward(x: MaskedTensor, w: MaskedTensor, spec: ConvSpec, mode: str,
                 seed: int) -> tuple[MaskedTensor, LayerStats]:
    fmt = x.fmt
    n = x.shape[0]  # the engine is batch-agnostic; spec.n is the planned batch
    if x.shape[1:] != (spec.c, spec.h, spec.w):
        raise ValueError(f"input shape {x.shape} does not match spec")
    if w.shape != (spec.k, spec.c, spec.r, spec.s):
        raise ValueError(f"weight shape {w.shape} does not match spec")
    _check_chain(fmt, spec.c * spec.r * spec.s)

    cols = _im2col(_pad(x.to_dense(), spec), spec)
    w2 = w.to_dense().reshape(spec.k, -1)
    wide = w2 @ cols  # (N, K, P*Q), exact int64
    aligned = int(((w2 != 0).astype(np.int64) @ (cols != 0).astype(np.int64)).sum())

    y_raw, sat = _round_wide(wide, fmt, mode, seed)
    y = MaskedTensor.from_dense(y_raw.reshape(n, spec.k, spec.p, spec.q), fmt)
    stats = LayerStats(
        dense_macs=n * spec.k * spec.c * spec.r * spec.s * spec.p * spec.q,
        aligned_macs=aligned,
        out_elements=y.size,
        saturations=sat,
        in_density=x.density,
        out_density=y.density,
        wt_density=w.density,
    )
    return y, stats


def conv_backward(grad_out: MaskedTensor, x: MaskedTensor, w: MaskedTensor,
                  spec: ConvSpec, mode: str, seed: int):
    """Standard backprop through the convolution sum.

    grad_weights contracts grad_out with input patches over (n, p, q);
    grad_input is the full correlation of grad_out with the weights,
    realized as a patch-matrix product plus scatter-add.  Each gradient
    tensor is rounded once per element; grad_input uses counters [0, size),
    grad_weights continues after them.
    """
    fmt = x.fmt
    n = x.shape[0]
    if grad_out.shape != (n, spec.k, spec.p, spec.q):
        raise ValueError(f"grad shape {grad_out.shape} does not match spec")
    _check_chain(fmt, max(spec.k * spec.r * spec.s, n * spec.p * spec.q))

    go = grad_out.to_dense().reshape(n, spec.k, -1)
    cols = _im2col(_pad(x.to_dense(), spec), spec)
    w2 = w.to_dense().reshape(spec.k, -1)

    gw_wide = np.einsum("nko,nzo->kz", go, cols)
    gcols = np.einsum("kz,nko->nzo", w2, go)
    gxp = _col2im(gcols, spec)
    gx_wide = gxp[:, :, spec.pad_h : spec.pad_h + spec.h, spec.pad_w : spec.pad_w + spec.w]

    gx_raw, sat_x = _round_wide(gx_wide, fmt, mode, seed, counter_base=0)
    gw_raw, sat_w = _round_wide(gw_wide, fmt, mode, seed, counter_base=gx_wide.size)
    gx = MaskedTensor.from_dense(gx_raw, fmt)
    gw = MaskedTensor.from_dense(gw_raw.reshape(w.shape), fmt)
    stats = LayerStats(
        dense_macs=2 * n * spec.k * spec.c * spec.r * spec.s * spec.p * spec.q,
        aligned_macs=0,
        out_elements=gx.size + gw.size,
        saturations=sat_x + sat_w,
    )
    return gx, gw, stats


# ---------------------------------------------------------------------------
# fully connected
# ---------------------------------------------------------------------------

def fc_forward(x: MaskedTensor, w: MaskedTensor, b: MaskedTensor | None,
               spec: FcSpec, mode: str, seed: int) -> tuple[MaskedTensor, LayerStats]:
    fmt = x.fmt
    if x.shape[-1] != spec.n or w.shape != (spec.m, spec.n):
        raise ValueError(f"fc shapes {x.shape} x {w.shape} do not match spec")
    _check_chain(fmt, spec.n + 1)

    xd = x.to_dense().reshape(-1, spec.n)
    wd = w.to_dense()
    wide = xd @ wd.T
    if b is not None:
        wide = wide + (b.to_dense().reshape(1, spec.m) << fmt.fl)
    aligned = int(((xd != 0).astype(np.int64) @ (wd != 0).astype(np.int64).T).sum())

    y_raw, sat = _round_wide(wide, fmt, mode, seed)
    y = MaskedTensor.from_dense(y_raw.reshape(x.shape[0], spec.m), fmt)
    stats = LayerStats(
        dense_macs=xd.shape[0] * spec.m * spec.n,
        aligned_macs=aligned,
        out_elements=y.size,
        saturations=sat,
        in_density=x.density,
        out_density=y.density,
        wt_density=w.density,
    )
    return y, stats


def fc_backward(grad_y: MaskedTensor, x: MaskedTensor, w: MaskedTensor,
                spec: FcSpec, mode: str, seed: int):
    fmt = x.fmt
    gy = grad_y.to_dense().reshape(-1, spec.m)
    xd = x.to_dense().reshape(-1, spec.n)
    wd = w.to_dense()
    batch = gy.shape[0]
    _check_chain(fmt, max(spec.m, batch))

    gx_wide = gy @ wd
    gw_wide = gy.T @ xd
    gx_raw, sat_x = _round_wide(gx_wide, fmt, mode, seed, counter_base=0)
    gw_raw, sat_w = _round_wide(gw_wide, fmt, mode, seed, counter_base=gx_wide.size)
    # bias gradient is a sum of narrow values: already on the narrow grid,
    # so only the range clamp can act on it
    gb_raw, sat_b = saturate_raw(gy.sum(axis=0), fmt.raw_min, fmt.raw_max)

    gx = MaskedTensor.from_dense(gx_raw.reshape(x.shape), fmt)
    gw = MaskedTensor.from_dense(gw_raw, fmt)
    gb = MaskedTensor.from_dense(gb_raw, fmt)
    stats = LayerStats(
        dense_macs=2 * batch * spec.m * spec.n,
        out_elements=gx.size + gw.size + gb.size,
        saturations=sat_x + sat_w + sat_b,
    )
    return gx, gw, gb, stats


# ---------------------------------------------------------------------------
# activation / pooling
# ---------------------------------------------------------------------------

def relu(x: MaskedTensor) -> tuple[MaskedTensor, LayerStats]:
    """Clamp negatives to zero; recompression clears their mask bits."""
    raw = x.to_dense()
    y = MaskedTensor.from_dense(np.where(raw > 0, raw, 0), x.fmt)
    return y, LayerStats(out_elements=y.size, in_density=x.density, out_density=y.density)


def relu_backward(grad: MaskedTensor, x: MaskedTensor) -> tuple[MaskedTensor, LayerStats]:
    g = np.where(x.to_dense() > 0, grad.to_dense(), 0)
    gx = MaskedTensor.from_dense(g, x.fmt)
    return gx, LayerStats(out_elements=gx.size)


def _pool_windows(x: np.ndarray, win, stride):
    """(N, C, P, Q, r*s) gather of pooling windows."""
    n, c, h, w = x.shape
    r, s = win
    u, v = stride
    if (h - r) % u or (w - s) % v:
        raise ValueError(f"pool window {win}/stride {stride} does not tile {h}x{w}")
    p, q = (h - r) // u + 1, (w - s) // v + 1
    out = np.empty((n, c, p, q, r * s), dtype=np.int64)
    for i in range(r):
        for j in range(s):
            out[..., i * s + j] = x[:, :, i : i + u * (p - 1) + 1 : u, j : j + v * (q - 1) + 1 : v]
    return out, p, q


def _div_round(total: np.ndarray, count: int, fmt: QFormat, mode: str, seed: int):
    """Round total/count onto the narrow grid (exact rational residue)."""
    floor = total // count
    rem = total - floor * count  # in [0, count)
    if mode == "nearest":
        up = 2 * rem >= count
    else:
        counters = np.arange(total.size, dtype=np.int64)
        u = lfsr_bits_vec(derive_lfsr_states(seed, counters), fmt.fl).reshape(total.shape)
        up = u * count < rem << fmt.fl
    return saturate_raw(floor + up, fmt.raw_min, fmt.raw_max)


def pool_forward(x: MaskedTensor, kind: str, win, stride, mode: str, seed: int):
    raw = x.to_dense()
    windows, p, q = _pool_windows(raw, win, stride)
    n, c = raw.shape[0], raw.shape[1]
    sat = 0
    if kind == "max":
        y_raw = windows.max(axis=-1)
    elif kind == "min":
        y_raw = windows.min(axis=-1)
    elif kind == "mean":
        y_raw, sat = _div_round(windows.sum(axis=-1), win[0] * win[1], x.fmt, mode, seed)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    y = MaskedTensor.from_dense(y_raw.reshape(n, c, p, q), x.fmt)
    stats = LayerStats(out_elements=y.size, saturations=sat,
                       in_density=x.density, out_density=y.density)
    return y, stats


def pool_backward(grad: MaskedTensor, x: MaskedTensor, kind: str, win, stride,
                  mode: str, seed: int):
    """Max/min route each window's gradient to the first-occurrence argext
    (row-major window order); mean splits it equally with one rounded
    division per input element."""
    raw = x.to_dense()
    windows, p, q = _pool_windows(raw, win, stride)
    n, c, h, w = raw.shape
    r, s = win
    u, v = stride
    go = grad.to_dense().reshape(n, c, p, q)
    acc = np.zeros((n, c, h, w), dtype=np.int64)

    if kind in ("max", "min"):
        sel = windows.argmax(axis=-1) if kind == "max" else windows.argmin(axis=-1)
        contrib = np.zeros_like(windows)
        np.put_along_axis(contrib, sel[..., None], go[..., None], axis=-1)
    elif kind == "mean":
        contrib = np.broadcast_to(go[..., None], windows.shape)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")

    for i in range(r):
        for j in range(s):
            acc[:, :, i : i + u * (p - 1) + 1 : u, j : j + v * (q - 1) + 1 : v] += contrib[..., i * s + j]

    if kind == "mean":
        gx_raw, sat = _div_round(acc, r * s, x.fmt, mode, seed)
    else:
        gx_raw, sat = saturate_raw(acc, x.fmt.raw_min, x.fmt.raw_max)
    gx = MaskedTensor.from_dense(gx_raw, x.fmt)
    return gx, LayerStats(out_elements=gx.size, saturations=sat)


# ---------------------------------------------------------------------------
# batch normalization (host-real statistics, quantized egress)
# ---------------------------------------------------------------------------

@dataclass
class BnState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.9) -> "BnState":
        return cls(np.zeros(channels), np.ones(channels), momentum)


def _bn_axes(shape):
    if len(shape) == 4:
        return (0, 2, 3)
    if len(shape) == 2:
        return (0,)
    raise ValueError(f"batchnorm expects 2-D or 4-D input, got {shape}")


def _bn_reshape(v: np.ndarray, shape):
    return v.reshape(1, -1, 1, 1) if len(shape) == 4 else v.reshape(1, -1)


def batchnorm_forward(x: MaskedTensor, gamma: MaskedTensor, beta: MaskedTensor,
                      train: bool, state: BnState, mode: str, seed: int):
    xr = x.to_real()
    axes = _bn_axes(xr.shape)
    g = _bn_reshape(gamma.to_real(), xr.shape)
    b = _bn_reshape(beta.to_real(), xr.shape)

    if train:
        mu = xr.mean(axis=axes)
        var = xr.var(axis=axes)
        new_state = BnState(
            state.momentum * state.running_mean + (1 - state.momentum) * mu,
            state.momentum * state.running_var + (1 - state.momentum) * var,
            state.momentum,
        )
    else:
        mu, var = state.running_mean, state.running_var
        new_state = state

    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (xr - _bn_reshape(mu, xr.shape)) * _bn_reshape(inv_std, xr.shape)
    y_real = g * xhat + b
    y_raw, sat = quantize_real_raw(y_real, x.fmt, mode, seed)
    y = MaskedTensor.from_dense(y_raw.reshape(x.shape), x.fmt)
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": gamma.to_real()}
    stats = LayerStats(out_elements=y.size, saturations=sat,
                       in_density=x.density, out_density=y.density)
    return y, new_state, cache, stats


def batchnorm_backward(grad: MaskedTensor, cache: dict, fmt: QFormat,
                       mode: str, seed: int):
    go = grad.to_real()
    xhat, inv_std = cache["xhat"], cache["inv_std"]
    axes = _bn_axes(go.shape)
    m = float(np.prod([go.shape[a] for a in axes]))
    g = _bn_reshape(cache["gamma"], go.shape)

    ggamma = (go * xhat).sum(axis=axes)
    gbeta = go.sum(axis=axes)
    gxhat = go * g
    gx = (inv_std if go.ndim == 2 else _bn_reshape(inv_std, go.shape)) / m * (
        m * gxhat
        - _bn_reshape(gxhat.sum(axis=axes), go.shape)
        - xhat * _bn_reshape((gxhat * xhat).sum(axis=axes), go.shape)
    )

    gx_raw, s1 = quantize_real_raw(gx, fmt, mode, seed, counter_base=0)
    gg_raw, s2 = quantize_real_raw(ggamma, fmt, mode, seed, counter_base=gx.size)
    gb_raw, s3 = quantize_real_raw(gbeta, fmt, mode, seed, counter_base=gx.size + ggamma.size)
    stats = LayerStats(out_elements=gx.size + ggamma.size + gbeta.size,
                       saturations=s1 + s2 + s3)
    return (
        MaskedTensor.from_dense(gx_raw.reshape(go.shape), fmt),
        MaskedTensor.from_dense(gg_raw, fmt),
        MaskedTensor.from_dense(gb_raw, fmt),
        stats,
    )


# ---------------------------------------------------------------------------
# reshape / scalar / loss
# ---------------------------------------------------------------------------

def reshape(x: MaskedTensor, new_shape) -> MaskedTensor:
    if int(np.prod(new_shape)) != x.size:
        raise ValueError(f"cannot reshape {x.shape} to {tuple(new_shape)}")
    return MaskedTensor.from_dense(x.to_dense().reshape(new_shape), x.fmt)


def scalar_op(x: MaskedTensor, op: str, operand_raw: int) -> tuple[MaskedTensor, LayerStats]:
    """Elementwise add/subtract of a quantized constant; exact on the grid."""
    raw = x.to_dense()
    if op == "add":
        out = raw + operand_raw
    elif op == "sub":
        out = raw - operand_raw
    else:
        raise ValueError(f"unknown scalar op {op!r}")
    out, sat = saturate_raw(out, x.fmt.raw_min, x.fmt.raw_max)
    y = MaskedTensor.from_dense(out, x.fmt)
    return y, LayerStats(out_elements=y.size, saturations=sat,
                         in_density=x.density, out_density=y.density)


def loss_fn(pred: MaskedTensor, target, kind: str, mode: str, seed: int):
    """Loss value (float) and quantized input gradient.

    l1/l2 take a target tensor of matching shape; softmax-xent takes a
    vector of class indices.  Gradients are mean-reduced over the batch.
    """
    p = pred.to_real()
    batch = p.shape[0]
    if kind == "l2":
        t = np.asarray(target, dtype=np.float64).reshape(p.shape)
        diff = p - t
        loss = float(0.5 * (diff ** 2).sum() / batch)
        grad = diff / batch
    elif kind == "l1":
        t = np.asarray(target, dtype=np.float64).reshape(p.shape)
        diff = p - t
        loss = float(np.abs(diff).sum() / batch)
        grad = np.sign(diff) / batch
    elif kind == "softmax-xent":
        classes = p.shape[-1]
        idx = np.asarray(target, dtype=np.int64).reshape(batch)
        if idx.min() < 0 or idx.max() >= classes:
            raise ValueError(f"target class out of range [0, {classes})")
        z = p - p.max(axis=-1, keepdims=True)
        ez = np.exp(z)
        sm = ez / ez.sum(axis=-1, keepdims=True)
        loss = float(-np.log(sm[np.arange(batch), idx]).mean())
        grad = sm.copy()
        grad[np.arange(batch), idx] -= 1.0
        grad /= batch
    else:
        raise ValueError(f"unknown loss kind {kind!r}")

    g_raw, sat = quantize_real_raw(grad, pred.fmt, mode, seed)
    g = MaskedTensor.from_dense(g_raw.reshape(pred.shape), pred.fmt)
    return loss, g, LayerStats(out_elements=g.size, saturations=sat)


def sgd_update(w: MaskedTensor, g: MaskedTensor, lr: float, mode: str,
               seed: int) -> tuple[MaskedTensor, int]:
    """w <- round(w - lr * g), one stochastic (or nearest) draw per element."""
    target = w.to_real() - lr * g.to_real()
    raw, sat = quantize_real_raw(target, w.fmt, mode, seed)
    return MaskedTensor.from_dense(raw.reshape(w.shape), w.fmt), sat
