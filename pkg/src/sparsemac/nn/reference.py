"""Real-arithmetic shadow of the quantized engine.

Same layer semantics, same parameter draws, same data order, float64
throughout.  Serves two jobs: the independent oracle that gradient checks
difference against, and the baseline SGD run that quantized training is
compared to.
"""

from __future__ import annotations

import numpy as np

from .graph import NetworkGraph, init_real_params
from .layers import BN_EPS


def conv_f(x, w, spec):
    xp = np.pad(x, ((0, 0), (0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))
    cols = np.empty((x.shape[0], spec.c, spec.r, spec.s, spec.p, spec.q))
    for r in range(spec.r):
        for s in range(spec.s):
            cols[:, :, r, s] = xp[
                :, :,
                r : r + spec.u * (spec.p - 1) + 1 : spec.u,
                s : s + spec.v * (spec.q - 1) + 1 : spec.v,
            ]
    cols = cols.reshape(x.shape[0], spec.c * spec.r * spec.s, -1)
    y = w.reshape(spec.k, -1) @ cols
    return y.reshape(x.shape[0], spec.k, spec.p, spec.q)


def pool_f(x, kind, win, stride):
    n, c, h, w = x.shape
    r, s = win
    u, v = stride
    p, q = (h - r) // u + 1, (w - s) // v + 1
    windows = np.empty((n, c, p, q, r * s))
    for i in range(r):
        for j in range(s):
            windows[..., i * s + j] = x[:, :, i : i + u * (p - 1) + 1 : u,
                                        j : j + v * (q - 1) + 1 : v]
    if kind == "max":
        return windows.max(axis=-1)
    if kind == "min":
        return windows.min(axis=-1)
    return windows.mean(axis=-1)


def bn_f(x, gamma, beta, train, running_mean, running_var):
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    mu = x.mean(axis=axes) if train else running_mean
    var = x.var(axis=axes) if train else running_var
    xhat = (x - mu.reshape(shape)) / np.sqrt(var + BN_EPS).reshape(shape)
    return gamma.reshape(shape) * xhat + beta.reshape(shape), mu, var


def loss_f(pred, target, kind):
    batch = pred.shape[0]
    if kind == "l2":
        diff = pred - np.asarray(target, dtype=np.float64).reshape(pred.shape)
        return float(0.5 * (diff ** 2).sum() / batch), diff / batch
    if kind == "l1":
        diff = pred - np.asarray(target, dtype=np.float64).reshape(pred.shape)
        return float(np.abs(diff).sum() / batch), np.sign(diff) / batch
    idx = np.asarray(target, dtype=np.int64).reshape(batch)
    z = pred - pred.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    sm = ez / ez.sum(axis=-1, keepdims=True)
    loss = float(-np.log(sm[np.arange(batch), idx]).mean())
    grad = sm.copy()
    grad[np.arange(batch), idx] -= 1.0
    return loss, grad / batch


class ReferenceNet:
    """Float64 mirror of a NetworkGraph, trained with plain SGD."""

    def __init__(self, graph: NetworkGraph, lr: float, seed: int):
        self.graph = graph
        self.lr = lr
        self.params = init_real_params(graph, seed)
        self.bn = {
            i: {"mean": np.zeros(graph.shapes[i][1]), "var": np.ones(graph.shapes[i][1])}
            for i, spec in enumerate(graph.layers) if spec.kind == "batchnorm"
        }

    def forward(self, x, train=False):
        acts = [x]
        caches = []
        cur = x
        for i in self.graph.compute_layers:
            spec = self.graph.layers[i]
            p = self.params[i]
            cache = {"input": cur}
            if spec.kind == "conv":
                cur = conv_f(cur, p["weight"], self.graph.conv_specs[i])
            elif spec.kind == "fc":
                cur = cur @ p["weight"].T
                if "bias" in p:
                    cur = cur + p["bias"]
            elif spec.kind == "relu":
                cur = np.maximum(cur, 0.0)
            elif spec.kind == "pool":
                cur = pool_f(cur, spec.pool, spec.window, spec.stride)
            elif spec.kind == "batchnorm":
                st = self.bn[i]
                cur, mu, var = bn_f(cur, p["gamma"], p["beta"], train, st["mean"], st["var"])
                cache["mu"], cache["var"] = mu, var
                if train:
                    m = spec.momentum
                    cache["bn_next"] = {"mean": m * st["mean"] + (1 - m) * mu,
                                        "var": m * st["var"] + (1 - m) * var}
            elif spec.kind == "reshape":
                target = (cur.shape[0], *spec.shape) if spec.shape else (cur.shape[0], -1)
                cur = cur.reshape(target)
            elif spec.kind == "scalar":
                cur = cur + spec.operand if spec.op == "add" else cur - spec.operand
            acts.append(cur)
            caches.append(cache)
        return cur, acts, caches

    def train_step(self, x, targets):
        out, acts, caches = self.forward(x, train=True)
        li = self.graph.loss_index
        loss, grad = loss_f(out, targets, self.graph.layers[li].loss)

        for i in reversed(list(self.graph.compute_layers)):
            spec = self.graph.layers[i]
            p = self.params[i]
            cache = caches[i]
            xin = cache["input"]
            if spec.kind == "conv":
                cs = self.graph.conv_specs[i]
                gw = conv_grad_w(grad, xin, cs)
                grad = conv_grad_x(grad, p["weight"], cs)
                p["weight"] = p["weight"] - self.lr * gw
            elif spec.kind == "fc":
                gw = grad.T @ xin
                gb = grad.sum(axis=0)
                grad = grad @ p["weight"]
                p["weight"] = p["weight"] - self.lr * gw
                if "bias" in p:
                    p["bias"] = p["bias"] - self.lr * gb
            elif spec.kind == "relu":
                grad = grad * (xin > 0)
            elif spec.kind == "pool":
                grad = pool_grad(grad, xin, spec.pool, spec.window, spec.stride)
            elif spec.kind == "batchnorm":
                grad, gg, gb = bn_grad(grad, xin, p["gamma"], cache["mu"], cache["var"])
                p["gamma"] = p["gamma"] - self.lr * gg
                p["beta"] = p["beta"] - self.lr * gb
                self.bn[i] = cache["bn_next"]
            elif spec.kind == "reshape":
                grad = grad.reshape(xin.shape)
            # scalar: gradient passes through
        return loss

    def predict(self, x):
        out, _, _ = self.forward(x, train=False)
        return out


def conv_grad_w(go, x, spec):
    xp = np.pad(x, ((0, 0), (0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))
    cols = np.empty((x.shape[0], spec.c, spec.r, spec.s, spec.p, spec.q))
    for r in range(spec.r):
        for s in range(spec.s):
            cols[:, :, r, s] = xp[
                :, :,
                r : r + spec.u * (spec.p - 1) + 1 : spec.u,
                s : s + spec.v * (spec.q - 1) + 1 : spec.v,
            ]
    cols = cols.reshape(x.shape[0], spec.c * spec.r * spec.s, -1)
    gw = np.einsum("nko,nzo->kz", go.reshape(x.shape[0], spec.k, -1), cols)
    return gw.reshape(spec.k, spec.c, spec.r, spec.s)


def conv_grad_x(go, w, spec):
    gcols = np.einsum("kz,nko->nzo", w.reshape(spec.k, -1),
                      go.reshape(go.shape[0], spec.k, -1))
    g = gcols.reshape(go.shape[0], spec.c, spec.r, spec.s, spec.p, spec.q)
    hp, wp = spec.h + 2 * spec.pad_h, spec.w + 2 * spec.pad_w
    gxp = np.zeros((go.shape[0], spec.c, hp, wp))
    for r in range(spec.r):
        for s in range(spec.s):
            gxp[
                :, :,
                r : r + spec.u * (spec.p - 1) + 1 : spec.u,
                s : s + spec.v * (spec.q - 1) + 1 : spec.v,
            ] += g[:, :, r, s]
    return gxp[:, :, spec.pad_h : spec.pad_h + spec.h, spec.pad_w : spec.pad_w + spec.w]


def pool_grad(go, x, kind, win, stride):
    n, c, h, w = x.shape
    r, s = win
    u, v = stride
    p, q = (h - r) // u + 1, (w - s) // v + 1
    windows = np.empty((n, c, p, q, r * s))
    for i in range(r):
        for j in range(s):
            windows[..., i * s + j] = x[:, :, i : i + u * (p - 1) + 1 : u,
                                        j : j + v * (q - 1) + 1 : v]
    if kind == "mean":
        contrib = np.broadcast_to(go[..., None] / (r * s), windows.shape)
    else:
        sel = windows.argmax(axis=-1) if kind == "max" else windows.argmin(axis=-1)
        contrib = np.zeros_like(windows)
        np.put_along_axis(contrib, sel[..., None], go[..., None], axis=-1)
    gx = np.zeros_like(x, dtype=np.float64)
    for i in range(r):
        for j in range(s):
            gx[:, :, i : i + u * (p - 1) + 1 : u, j : j + v * (q - 1) + 1 : v] += contrib[..., i * s + j]
    return gx


def bn_grad(go, x, gamma, mu, var):
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    m = float(np.prod([x.shape[a] for a in axes]))
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu.reshape(shape)) * inv_std.reshape(shape)
    gg = (go * xhat).sum(axis=axes)
    gb = go.sum(axis=axes)
    gxhat = go * gamma.reshape(shape)
    gx = inv_std.reshape(shape) / m * (
        m * gxhat
        - gxhat.sum(axis=axes).reshape(shape)
        - xhat * (gxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return gx, gg, gb
