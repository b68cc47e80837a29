"""Functional training and evaluation runs over the synthetic task.

Everything is derived from (network description, run config, seed): the
dataset, the parameter init, the batch order, and every rounding draw, so
two invocations produce bit-identical trajectories.
"""

from __future__ import annotations

import numpy as np

from ..fixedpoint import mix64, quantize_real_raw
from ..nn import graph as G
from ..nn import measure, predict, train_step
from ..nn.datasets import batches, two_class_images
from ..nn.reference import ReferenceNet
from ..sparse import MaskedTensor
from .network import NetworkDescription
from .runconfig import RunConfig


def make_dataset(nd: NetworkDescription, cfg: RunConfig, seed: int):
    c, h, w = nd.input_shape
    if h != w:
        raise ValueError("synthetic task needs square inputs")
    n = cfg.train_samples + cfg.eval_samples
    images, labels = two_class_images(n, hw=h, seed=seed)
    if c > 1:
        images = np.repeat(images, c, axis=1)
    split = cfg.train_samples
    return (images[:split], labels[:split]), (images[split:], labels[split:])


def quantize_batch(images: np.ndarray, fmt, seed: int) -> MaskedTensor:
    raw, _ = quantize_real_raw(images, fmt, "nearest", seed)
    return MaskedTensor.from_dense(raw.reshape(images.shape), fmt)


def accuracy(graph, state, images, labels, fmt, batch: int) -> float:
    hits = 0
    for lo in range(0, len(labels), batch):
        x = quantize_batch(images[lo : lo + batch], fmt, 0)
        logits = predict(graph, state, x)
        hits += int((logits.argmax(axis=-1) == labels[lo : lo + batch]).sum())
    return hits / len(labels)


def run_training(nd: NetworkDescription, cfg: RunConfig, seed: int | None = None) -> dict:
    """Quantized SGD over the synthetic two-class task.

    Returns the loss curve, train/eval accuracy, and the final TrainState.
    """
    seed = nd.seed if seed is None else seed
    graph = nd.graph
    if graph.loss_index is None:
        raise G.GraphError(len(graph.layers) - 1, "kind", "training needs a loss layer")
    (tr_x, tr_y), (ev_x, ev_y) = make_dataset(nd, cfg, seed)
    state = G.init_state(graph, cfg.qformat, cfg.lr, seed)

    curve = []
    for epoch in range(cfg.epochs):
        for idx in batches(len(tr_y), graph.batch, epoch, seed):
            if len(idx) < graph.batch:
                continue  # keep batch-norm statistics on full batches
            x = quantize_batch(tr_x[idx], cfg.qformat, 0)
            loss, state, _ = train_step(graph, state, x, tr_y[idx], cfg.rounding)
            curve.append(loss)
    return {
        "loss_curve": curve,
        "train_accuracy": accuracy(graph, state, tr_x, tr_y, cfg.qformat, graph.batch),
        "eval_accuracy": accuracy(graph, state, ev_x, ev_y, cfg.qformat, graph.batch),
        "state": state,
        "steps": len(curve),
    }


def run_training_reference(nd: NetworkDescription, cfg: RunConfig,
                           seed: int | None = None) -> dict:
    """Float64 SGD baseline: same init draws, same data order."""
    seed = nd.seed if seed is None else seed
    graph = nd.graph
    (tr_x, tr_y), (ev_x, ev_y) = make_dataset(nd, cfg, seed)
    net = ReferenceNet(graph, cfg.lr, seed)

    curve = []
    for epoch in range(cfg.epochs):
        for idx in batches(len(tr_y), graph.batch, epoch, seed):
            if len(idx) < graph.batch:
                continue
            curve.append(net.train_step(tr_x[idx], tr_y[idx]))

    def ref_accuracy(images, labels):
        hits = 0
        for lo in range(0, len(labels), graph.batch):
            logits = net.predict(images[lo : lo + graph.batch])
            hits += int((logits.argmax(axis=-1) == labels[lo : lo + graph.batch]).sum())
        return hits / len(labels)

    return {
        "loss_curve": curve,
        "train_accuracy": ref_accuracy(tr_x, tr_y),
        "eval_accuracy": ref_accuracy(ev_x, ev_y),
        "net": net,
        "steps": len(curve),
    }


def run_inference(nd: NetworkDescription, cfg: RunConfig, seed: int | None = None,
                  state=None) -> dict:
    """Functional evaluation on the held-out split of the synthetic task."""
    seed = nd.seed if seed is None else seed
    graph = nd.graph
    _, (ev_x, ev_y) = make_dataset(nd, cfg, seed)
    if state is None:
        state = G.init_state(graph, cfg.qformat, cfg.lr, seed)
    return {
        "eval_accuracy": accuracy(graph, state, ev_x, ev_y, cfg.qformat, graph.batch),
        "samples": len(ev_y),
        "state": state,
    }


def measure_densities(nd: NetworkDescription, cfg: RunConfig, seed: int | None = None,
                      state=None, train: bool = False) -> list:
    """Per-layer functional stats on one batch, for perf measured mode."""
    seed = nd.seed if seed is None else seed
    graph = nd.graph
    (tr_x, _), _ = make_dataset(nd, cfg, seed)
    if state is None:
        state = G.init_state(graph, cfg.qformat, cfg.lr, seed)
    x = quantize_batch(tr_x[: graph.batch], cfg.qformat, 0)
    return measure(graph, state, x, "nearest", train=train)


def total_saturations(stats) -> int:
    return sum(st.saturations for st in stats)
