"""Deterministic synthetic image tasks for the desk-scale fixtures."""

from __future__ import annotations

import numpy as np

from ..fixedpoint import mix64


def two_class_images(n: int, hw: int = 14, seed: int = 0, noise: float = 0.35,
                     contrast: float = 0.3):
    """Two-class task: a faint block in the top-left vs bottom-right corner.

    Returns float64 images (n, 1, hw, hw) in [0, 1] and int labels (n,).
    The block sits barely above the noise floor, so the boundary has to be
    learned by accumulating many small weight updates rather than a few
    coarse ones.
    """
    rng = np.random.default_rng(mix64(seed, 0xDA7A))
    labels = rng.integers(0, 2, size=n)
    block = max(3, hw // 3)
    images = rng.normal(0.3, noise, size=(n, 1, hw, hw))
    for i, lab in enumerate(labels):
        if lab == 0:
            images[i, 0, :block, :block] += contrast
        else:
            images[i, 0, -block:, -block:] += contrast
    return np.clip(images, 0.0, 1.0), labels.astype(np.int64)


def batches(n: int, batch: int, epoch: int, seed: int):
    """Deterministic epoch shuffle; yields index arrays of size <= batch."""
    order = np.random.default_rng(mix64(seed, 0x0DD5, epoch)).permutation(n)
    for lo in range(0, n, batch):
        yield order[lo : lo + batch]
