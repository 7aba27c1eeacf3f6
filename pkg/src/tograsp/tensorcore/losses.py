"""Scalar losses with analytic gradients, mean-reduced over all elements."""

from __future__ import annotations

import numpy as np


def mse_loss(pred, target):
    """Mean squared error. Returns (loss, dloss/dpred)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    n = d.size
    return float(np.mean(d * d)), 2.0 * d / n


def sigmoid_ce_loss(logits, labels):
    """Mean sigmoid cross-entropy on raw logits. Returns (loss, dloss/dlogits).

    Uses max(x,0) - x*y + log1p(exp(-|x|)) so large-magnitude logits do
    not overflow.
    """
    x = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    n = x.size
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)
    return float(np.mean(per)), (sig - y) / n
