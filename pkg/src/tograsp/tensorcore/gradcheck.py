"""Finite-difference verification of the analytic backward pass."""

from __future__ import annotations

import numpy as np


def gradient_check(net, inputs, loss_fn, h=1e-4, max_params=10000):
    """Compare analytic parameter gradients against central differences.

    loss_fn maps the forward() output dict to (scalar loss, {output:
    gradient array}). Every parameter element is perturbed, so the net
    must be small; raises ValueError above max_params. Returns (max
    relative error, {param key: per-element relative errors}).
    """
    total = sum(v.size for v in net.params.values())
    if total > max_params:
        raise ValueError(f"{total} parameters; gradient_check is exhaustive, keep it under {max_params}")
    out = net.forward(inputs)
    _, gout = loss_fn(out)
    analytic = net.backward(gout)
    worst = 0.0
    rel_errors = {}
    for key, p in net.params.items():
        rel = np.zeros(p.size)
        flat = p.reshape(-1)
        an = analytic[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_fn(net.forward(inputs))
            flat[i] = orig - h
            lm, _ = loss_fn(net.forward(inputs))
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            rel[i] = abs(fd - an[i]) / max(abs(fd), abs(an[i]), 1e-8)
            worst = max(worst, rel[i])
        rel_errors[key] = rel.reshape(p.shape)
    net.forward(inputs)   # restore a clean activation cache
    return worst, rel_errors
