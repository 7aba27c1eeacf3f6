"""Adam optimizer over a network's parameter dict."""

from __future__ import annotations

import numpy as np

from .engine import _f32_grid


def adam_state(params):
    """Fresh moment estimates, all zero, matching the parameter shapes."""
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def optimizer_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, keys=None):
    """One bias-corrected Adam update, in place.

    keys restricts the update to a subset of parameters (phase training
    with a frozen trunk); moments for untouched parameters keep their
    old t, which is fine because they are never read. Updated values
    are snapped back to the float32 grid.
    """
    state["t"] += 1
    t = state["t"]
    names = params.keys() if keys is None else keys
    for k in names:
        g = grads[k]
        state["m"][k] = beta1 * state["m"][k] + (1.0 - beta1) * g
        state["v"][k] = beta2 * state["v"][k] + (1.0 - beta2) * g * g
        mhat = state["m"][k] / (1.0 - beta1 ** t)
        vhat = state["v"][k] / (1.0 - beta2 ** t)
        params[k] = _f32_grid(params[k] - lr * mhat / (np.sqrt(vhat) + eps))
