"""Shared plumbing for the learned models.

Input/output scaling keeps regression targets near unit range:
positions and joint coordinates are divided by POS_SCALE (mm), joint
angles by ANGLE_SCALE (deg). Rotation heads emit 9 raw values; the loss
sees them raw and inference projects them to the nearest rotation.
"""

from __future__ import annotations

import hashlib
import json
import math
import os

import numpy as np

from ..geometry import (
    decode_rotation,
    euler_to_matrix,
    matrix_to_euler,
    orientation_loss,
    project_to_rotation,
)
from ..tensorcore import LayerSpec, Network, load_network, save_network

POS_SCALE = 100.0
ANGLE_SCALE = 90.0


class UntrainedModel(RuntimeError):
    """Prediction requested from a model that was never trained or loaded."""


def conv_stack(prefix, source, channels=(8, 16, 32)):
    """3x3 stride-2 conv/relu pyramid ending in a flatten node."""
    specs = []
    last = source
    for i, ch in enumerate(channels):
        cid = f"{prefix}c{i}"
        specs.append(LayerSpec(cid, "conv2d", [last], channels=ch, kernel=3, stride=2, padding=1))
        specs.append(LayerSpec(f"{cid}r", "relu", [cid]))
        last = f"{cid}r"
    specs.append(LayerSpec(f"{prefix}fl", "flatten", [last]))
    return specs, f"{prefix}fl"


def conv3d_stack(prefix, source, channels=(8, 16)):
    specs = []
    last = source
    for i, ch in enumerate(channels):
        cid = f"{prefix}c{i}"
        specs.append(LayerSpec(cid, "conv3d", [last], channels=ch, kernel=3, stride=2, padding=1))
        specs.append(LayerSpec(f"{cid}r", "relu", [cid]))
        last = f"{cid}r"
    specs.append(LayerSpec(f"{prefix}fl", "flatten", [last]))
    return specs, f"{prefix}fl"


def dense_head(prefix, source, out_dim, cond=None, hidden=128):
    """dense/relu/dense regression head, optionally concatenating a
    conditioning vector in front."""
    specs = []
    src = source
    if cond is not None:
        specs.append(LayerSpec(f"{prefix}cat", "concat", [source, cond]))
        src = f"{prefix}cat"
    specs.append(LayerSpec(f"{prefix}d1", "dense", [src], units=hidden))
    specs.append(LayerSpec(f"{prefix}d1r", "relu", [f"{prefix}d1"]))
    specs.append(LayerSpec(f"{prefix}out", "dense", [f"{prefix}d1r"], units=out_dim))
    return specs, f"{prefix}out"


def param_keys(net, prefixes):
    return [k for k in net.params if k.split(".")[0].startswith(tuple(prefixes))]


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inject_orientation_noise(W, rng, max_deg=30.0):
    """Perturb each intrinsic Euler angle by U(-max_deg, max_deg).

    Training-time augmentation of orientation conditioning; the result
    is projected back to an exact rotation.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    angles = matrix_to_euler(np.asarray(W, dtype=float))
    noised = angles + rng.uniform(-max_deg, max_deg, size=3)
    return project_to_rotation(euler_to_matrix(noised))


def batch_orientation_loss(raw, W_gt, symmetry):
    """Mean orientation_loss over a batch of raw 9-vector predictions.

    Returns (loss, gradient with respect to raw) with the gradient
    already divided by the batch size.
    """
    raw = np.asarray(raw, dtype=float)
    n = raw.shape[0]
    grads = np.zeros_like(raw)
    total = 0.0
    for i in range(n):
        li, gi = orientation_loss(raw[i].reshape(3, 3), W_gt[i], symmetry)
        total += li
        grads[i] = gi.reshape(9) / n
    return total / n, grads


def project_rotations(raw, sym=None):
    """Project a batch of raw 9-vectors to rotation matrices.

    With a symmetry class, decode_rotation resolves the sign-free
    mirror column; otherwise plain polar projection.
    """
    raw = np.asarray(raw, dtype=float)
    out = np.empty((raw.shape[0], 3, 3))
    for i in range(raw.shape[0]):
        M = raw[i].reshape(3, 3)
        out[i] = project_to_rotation(M) if sym is None else decode_rotation(M, sym)
    return out


def cond_hash(cond):
    return hashlib.sha256(np.ascontiguousarray(cond, dtype=float).tobytes()).hexdigest()


def training_batches(n, batch, steps, rng):
    """Deterministic with-replacement minibatch index stream."""
    for _ in range(steps):
        yield rng.integers(0, n, size=min(batch, n))


def save_manifest(path, manifest):
    with open(path, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")


def load_manifest(path):
    with open(path) as f:
        return json.load(f)


def save_nets(directory, manifest, nets):
    os.makedirs(directory, exist_ok=True)
    manifest = dict(manifest)
    manifest["nets"] = sorted(nets)
    for name, net in nets.items():
        save_network(net, os.path.join(directory, f"{name}.tgw"))
    save_manifest(os.path.join(directory, "manifest.json"), manifest)


def load_nets(directory):
    manifest = load_manifest(os.path.join(directory, "manifest.json"))
    nets = {
        name: load_network(os.path.join(directory, f"{name}.tgw"))
        for name in manifest["nets"]
    }
    return manifest, nets
