"""Hand-conditioned object pose estimation.

Two networks per category:

    position net: object-segment image (hand masked white) + conditioning
    rotation net: object crop + conditioning -> raw 9-value rotation

Conditioning modes select the hand representation fed alongside the
image features:

    hpc   wrist position (3) / wrist rotation (9)
    hjp   63 root-relative joint coordinates for both nets
    none  zero vectors of the hpc sizes, applied identically at
          training and test time (the without-hand ablation)

The rotation loss runs through the category's symmetry-aware
orientation representation, so ground truth may be replaced by any
symmetry-equivalent rotation without changing the loss.
"""

from __future__ import annotations

import numpy as np

from ..geometry import symmetry_class_for
from ..tensorcore import Network, adam_state, mse_loss, optimizer_step
from .common import (
    POS_SCALE,
    UntrainedModel,
    batch_orientation_loss,
    cond_hash,
    conv_stack,
    dense_head,
    inject_orientation_noise,
    load_nets,
    project_rotations,
    save_nets,
    training_batches,
)

COND_MODES = ("hpc", "hjp", "none")


def _cond_dims(mode):
    if mode == "hjp":
        return 63, 63
    return 3, 9


def _single_head_net(input_shape, cond_dim, out_dim, seed, channels, hidden):
    specs, feat = conv_stack("t.", "img", channels)
    head_specs, out = dense_head("h.", feat, out_dim, cond="cond", hidden=hidden)
    return Network(
        specs + head_specs,
        {"img": input_shape, "cond": (cond_dim,)},
        [out],
        seed=seed,
    )


class ObjectNets:
    """Category-specific object position/rotation predictors."""

    def __init__(self, category, cond_mode="hpc", seed=0, image=64, crop=32,
                 channels=(8, 16, 32), hidden=128, swap_reflections=False):
        if cond_mode not in COND_MODES:
            raise ValueError(f"unknown conditioning mode {cond_mode!r}")
        self.category = category
        self.cond_mode = cond_mode
        self.seed = int(seed)
        self.image = image
        self.crop = crop
        self.channels = tuple(channels)
        self.hidden = hidden
        self.swap_reflections = bool(swap_reflections)
        self.symmetry = symmetry_class_for(category, swap_reflections)
        pos_dim, rot_dim = _cond_dims(cond_mode)
        self.pos = _single_head_net((2, image, image), pos_dim, 3, seed, channels, hidden)
        self.rot = _single_head_net((2, crop, crop), rot_dim, 9, seed + 1, channels, hidden)
        self.trained = False
        self.instrument = False
        self.cond_log = []

    # -- persistence ----------------------------------------------------

    def save(self, directory):
        save_nets(
            directory,
            {
                "kind": "object",
                "category": self.category,
                "cond_mode": self.cond_mode,
                "seed": self.seed,
                "image": self.image,
                "crop": self.crop,
                "channels": list(self.channels),
                "hidden": self.hidden,
                "swap_reflections": self.swap_reflections,
                "trained": self.trained,
            },
            {"pos": self.pos, "rot": self.rot},
        )

    @classmethod
    def load(cls, directory):
        manifest, nets = load_nets(directory)
        obj = cls.__new__(cls)
        obj.category = manifest["category"]
        obj.cond_mode = manifest["cond_mode"]
        obj.seed = manifest["seed"]
        obj.image = manifest["image"]
        obj.crop = manifest["crop"]
        obj.channels = tuple(manifest["channels"])
        obj.hidden = manifest["hidden"]
        obj.swap_reflections = manifest["swap_reflections"]
        obj.symmetry = symmetry_class_for(obj.category, obj.swap_reflections)
        obj.pos = nets["pos"]
        obj.rot = nets["rot"]
        obj.trained = manifest["trained"]
        obj.instrument = False
        obj.cond_log = []
        return obj

    # -- conditioning -------------------------------------------------------

    def _conds(self, p_H, W_H, joints, wrist_noise=None, rng=None, n=None):
        """Build (position cond, rotation cond) arrays for a batch.

        wrist_noise (degrees) applies per-sample Euler noise to the
        rotation conditioning; for hjp the same noise rotation spins the
        joint set about the wrist, keeping the two representations on an
        equal noise footing.
        """
        if self.cond_mode == "none":
            if n is None:
                n = self._batch_len(p_H, W_H, joints)
            cp, cr = np.zeros((n, 3)), np.zeros((n, 9))
        elif self.cond_mode == "hpc":
            p_H = np.asarray(p_H, dtype=float)
            W_H = np.asarray(W_H, dtype=float)
            n = p_H.shape[0]
            cp = p_H / POS_SCALE
            if wrist_noise:
                W_H = np.stack(
                    [inject_orientation_noise(W_H[i], rng, wrist_noise) for i in range(n)]
                )
            cr = W_H.reshape(n, 9)
        else:  # hjp
            joints = np.asarray(joints, dtype=float)
            n = joints.shape[0]
            rel = joints - joints[:, :1, :]
            if wrist_noise:
                rel = np.stack(
                    [rel[i] @ inject_orientation_noise(np.eye(3), rng, wrist_noise).T
                     for i in range(n)]
                )
            cp = cr = rel.reshape(n, 63) / POS_SCALE
        if self.instrument:
            # per-row hashes so the log is batch-size independent
            for row in cp:
                self.cond_log.append(cond_hash(row))
            for row in cr:
                self.cond_log.append(cond_hash(row))
        return cp, cr

    @staticmethod
    def _batch_len(p_H, W_H, joints):
        for a in (p_H, W_H, joints):
            if a is not None:
                return np.asarray(a).shape[0]
        raise ValueError("need at least one hand array to size the batch")

    # -- prediction -------------------------------------------------------

    def predict(self, XO, XOc, p_H=None, W_H=None, joints=None):
        """Returns (object position mm, projected rotation matrices)."""
        if not self.trained:
            raise UntrainedModel("object nets: train or load weights first")
        XO = np.asarray(XO, dtype=float)
        XOc = np.asarray(XOc, dtype=float)
        cp, cr = self._conds(p_H, W_H, joints, n=XO.shape[0])
        p = self.pos.forward({"img": XO, "cond": cp})["h.out"] * POS_SCALE
        raw = self.rot.forward({"img": XOc, "cond": cr})["h.out"]
        return p, project_rotations(raw, self.symmetry)


def train_object(nets, data, steps=500, batch=32, lr=1e-3, seed=0, noise_deg=30.0):
    """Fit both object nets; rotation conditioning is noise-injected.

    data needs XO, XOc, p_O, W_O plus the hand arrays the conditioning
    mode consumes (p_H/W_H for hpc, joints for hjp). Returns final batch
    losses.
    """
    XO = np.asarray(data["XO"], dtype=float)
    XOc = np.asarray(data["XOc"], dtype=float)
    p_t = np.asarray(data["p_O"], dtype=float) / POS_SCALE
    W_t = np.asarray(data["W_O"], dtype=float)
    p_H = None if data.get("p_H") is None else np.asarray(data["p_H"], dtype=float)
    W_H = None if data.get("W_H") is None else np.asarray(data["W_H"], dtype=float)
    joints = None if data.get("joints") is None else np.asarray(data["joints"], dtype=float)
    n = XO.shape[0]
    rng = np.random.default_rng(seed)
    state_pos = adam_state(nets.pos.params)
    state_rot = adam_state(nets.rot.params)
    last = {}
    for idx in training_batches(n, batch, steps, rng):
        cp, cr = nets._conds(
            None if p_H is None else p_H[idx],
            None if W_H is None else W_H[idx],
            None if joints is None else joints[idx],
            wrist_noise=noise_deg,
            rng=rng,
            n=len(idx),
        )
        out = nets.pos.forward({"img": XO[idx], "cond": cp})
        loss_p, g = mse_loss(out["h.out"], p_t[idx])
        optimizer_step(nets.pos.params, nets.pos.backward({"h.out": g}), state_pos, lr=lr)
        out = nets.rot.forward({"img": XOc[idx], "cond": cr})
        loss_w, g = batch_orientation_loss(out["h.out"], W_t[idx], nets.symmetry)
        optimizer_step(nets.rot.params, nets.rot.backward({"h.out": g}), state_rot, lr=lr)
        last["pos"] = loss_p
        last["rot"] = loss_w
    nets.trained = True
    return last
