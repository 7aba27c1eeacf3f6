"""Hand pose estimation: initial heads plus object-conditioned refinement.

Two networks share nothing with each other but each shares its conv
trunk between an initial head and a refinement head:

    position net: full scene image -> wrist position (mm)
    pose net:     hand crop -> wrist rotation (raw 9) + 21 joint angles

The refinement heads concatenate object-pose conditioning (position or
rotation) onto the flattened trunk features. They are trained in a
second phase with the trunk and initial heads frozen, so refinement can
only reshuffle the head, never degrade the initial predictor.
"""

from __future__ import annotations

import numpy as np

from ..handkin import HandModel
from ..tensorcore import Network, adam_state, mse_loss, optimizer_step
from .common import (
    ANGLE_SCALE,
    POS_SCALE,
    UntrainedModel,
    conv_stack,
    dense_head,
    inject_orientation_noise,
    load_nets,
    param_keys,
    project_rotations,
    save_nets,
    training_batches,
)

POSE_DIM = 30  # 9 rotation values + 21 joint angles


def _two_head_net(input_shape, cond_dim, out_dim, seed, channels, hidden):
    specs, feat = conv_stack("t.", "img", channels)
    init_specs, init_out = dense_head("i.", feat, out_dim, hidden=hidden)
    ref_specs, ref_out = dense_head("r.", feat, out_dim, cond="cond", hidden=hidden)
    return Network(
        specs + init_specs + ref_specs,
        {"img": input_shape, "cond": (cond_dim,)},
        [init_out, ref_out],
        seed=seed,
    )


class HandNets:
    """Initial + refinement predictors for wrist pose and joint angles."""

    def __init__(self, seed=0, image=64, crop=32, channels=(8, 16, 32), hidden=128,
                 hand_model=None):
        self.seed = int(seed)
        self.image = image
        self.crop = crop
        self.channels = tuple(channels)
        self.hidden = hidden
        self.pos = _two_head_net((2, image, image), 3, 3, seed, channels, hidden)
        self.pose = _two_head_net((2, crop, crop), 9, POSE_DIM, seed + 1, channels, hidden)
        model = hand_model if hand_model is not None else HandModel.default()
        self.limits_lo, self.limits_hi = model.limits()
        self.trained = False
        self.refined = False

    # -- persistence ----------------------------------------------------

    def save(self, directory):
        save_nets(
            directory,
            {
                "kind": "hand",
                "seed": self.seed,
                "image": self.image,
                "crop": self.crop,
                "channels": list(self.channels),
                "hidden": self.hidden,
                "trained": self.trained,
                "refined": self.refined,
                "limits_lo": list(self.limits_lo),
                "limits_hi": list(self.limits_hi),
            },
            {"pos": self.pos, "pose": self.pose},
        )

    @classmethod
    def load(cls, directory):
        manifest, nets = load_nets(directory)
        obj = cls.__new__(cls)
        obj.seed = manifest["seed"]
        obj.image = manifest["image"]
        obj.crop = manifest["crop"]
        obj.channels = tuple(manifest["channels"])
        obj.hidden = manifest["hidden"]
        obj.pos = nets["pos"]
        obj.pose = nets["pose"]
        obj.limits_lo = np.array(manifest["limits_lo"])
        obj.limits_hi = np.array(manifest["limits_hi"])
        obj.trained = manifest["trained"]
        obj.refined = manifest["refined"]
        return obj

    # -- prediction -------------------------------------------------------

    def _pose_split(self, out):
        W = project_rotations(out[:, :9])
        beta = np.clip(out[:, 9:] * ANGLE_SCALE, self.limits_lo, self.limits_hi)
        return W, beta

    def predict_initial(self, X, XHc):
        if not self.trained:
            raise UntrainedModel("hand nets: train or load weights first")
        X = np.asarray(X, dtype=float)
        XHc = np.asarray(XHc, dtype=float)
        n = X.shape[0]
        p = self.pos.forward({"img": X, "cond": np.zeros((n, 3))})["i.out"] * POS_SCALE
        out = self.pose.forward({"img": XHc, "cond": np.zeros((n, 9))})["i.out"]
        W, beta = self._pose_split(out)
        return p, W, beta

    def predict_refined(self, X, XHc, p_O, W_O):
        if not self.refined:
            raise UntrainedModel("hand nets: refinement heads not trained")
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        cond_p = np.asarray(p_O, dtype=float) / POS_SCALE
        cond_w = np.asarray(W_O, dtype=float).reshape(n, 9)
        p = self.pos.forward({"img": X, "cond": cond_p})["r.out"] * POS_SCALE
        out = self.pose.forward({"img": np.asarray(XHc, dtype=float), "cond": cond_w})["r.out"]
        W, beta = self._pose_split(out)
        return p, W, beta


def _pose_targets(W_H, beta):
    n = W_H.shape[0]
    return np.concatenate([W_H.reshape(n, 9), beta / ANGLE_SCALE], axis=1)


def train_hand(nets, data, steps=600, refine_steps=400, batch=32, lr=1e-3,
               seed=0, noise_deg=30.0, zero_object=False):
    """Two-phase training.

    Phase 1 fits the trunks and initial heads. Phase 2 freezes those and
    fits the refinement heads on object-pose conditioning; rotation
    conditioning gets per-sample Euler noise so the heads cannot lean on
    it blindly. zero_object zeroes the conditioning instead (ablation).
    Returns the final batch losses per head.
    """
    X = np.asarray(data["X"], dtype=float)
    XHc = np.asarray(data["XHc"], dtype=float)
    p_t = np.asarray(data["p_H"], dtype=float) / POS_SCALE
    pose_t = _pose_targets(np.asarray(data["W_H"], dtype=float),
                           np.asarray(data["beta"], dtype=float))
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    state_pos = adam_state(nets.pos.params)
    state_pose = adam_state(nets.pose.params)
    zeros3 = np.zeros((min(batch, n), 3))
    zeros9 = np.zeros((min(batch, n), 9))
    last = {}
    for idx in training_batches(n, batch, steps, rng):
        out = nets.pos.forward({"img": X[idx], "cond": zeros3[: len(idx)]})
        loss_p, g = mse_loss(out["i.out"], p_t[idx])
        optimizer_step(nets.pos.params, nets.pos.backward({"i.out": g}), state_pos, lr=lr)
        out = nets.pose.forward({"img": XHc[idx], "cond": zeros9[: len(idx)]})
        loss_w, g = mse_loss(out["i.out"], pose_t[idx])
        optimizer_step(nets.pose.params, nets.pose.backward({"i.out": g}), state_pose, lr=lr)
        last["pos"] = loss_p
        last["pose"] = loss_w
    nets.trained = True

    if refine_steps <= 0:
        return last
    cond_p_all = np.zeros((n, 3)) if zero_object else np.asarray(data["p_O"], dtype=float) / POS_SCALE
    W_O = np.asarray(data["W_O"], dtype=float)
    ref_pos_keys = param_keys(nets.pos, ["r"])
    ref_pose_keys = param_keys(nets.pose, ["r"])
    for idx in training_batches(n, batch, refine_steps, rng):
        if zero_object:
            cond_w = np.zeros((len(idx), 9))
        else:
            cond_w = np.stack(
                [inject_orientation_noise(W_O[i], rng, noise_deg).reshape(9) for i in idx]
            )
        out = nets.pos.forward({"img": X[idx], "cond": cond_p_all[idx]})
        loss_p, g = mse_loss(out["r.out"], p_t[idx])
        optimizer_step(nets.pos.params, nets.pos.backward({"r.out": g}),
                       state_pos, lr=lr, keys=ref_pos_keys)
        out = nets.pose.forward({"img": XHc[idx], "cond": cond_w})
        loss_w, g = mse_loss(out["r.out"], pose_t[idx])
        optimizer_step(nets.pose.params, nets.pose.backward({"r.out": g}),
                       state_pose, lr=lr, keys=ref_pose_keys)
        last["pos_refine"] = loss_p
        last["pose_refine"] = loss_w
    nets.refined = True
    return last
