"""Exhaustive gradient verification probes.

Probes come in two groups: one minimal network per layer kind, and a
miniature version of every model head in the package. Each probe is
checked against central finite differences over every parameter, so
probe sizes are kept small on purpose; the shapes still exercise the
same code paths as the full-size models.
"""

from __future__ import annotations

import numpy as np

from ..models import HandNets, ObjectNets, SiameseModel, TogTModel
from ..tensorcore import LayerSpec, Network, gradient_check, mse_loss

TOLERANCE = 1e-4


def _loss_on(name):
    def loss_fn(out):
        y = out[name]
        loss, g = mse_loss(y, np.zeros_like(y))
        return loss, {name: g}
    return loss_fn


def layer_probes(seed=0):
    """{name: (net, inputs, output id)} covering every layer kind."""
    rng = np.random.default_rng(seed)
    probes = {}

    probes["dense"] = (
        Network([LayerSpec("d", "dense", ["x"], units=5)], {"x": (4,)}, ["d"], seed=1),
        {"x": rng.normal(size=(3, 4))}, "d",
    )
    probes["relu"] = (
        Network([LayerSpec("d", "dense", ["x"], units=5),
                 LayerSpec("r", "relu", ["d"])], {"x": (4,)}, ["r"], seed=2),
        {"x": rng.normal(size=(3, 4))}, "r",
    )
    probes["sigmoid"] = (
        Network([LayerSpec("d", "dense", ["x"], units=5),
                 LayerSpec("sg", "sigmoid", ["d"])], {"x": (4,)}, ["sg"], seed=3),
        {"x": rng.normal(size=(3, 4))}, "sg",
    )
    probes["conv2d"] = (
        Network([LayerSpec("c", "conv2d", ["img"], channels=2, kernel=3,
                           stride=2, padding=1)],
                {"img": (2, 6, 6)}, ["c"], seed=4),
        {"img": rng.normal(size=(2, 2, 6, 6))}, "c",
    )
    probes["conv3d"] = (
        Network([LayerSpec("c", "conv3d", ["vox"], channels=2, kernel=3,
                           stride=2, padding=1)],
                {"vox": (1, 4, 4, 4)}, ["c"], seed=5),
        {"vox": rng.normal(size=(2, 1, 4, 4, 4))}, "c",
    )
    probes["flatten"] = (
        Network([LayerSpec("c", "conv2d", ["img"], channels=2, kernel=3,
                           stride=2, padding=1),
                 LayerSpec("fl", "flatten", ["c"]),
                 LayerSpec("d", "dense", ["fl"], units=2)],
                {"img": (1, 6, 6)}, ["d"], seed=6),
        {"img": rng.normal(size=(2, 1, 6, 6))}, "d",
    )
    probes["concat"] = (
        Network([LayerSpec("fa", "dense", ["a"], units=3),
                 LayerSpec("fb", "dense", ["b"], units=2),
                 LayerSpec("cat", "concat", ["fa", "fb"]),
                 LayerSpec("d", "dense", ["cat"], units=2)],
                {"a": (2,), "b": (3,)}, ["d"], seed=7),
        {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=(3, 3))}, "d",
    )
    probes["dropout"] = (
        Network([LayerSpec("d", "dense", ["x"], units=5),
                 LayerSpec("dp", "dropout", ["d"], rate=0.3),
                 LayerSpec("o", "dense", ["dp"], units=2)],
                {"x": (4,)}, ["o"], seed=8),
        {"x": rng.normal(size=(3, 4))}, "o",
    )
    return probes


def model_probes(seed=0):
    """{name: (net, inputs, output id)} with one entry per model head."""
    rng = np.random.default_rng(seed + 100)
    hand = HandNets(seed=seed, image=8, crop=8, channels=(2, 3), hidden=6)
    obj = ObjectNets("knife", seed=seed, image=8, crop=8, channels=(2, 3), hidden=6)
    siam = SiameseModel(seed=seed, crop=8, grid=8, dim=4,
                        image_channels=(2, 3), mesh_channels=(2,))
    togt = TogTModel(seed=seed, grid=8, channels=(2,), hidden=6)

    img8 = rng.normal(size=(2, 2, 8, 8))
    probes = {
        "hand_pos_initial": (hand.pos, {"img": img8, "cond": rng.normal(size=(2, 3))}, "i.out"),
        "hand_pos_refined": (hand.pos, {"img": img8, "cond": rng.normal(size=(2, 3))}, "r.out"),
        "hand_pose_initial": (hand.pose, {"img": img8, "cond": rng.normal(size=(2, 9))}, "i.out"),
        "hand_pose_refined": (hand.pose, {"img": img8, "cond": rng.normal(size=(2, 9))}, "r.out"),
        "object_pos": (obj.pos, {"img": img8, "cond": rng.normal(size=(2, 3))}, "h.out"),
        "object_rot": (obj.rot, {"img": img8, "cond": rng.normal(size=(2, 9))}, "h.out"),
        "siamese_image": (siam.image, {"img": img8}, "emb"),
        "siamese_mesh": (siam.mesh, {"vox": rng.normal(size=(2, 1, 8, 8, 8))}, "emb"),
        "togt_trunk": (togt.trunk, {"vox": rng.normal(size=(2, 1, 8, 8, 8))}, togt.feat_id),
        "togt_head": (togt.head, {
            "feat": rng.normal(size=(2, togt.trunk.shapes[togt.feat_id][0])),
            "g": rng.normal(size=(2, 8)),
            "task": rng.normal(size=(2, 3)),
        }, "h.out"),
    }
    return probes


def run_all(seed=0):
    """Max relative gradient error per probe, worst first."""
    results = {}
    probes = {}
    probes.update(layer_probes(seed))
    probes.update(model_probes(seed))
    for name, (net, inputs, out_id) in probes.items():
        worst, _ = gradient_check(net, inputs, _loss_on(out_id))
        results[name] = worst
    return dict(sorted(results.items(), key=lambda kv: -kv[1]))
