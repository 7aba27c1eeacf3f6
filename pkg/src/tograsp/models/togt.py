"""Task-conditioned grasp suitability.

A voxel trunk encodes object shape once; a small head scores each
(grasp, task) pair against that encoding. The two networks are chained
manually: the head's gradient with respect to its feature input feeds
the trunk's backward pass, so the pair trains end to end.
"""

from __future__ import annotations

import numpy as np

from ..tensorcore import (
    LayerSpec,
    Network,
    adam_state,
    optimizer_step,
    sigmoid_ce_loss,
)
from ..voxelgrid import GRID_DIM, dropout_points, voxelize
from .common import UntrainedModel, conv3d_stack, load_nets, save_nets, sigmoid

TASKS = ("pour", "cut", "stir")
TASK_FOR_CATEGORY = {"bottle": "pour", "knife": "cut", "spoon": "stir"}

GRASP_VEC_DIM = 8
OMEGA_SCALE = 360.0
STANDOFF_SCALE = 20.0


class IncompatibleTask(ValueError):
    """Task does not apply to the object category."""


def task_onehot(task):
    if task not in TASKS:
        raise IncompatibleTask(f"unknown task {task!r}; expected one of {TASKS}")
    v = np.zeros(len(TASKS))
    v[TASKS.index(task)] = 1.0
    return v


def check_task(category, task):
    expected = TASK_FOR_CATEGORY.get(category)
    if expected is None:
        raise IncompatibleTask(f"unknown category {category!r}")
    if task != expected:
        raise IncompatibleTask(f"task {task!r} does not apply to {category!r}")


def grasp_vector(grasp, grid):
    """Encode a grasp relative to a voxel grid: anchor in normalized
    grid coordinates, unit approach direction, scaled roll and
    stand-off."""
    cell = (grasp.anchor - grid.origin) / (grid.scale * GRID_DIM)
    return np.concatenate([
        cell,
        -grasp.normal,
        [grasp.omega / OMEGA_SCALE, grasp.s / STANDOFF_SCALE],
    ])


def _head_net(feat_dim, hidden, seed):
    specs = [
        LayerSpec("h.cat", "concat", ["feat", "g", "task"]),
        LayerSpec("h.d1", "dense", ["h.cat"], units=hidden),
        LayerSpec("h.r1", "relu", ["h.d1"]),
        LayerSpec("h.out", "dense", ["h.r1"], units=1),
    ]
    inputs = {
        "feat": (feat_dim,),
        "g": (GRASP_VEC_DIM,),
        "task": (len(TASKS),),
    }
    return Network(specs, inputs, ["h.out"], seed=seed)


class TogTModel:
    def __init__(self, seed=0, grid=GRID_DIM, channels=(8, 16), hidden=128):
        self.seed = int(seed)
        self.grid = grid
        self.channels = tuple(channels)
        self.hidden = hidden
        specs, self.feat_id = conv3d_stack("t.", "vox", channels)
        self.trunk = Network(specs, {"vox": (1, grid, grid, grid)}, [self.feat_id], seed=seed)
        feat_dim = self.trunk.shapes[self.feat_id][0]
        self.head = _head_net(feat_dim, hidden, seed + 1)
        self.trained = False

    def save(self, directory):
        save_nets(
            directory,
            {
                "kind": "togt",
                "seed": self.seed,
                "grid": self.grid,
                "channels": list(self.channels),
                "hidden": self.hidden,
                "feat_id": self.feat_id,
                "trained": self.trained,
            },
            {"trunk": self.trunk, "head": self.head},
        )

    @classmethod
    def load(cls, directory):
        manifest, nets = load_nets(directory)
        obj = cls.__new__(cls)
        obj.seed = manifest["seed"]
        obj.grid = manifest["grid"]
        obj.channels = tuple(manifest["channels"])
        obj.hidden = manifest["hidden"]
        obj.feat_id = manifest["feat_id"]
        obj.trunk = nets["trunk"]
        obj.head = nets["head"]
        obj.trained = manifest["trained"]
        return obj

    def encode(self, grid):
        """Trunk features for one voxel grid, shape (feat_dim,)."""
        occ = grid.occupancy.astype(float)[None, None]
        return self.trunk.forward({"vox": occ})[self.feat_id][0]

    def score(self, feat, gvecs, task, chunk=128):
        """Suitability probabilities for grasp vectors against cached
        trunk features."""
        gvecs = np.asarray(gvecs, dtype=float).reshape(-1, GRASP_VEC_DIM)
        tvec = task_onehot(task)
        out = []
        for i in range(0, gvecs.shape[0], chunk):
            part = gvecs[i : i + chunk]
            b = part.shape[0]
            logits = self.head.forward({
                "feat": np.repeat(feat[None, :], b, axis=0),
                "g": part,
                "task": np.repeat(tvec[None, :], b, axis=0),
            })["h.out"][:, 0]
            out.append(sigmoid(logits))
        return np.concatenate(out)


def togt_predict(model, grid, grasps, task):
    """Suitability probability per grasp for one object grid."""
    if not model.trained:
        raise UntrainedModel("suitability model has not been trained")
    feat = model.encode(grid)
    gvecs = np.stack([grasp_vector(g, grid) for g in grasps])
    return model.score(feat, gvecs, task)


def togt_segment(model, grid, grasps, task, threshold=0.5):
    """(boolean suitability mask, probabilities). threshold in (0, 1)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    probs = togt_predict(model, grid, grasps, task)
    return probs >= threshold, probs


def train_togt(model, records, steps=300, batch=16, lr=1e-3, seed=0,
               dropout_max=0.4):
    """Train on labelled grasp records.

    records: dicts with keys cloud (PointCloud), grasp (Grasp), task,
    label (0/1). Each draw re-voxelizes the cloud after a random point
    dropout so the trunk never sees the exact same grid twice. Returns
    the final batch loss.
    """
    if not records:
        raise ValueError("no training records")
    rng = np.random.default_rng(seed)
    st_trunk = adam_state(model.trunk.params)
    st_head = adam_state(model.head.params)
    n = len(records)
    loss = None
    for _ in range(steps):
        idx = rng.integers(0, n, size=min(batch, n))
        occs, gvecs, tvecs, labels = [], [], [], []
        for i in idx:
            rec = records[int(i)]
            rate = float(rng.uniform(0.0, dropout_max))
            cloud = dropout_points(rec["cloud"], rate, int(rng.integers(2**31)))
            grid = voxelize(cloud)
            occs.append(grid.occupancy.astype(float)[None])
            gvecs.append(grasp_vector(rec["grasp"], grid))
            tvecs.append(task_onehot(rec["task"]))
            labels.append(float(rec["label"]))
        feats = model.trunk.forward({"vox": np.stack(occs)})[model.feat_id]
        logits = model.head.forward({
            "feat": feats,
            "g": np.stack(gvecs),
            "task": np.stack(tvecs),
        })["h.out"]
        loss, g = sigmoid_ce_loss(logits[:, 0], np.array(labels))
        head_grads = model.head.backward({"h.out": g[:, None]})
        trunk_grads = model.trunk.backward({model.feat_id: model.head.input_grads["feat"]})
        optimizer_step(model.head.params, head_grads, st_head, lr=lr)
        optimizer_step(model.trunk.params, trunk_grads, st_trunk, lr=lr)
    model.trained = True
    return loss
