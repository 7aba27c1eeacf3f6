"""Dataset building: meshes, clouds, grasps, renders, JSONL manifest.

Layout under the output directory:

    manifest.jsonl        one JSON record per sample
    meshes/index.json     mesh ids, categories, train/test assignment
    meshes/<id>.obj       triangle mesh
    meshes/<id>.parts.json  face labels, point labels, dimensions
    meshes/<id>.xyz       surface cloud with normals
    meshes/<id>.voxg      occupancy grid
    samples/<name>.npz    image stacks + joint positions

Manifests and sidecar JSON are written with sorted keys and no
timestamps, so identical configs produce byte-identical files. Sample
RNG streams derive from (seed, category, split, index), making records
independent of generation order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..geometry import Pose
from ..handkin import HandConfig, HandModel, forward_kinematics
from ..models.togt import TASK_FOR_CATEGORY
from ..voxelgrid import (
    PointCloud,
    TriMesh,
    load_point_cloud,
    load_voxel_grid,
    sample_mesh_surface,
    save_point_cloud,
    save_voxel_grid,
    voxelize,
)
from .grasps import sample_grasps, suitability_rule
from .meshes import generate_mesh
from .render import Camera, SubjectOutOfFrame, render_sample

SPLITS = ("train", "test", "heldout")


class IoFailure(OSError):
    """Dataset files could not be written or read back."""


@dataclass
class DatasetConfig:
    categories: tuple = ("bottle", "knife", "spoon")
    n_train: int = 64          # samples per category and split
    n_test: int = 0
    n_heldout: int = 0
    n_train_meshes: int = 8
    n_test_meshes: int = 2
    per_triangle: int = 20
    cam_scale: float = 6.5
    seed: int = 0

    def __post_init__(self):
        self.categories = tuple(self.categories)
        if self.n_train < 1:
            raise ValueError("need at least one training sample per category")
        if self.n_train_meshes < 1:
            raise ValueError("need at least one training mesh per category")
        if self.n_test > 0 and self.n_test_meshes < 1:
            raise ValueError("test samples need test meshes")

    def to_dict(self):
        d = asdict(self)
        d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def save_obj(path, mesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0] not in ("v", "f"):
                continue
            if parts[0] == "v":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{line_no}: malformed vertex")
                verts.append([float(x) for x in parts[1:]])
            else:
                if len(parts) != 4:
                    raise ValueError(f"{path}:{line_no}: only triangles supported")
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:]])
    if not verts or not faces:
        raise ValueError(f"{path}: no mesh data")
    return TriMesh(np.array(verts), np.array(faces))


def _random_rotation(rng):
    # uniform over SO(3) via normalized quaternion
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _build_meshes(out_dir, config):
    """Generate, save, and return all mesh bundles keyed by id."""
    mesh_dir = os.path.join(out_dir, "meshes")
    os.makedirs(mesh_dir, exist_ok=True)
    bundles = {}
    index = []
    for ci, cat in enumerate(config.categories):
        total = config.n_train_meshes + config.n_test_meshes
        for k in range(total):
            mesh_id = f"{cat}_{k:03d}"
            split = "train" if k < config.n_train_meshes else "test"
            mesh, face_labels, params = generate_mesh(cat, [config.seed, ci, 7000 + k])
            cloud, src = sample_mesh_surface(
                mesh, per_triangle=config.per_triangle,
                seed=int(np.random.default_rng([config.seed, ci, 8000 + k]).integers(2**31)),
                return_faces=True,
            )
            point_labels = [face_labels[i] for i in src]
            grid = voxelize(cloud)
            save_obj(os.path.join(mesh_dir, f"{mesh_id}.obj"), mesh)
            with open(os.path.join(mesh_dir, f"{mesh_id}.parts.json"), "w") as fh:
                json.dump(
                    {
                        "category": cat,
                        "dims": params.dims,
                        "face_labels": face_labels,
                        "point_labels": point_labels,
                    },
                    fh, sort_keys=True,
                )
                fh.write("\n")
            save_point_cloud(os.path.join(mesh_dir, f"{mesh_id}.xyz"), cloud)
            save_voxel_grid(os.path.join(mesh_dir, f"{mesh_id}.voxg"), grid)
            bundles[mesh_id] = {
                "id": mesh_id,
                "category": cat,
                "split": split,
                "mesh": mesh,
                "face_labels": face_labels,
                "cloud": cloud,
                "point_labels": point_labels,
                "grid": grid,
                "params": params,
            }
            index.append({"id": mesh_id, "category": cat, "split": split})
    with open(os.path.join(mesh_dir, "index.json"), "w") as fh:
        json.dump({"meshes": index}, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return bundles


def _make_sample(bundle, cat, rng, cam, hand_model):
    """Draw poses until the scene renders; deterministic retry stream."""
    for _ in range(50):
        p_O = np.array([
            rng.uniform(-35.0, 35.0),
            rng.uniform(-35.0, 35.0),
            rng.uniform(450.0, 550.0),
        ])
        W_O = _random_rotation(rng)
        obj_pose = Pose(p_O, W_O)
        rec = sample_grasps(
            bundle["cloud"], bundle["point_labels"], cat, seed=rng, n=1,
            hand_model=hand_model,
        )[0]
        hand_world = obj_pose.compose(rec["hand_obj"])
        joints = forward_kinematics(
            hand_model, HandConfig(wrist=hand_world, angles=rec["beta"])
        )
        try:
            images = render_sample(bundle["mesh"], obj_pose, joints, cam)
        except SubjectOutOfFrame:
            continue
        return obj_pose, rec, hand_world, joints, images
    raise SubjectOutOfFrame("no renderable pose found in 50 draws")


def build_dataset(out_dir, config):
    """Write the full dataset; returns the manifest record list."""
    try:
        return _build_dataset(out_dir, config)
    except OSError as e:
        raise IoFailure(str(e)) from e


def _build_dataset(out_dir, config):
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    bundles = _build_meshes(out_dir, config)
    cam = Camera(scale=config.cam_scale)
    hand_model = HandModel.default()
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(config.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")

    counts = {"train": config.n_train, "test": config.n_test,
              "heldout": config.n_heldout}
    records = []
    for ci, cat in enumerate(config.categories):
        train_ids = [m for m in bundles
                     if bundles[m]["category"] == cat and bundles[m]["split"] == "train"]
        test_ids = [m for m in bundles
                    if bundles[m]["category"] == cat and bundles[m]["split"] == "test"]
        mesh_pool = {"train": train_ids, "test": test_ids, "heldout": train_ids}
        for si, split in enumerate(SPLITS):
            for i in range(counts[split]):
                rng = np.random.default_rng([config.seed, ci, si, i])
                pool = mesh_pool[split]
                bundle = bundles[pool[i % len(pool)]]
                obj_pose, rec, hand_world, joints, images = _make_sample(
                    bundle, cat, rng, cam, hand_model
                )
                name = f"{cat}_{split}_{i:04d}"
                npz_rel = os.path.join("samples", f"{name}.npz")
                np.savez(
                    os.path.join(out_dir, npz_rel),
                    X=images["X"].astype(np.float32),
                    XO=images["XO"].astype(np.float32),
                    XHc=images["XHc"].astype(np.float32),
                    XOc=images["XOc"].astype(np.float32),
                    joints=joints,
                )
                task = TASK_FOR_CATEGORY[cat]
                g = rec["grasp"]
                records.append({
                    "index": len(records),
                    "category": cat,
                    "split": split,
                    "i": i,
                    "mesh": bundle["id"],
                    "task": task,
                    "suitable": suitability_rule(rec["anchor_label"], cat, task),
                    "anchor_label": rec["anchor_label"],
                    "npz": npz_rel,
                    "p_H": hand_world.p.tolist(),
                    "W_H": hand_world.W.reshape(9).tolist(),
                    "beta": rec["beta"].tolist(),
                    "beta_source": "template+jitter",
                    "p_O": obj_pose.p.tolist(),
                    "W_O": obj_pose.W.reshape(9).tolist(),
                    "grasp": {
                        "anchor": g.anchor.tolist(),
                        "normal": g.normal.tolist(),
                        "omega": g.omega,
                        "s": g.s,
                    },
                    "hand_obj": {
                        "p": rec["hand_obj"].p.tolist(),
                        "W": rec["hand_obj"].W.reshape(9).tolist(),
                    },
                })
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return records


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def read_manifest(dataset_dir):
    path = os.path.join(dataset_dir, "manifest.jsonl")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_split(dataset_dir, split, categories=None):
    """Arrays per category for one split.

    Returns {category: data dict}; image stacks come back float64 for
    the networks, labels as arrays, grasps as Grasp objects.
    """
    from ..geometry import Grasp

    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    records = [r for r in read_manifest(dataset_dir) if r["split"] == split]
    if categories is not None:
        records = [r for r in records if r["category"] in categories]
    out = {}
    by_cat = {}
    for r in records:
        by_cat.setdefault(r["category"], []).append(r)
    for cat, recs in by_cat.items():
        imgs = {k: [] for k in ("X", "XO", "XHc", "XOc", "joints")}
        for r in recs:
            with np.load(os.path.join(dataset_dir, r["npz"])) as z:
                for k in imgs:
                    imgs[k].append(z[k].astype(float))
        out[cat] = {
            "X": np.stack(imgs["X"]),
            "XO": np.stack(imgs["XO"]),
            "XHc": np.stack(imgs["XHc"]),
            "XOc": np.stack(imgs["XOc"]),
            "joints": np.stack(imgs["joints"]),
            "p_H": np.array([r["p_H"] for r in recs]),
            "W_H": np.array([r["W_H"] for r in recs]).reshape(-1, 3, 3),
            "beta": np.array([r["beta"] for r in recs]),
            "p_O": np.array([r["p_O"] for r in recs]),
            "W_O": np.array([r["W_O"] for r in recs]).reshape(-1, 3, 3),
            "mesh_ids": [r["mesh"] for r in recs],
            "suitable": np.array([r["suitable"] for r in recs]),
            "anchor_labels": [r["anchor_label"] for r in recs],
            "grasps": [
                Grasp(anchor=r["grasp"]["anchor"], normal=r["grasp"]["normal"],
                      omega=r["grasp"]["omega"], s=r["grasp"]["s"])
                for r in recs
            ],
            "task": recs[0]["task"],
        }
    return out


def load_mesh_bundle(dataset_dir):
    """All stored meshes with clouds, labels, and grids, keyed by id."""
    mesh_dir = os.path.join(dataset_dir, "meshes")
    with open(os.path.join(mesh_dir, "index.json")) as fh:
        index = json.load(fh)["meshes"]
    bundles = {}
    for entry in index:
        mesh_id = entry["id"]
        with open(os.path.join(mesh_dir, f"{mesh_id}.parts.json")) as fh:
            parts = json.load(fh)
        bundles[mesh_id] = {
            "id": mesh_id,
            "category": entry["category"],
            "split": entry["split"],
            "mesh": load_obj(os.path.join(mesh_dir, f"{mesh_id}.obj")),
            "face_labels": parts["face_labels"],
            "point_labels": parts["point_labels"],
            "dims": parts["dims"],
            "cloud": load_point_cloud(os.path.join(mesh_dir, f"{mesh_id}.xyz")),
            "grid": load_voxel_grid(os.path.join(mesh_dir, f"{mesh_id}.voxg")),
        }
    return bundles
