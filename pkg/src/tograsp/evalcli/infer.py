"""Grasp inference on a raw point cloud.

Pipeline: task check, normal estimation when the cloud has none,
candidate sampling over cloud points with random rolls and standoffs,
voxelization, suitability scoring, cloud stability scoring, selection.
Everything downstream of the RNG seed is deterministic, so the same
cloud and seed always produce the same ranking.
"""

from __future__ import annotations

import numpy as np

from ..geometry import Grasp
from ..models import (
    NoValidGrasp,
    check_task,
    select_grasp,
    stability_score_cloud,
    togt_predict,
)
from ..voxelgrid import estimate_normals, load_point_cloud, voxelize


def _with_normals(cloud):
    if cloud.normals is None:
        cloud = estimate_normals(cloud)
    valid = (cloud.normal_valid if cloud.normal_valid is not None
             else np.ones(len(cloud.points), bool))
    return cloud, valid


def run_inference(cloud, category, task, model, n_candidates=200, seed=0,
                  suit_threshold=0.5, stab_threshold=0.5, workspace=None):
    """Score and select a task-suitable grasp on a point cloud.

    cloud: PointCloud or a path to one; needs >= 50 points. model: a
    trained suitability model. workspace: optional (x0, y0, z0, x1, y1,
    z1) box in mm; anchors outside it are dropped before scoring, the
    stand-in for a reachability filter. Raises IncompatibleTask before
    any scoring, NoValidGrasp when nothing passes the thresholds.

    Returns a dict with the candidate grasps, their suitability and
    stability scores, a ranking (suitable candidates first, more stable
    first), and the chosen grasp with its index.
    """
    check_task(category, task)
    if isinstance(cloud, str):
        cloud = load_point_cloud(cloud)
    if len(cloud.points) < 50:
        raise ValueError(f"need at least 50 points, got {len(cloud.points)}")
    cloud, valid = _with_normals(cloud)

    anchors = np.nonzero(valid)[0]
    if workspace is not None:
        lo = np.asarray(workspace[:3], dtype=float)
        hi = np.asarray(workspace[3:], dtype=float)
        pts = cloud.points[anchors]
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        anchors = anchors[inside]
        if anchors.size == 0:
            raise NoValidGrasp("workspace filter removed every candidate anchor")

    rng = np.random.default_rng(seed)
    idx = anchors[rng.integers(0, anchors.size, size=n_candidates)]
    grasps = [
        Grasp(anchor=cloud.points[i], normal=cloud.normals[i],
              omega=float(rng.uniform(0.0, 360.0)),
              s=float(rng.uniform(0.0, 20.0)))
        for i in idx
    ]

    grid = voxelize(cloud)
    suitability = togt_predict(model, grid, grasps, task)
    stability = np.array([stability_score_cloud(cloud, g) for g in grasps])
    order = np.lexsort((
        np.arange(len(grasps)),
        -stability,
        -(suitability >= suit_threshold).astype(float),
    ))
    chosen, chosen_index = select_grasp(grasps, suitability, stability,
                                        suit_threshold, stab_threshold)
    return {
        "grasps": grasps,
        "anchor_indices": idx,
        "suitability": suitability,
        "stability": stability,
        "order": order,
        "chosen": chosen,
        "chosen_index": chosen_index,
    }
