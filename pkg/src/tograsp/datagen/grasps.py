"""Grasp synthesis on sampled surfaces plus task-suitability labels.

Grasps are anchored at surface cloud points and re-derived from the
jittered hand pose through grasp_from_hand, so every stored grasp is
consistent with its stored hand pose by construction. Category rules
reject grasps a person would not use (blade, bowl, top of a bottle
cap); the rules run both on the proposed anchor and on the anchor the
hand pose actually maps back to. Demonstration rolls concentrate
around one canonical grip per surface point (OMEGA_JITTER_DEG);
uniform_labeled_grasps keeps the full roll range since its output is
candidate grasps, not demonstrations.
"""

from __future__ import annotations

import numpy as np

from ..geometry import Grasp, Pose, grasp_frame, grasp_from_hand, rotation_about_axis
from ..handkin import HandModel
from ..models.togt import check_task

# flexed-finger template: thumb (5 dof) then four fingers (4 dof each),
# all at least 8 deg inside the default model's limits
POWER_GRASP_TEMPLATE = np.array([
    20.0, 30.0, 0.0, 40.0, 30.0,
    0.0, 55.0, 50.0, 30.0,
    0.0, 55.0, 50.0, 30.0,
    0.0, 55.0, 50.0, 30.0,
    0.0, 55.0, 50.0, 30.0,
])

LATERAL_JITTER_MM = 0.3
ROTATION_JITTER_DEG = 5.0
BETA_JITTER_DEG = 8.0
CAP_TOP_NORMAL_Z = 0.9
# demonstrations roll the hand near one canonical grip, not uniformly
OMEGA_JITTER_DEG = 25.0


class RejectionExhausted(RuntimeError):
    """Rejection sampling failed to place the requested grasps."""


def _rejected(label, normal, category):
    if category == "knife":
        return label == "blade"
    if category == "spoon":
        return label == "bowl"
    if category == "bottle":
        return label == "cap" and normal[2] > CAP_TOP_NORMAL_Z
    raise ValueError(f"unknown category {category!r}")


def suitability_rule(label, category, task):
    """Ground-truth task region: 1 when a grasp on this part suits the
    task."""
    check_task(category, task)
    if task in ("cut", "stir"):
        return int(label == "handle")
    return int(label == "body")


def label_task_suitability(grasp, points, point_labels, category, task):
    """Suitability bit for a grasp against labelled surface points.

    The grasp's part is the label of the nearest cloud point to its
    anchor. Raises IncompatibleTask before touching geometry.
    """
    check_task(category, task)
    points = np.asarray(points, dtype=float)
    idx = int(np.argmin(np.linalg.norm(points - grasp.anchor, axis=1)))
    return suitability_rule(point_labels[idx], category, task)


def _jittered_hand(pose, rng):
    lateral = rng.uniform(-LATERAL_JITTER_MM, LATERAL_JITTER_MM, size=2)
    p = pose.p + pose.W[:, 0] * lateral[0] + pose.W[:, 1] * lateral[1]
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    W = rotation_about_axis(axis, rng.uniform(0.0, ROTATION_JITTER_DEG)) @ pose.W
    return Pose(p, W)


def sample_grasps(cloud, point_labels, category, seed, n, hand_model=None):
    """n rejection-sampled grasps with hand poses, all in object frame.

    cloud must carry normals. Returns dicts with keys grasp, hand_obj,
    beta, anchor_index, anchor_label. Raises RejectionExhausted after
    100 n attempts.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if cloud.normals is None:
        raise ValueError("grasp sampling requires cloud normals")
    model = hand_model if hand_model is not None else HandModel.default()
    lo, hi = model.limits()
    rng = np.random.default_rng(seed)
    points = cloud.points
    labels = list(point_labels)
    out = []
    attempts = 0
    budget = 100 * n
    while len(out) < n:
        if attempts >= budget:
            raise RejectionExhausted(
                f"placed {len(out)}/{n} grasps in {budget} attempts"
            )
        attempts += 1
        i = int(rng.integers(0, len(points)))
        if _rejected(labels[i], cloud.normals[i], category):
            continue
        omega = float(rng.normal(0.0, OMEGA_JITTER_DEG) % 360.0)
        s = float(rng.uniform(0.0, 20.0))
        nominal = grasp_frame(points[i], cloud.normals[i], omega, s)
        hand = _jittered_hand(nominal, rng)
        grasp = grasp_from_hand(hand, points, cloud.normals)
        j = int(np.argmin(np.linalg.norm(points - grasp.anchor, axis=1)))
        if _rejected(labels[j], cloud.normals[j], category):
            continue
        beta = np.clip(
            POWER_GRASP_TEMPLATE + rng.uniform(-BETA_JITTER_DEG, BETA_JITTER_DEG, 21),
            lo, hi,
        )
        out.append({
            "grasp": grasp,
            "hand_obj": hand,
            "beta": beta,
            "anchor_index": j,
            "anchor_label": labels[j],
        })
    return out


def uniform_labeled_grasps(cloud, point_labels, category, task, n, seed):
    """n unrejected surface grasps with ground-truth suitability bits.

    Training pool for the suitability model: anchors drawn uniformly
    over the cloud, labels straight from the generator's part map.
    """
    check_task(category, task)
    if cloud.normals is None:
        raise ValueError("grasp sampling requires cloud normals")
    rng = np.random.default_rng(seed)
    labels = list(point_labels)
    out = []
    for _ in range(n):
        i = int(rng.integers(0, len(cloud.points)))
        grasp = Grasp(
            anchor=cloud.points[i],
            normal=cloud.normals[i],
            omega=float(rng.uniform(0.0, 360.0)),
            s=float(rng.uniform(0.0, 20.0)),
        )
        out.append({
            "grasp": grasp,
            "anchor_index": i,
            "anchor_label": labels[i],
            "label": suitability_rule(labels[i], category, task),
        })
    return out


def balanced_labeled_grasps(cloud, point_labels, category, task, n, seed,
                            max_rounds=50):
    """n labeled grasps with the two suitability classes balanced.

    Anchors drawn uniformly leave the class split to the part areas,
    which can be lopsided (a bottle is mostly body), and a suitability
    model trained on such a pool learns the prior instead of the parts.
    Draws uniform rounds with a round-derived seed and keeps n/2 per
    class (odd n gives the extra to the suitable class). Raises
    RejectionExhausted when a class cannot be filled, e.g. when the
    cloud has no unsuitable part at all.
    """
    base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    want_pos = (n + 1) // 2
    want_neg = n // 2
    pos, neg = [], []
    for r in range(max_rounds):
        if len(pos) >= want_pos and len(neg) >= want_neg:
            break
        for rec in uniform_labeled_grasps(cloud, point_labels, category,
                                          task, n, seed=base + [r]):
            (pos if rec["label"] else neg).append(rec)
    if len(pos) < want_pos or len(neg) < want_neg:
        raise RejectionExhausted(
            f"balanced pool needs {want_pos}+{want_neg} grasps; got "
            f"{len(pos)} suitable / {len(neg)} unsuitable after "
            f"{max_rounds} rounds"
        )
    return pos[:want_pos] + neg[:want_neg]
