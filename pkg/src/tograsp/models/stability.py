"""Antipodal stability scoring for parallel-jaw grasps.

The jaws close along the grasp frame's x axis through a line offset a
small jaw depth into the surface from the anchor. Contacts are where
that line crosses the mesh (or passes through a thin slab of cloud
points); each contact is scored by how far the jaw's pushing direction
falls outside the friction cone, and the grasp gets the worse of the
two contact scores.
"""

from __future__ import annotations

import numpy as np

from ..geometry import grasp_frame

GRIPPER_WIDTH = 80.0
FRICTION_MU = 0.5
JAW_DEPTH = 5.0
CLOUD_SLAB = 2.5


class NoValidGrasp(RuntimeError):
    """No candidate passed both suitability and stability thresholds."""


def _line_mesh_hits(origin, direction, mesh):
    """Intersection parameters and face indices for an infinite line
    against every triangle (Moller-Trumbore, both signs of t)."""
    v = mesh.vertices
    f = mesh.faces
    v0 = v[f[:, 0]]
    e1 = v[f[:, 1]] - v0
    e2 = v[f[:, 2]] - v0
    h = np.cross(direction[None, :], e2)
    a = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(a) > 1e-12
    inv = np.zeros_like(a)
    inv[ok] = 1.0 / a[ok]
    s = origin[None, :] - v0
    u = inv * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    w = inv * (q @ direction)
    eps = 1e-9
    ok &= (u >= -eps) & (w >= -eps) & (u + w <= 1.0 + eps)
    t = inv * np.einsum("ij,ij->i", e2, q)
    return t[ok], np.flatnonzero(ok)


def _contact_scores(theta_entry, theta_exit, mu):
    alpha = np.arctan(mu)
    s1 = np.clip(1.0 - theta_entry / (2.0 * alpha), 0.0, 1.0)
    s2 = np.clip(1.0 - theta_exit / (2.0 * alpha), 0.0, 1.0)
    return float(min(s1, s2))


def _closing_line(grasp, jaw_depth):
    pose = grasp_frame(grasp.anchor, grasp.normal, grasp.omega, grasp.s)
    origin = grasp.anchor - jaw_depth * grasp.normal
    return origin, pose.W[:, 0]


def stability_score(mesh, grasp, width=GRIPPER_WIDTH, mu=FRICTION_MU,
                    jaw_depth=JAW_DEPTH):
    """Score in [0, 1]; 0 when the jaws cannot pinch the mesh at all."""
    origin, c = _closing_line(grasp, jaw_depth)
    ts, faces = _line_mesh_hits(origin, c, mesh)
    if ts.size < 2:
        return 0.0
    lo = int(np.argmin(ts))
    hi = int(np.argmax(ts))
    sep = float(ts[hi] - ts[lo])
    if sep > width or sep < 1e-9:
        return 0.0
    normals = mesh.face_normals()
    n1 = normals[faces[lo]]
    n2 = normals[faces[hi]]
    theta1 = np.arccos(np.clip(-c @ n1, -1.0, 1.0))
    theta2 = np.arccos(np.clip(c @ n2, -1.0, 1.0))
    return _contact_scores(theta1, theta2, mu)


def stability_score_cloud(cloud, grasp, width=GRIPPER_WIDTH, mu=FRICTION_MU,
                          jaw_depth=JAW_DEPTH, slab=CLOUD_SLAB):
    """Cloud variant: contacts are the extreme points of the cloud
    within a thin slab around the closing line. Needs cloud normals."""
    if cloud.normals is None:
        raise ValueError("stability from a cloud requires normals")
    origin, c = _closing_line(grasp, jaw_depth)
    v = cloud.points - origin[None, :]
    t = v @ c
    perp = np.linalg.norm(v - t[:, None] * c[None, :], axis=1)
    near = np.flatnonzero(perp <= slab)
    if near.size < 2:
        return 0.0
    lo = near[int(np.argmin(t[near]))]
    hi = near[int(np.argmax(t[near]))]
    sep = float(t[hi] - t[lo])
    if sep > width or sep < 1e-9:
        return 0.0
    n1 = cloud.normals[lo]
    n2 = cloud.normals[hi]
    theta1 = np.arccos(np.clip(-c @ n1, -1.0, 1.0))
    theta2 = np.arccos(np.clip(c @ n2, -1.0, 1.0))
    return _contact_scores(theta1, theta2, mu)


def select_grasp(grasps, suitability, stability, suit_threshold=0.5,
                 stab_threshold=0.5):
    """Most stable grasp among those passing both thresholds.

    Returns (grasp, index); ties go to the earliest candidate. Raises
    NoValidGrasp when nothing qualifies.
    """
    suitability = np.asarray(suitability, dtype=float).reshape(-1)
    stability = np.asarray(stability, dtype=float).reshape(-1)
    if not (len(grasps) == suitability.size == stability.size):
        raise ValueError("grasps, suitability and stability lengths differ")
    valid = (suitability >= suit_threshold) & (stability >= stab_threshold)
    if not valid.any():
        raise NoValidGrasp(
            f"none of {len(grasps)} candidates passed "
            f"suitability >= {suit_threshold} and stability >= {stab_threshold}"
        )
    masked = np.where(valid, stability, -np.inf)
    idx = int(np.argmax(masked))
    return grasps[idx], idx
