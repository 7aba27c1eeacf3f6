"""21-DoF hand skeleton: forward kinematics, damped least-squares
inverse kinematics from labeled joint positions, and joint-position
error metrics.

Skeleton layout. The wrist frame has x pointing at the middle-finger
metacarpal head and z normal to the palm plane (all metacarpal heads
lie in z = 0). Each finger is a chain of three links anchored at a
fixed metacarpal offset. Per-finger joints and degrees of freedom:

    thumb:   base(abduction, flexion) mid(abduction, flexion) tip(flexion)
    others:  base(abduction, flexion) mid(flexion)            tip(flexion)

which gives 5 + 4 * 4 = 21 angles. Abduction rotates about the palm
normal, flexion curls toward the palm (+z). Joint positions are 21
labeled points: wrist then, per finger (thumb..pinky), the metacarpal
head and the three movable joints ending at the fingertip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, rot_y, rot_z

FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")
JOINT_LABELS = ("wrist",) + tuple(
    f"{f}_{j}" for f in FINGER_NAMES for j in ("mcp", "pip", "dip", "tip")
)

IK_DAMPING = 1e-2
IK_MAX_ITERS = 200
IK_MIN_IMPROVEMENT = 1e-6  # mm


class AngleOutOfRange(ValueError):
    """A joint angle violates the model's limits."""


class DegenerateSkeleton(ValueError):
    """Joint positions do not span a usable palm frame."""


class NoConvergence(RuntimeError):
    """IK hit the iteration cap; callers normally use the flagged result."""


@dataclass
class Finger:
    name: str
    base_offset: np.ndarray      # metacarpal head in the wrist frame, mm
    rest_splay_deg: float        # rest direction in the palm plane
    link_lengths: np.ndarray     # proximal, middle, distal, mm
    n_dof: int                   # 5 for the thumb, 4 otherwise
    limits_lo: np.ndarray        # per-angle, degrees
    limits_hi: np.ndarray

    def __post_init__(self):
        self.base_offset = np.asarray(self.base_offset, dtype=float).reshape(3)
        self.link_lengths = np.asarray(self.link_lengths, dtype=float).reshape(3)
        self.limits_lo = np.asarray(self.limits_lo, dtype=float)
        self.limits_hi = np.asarray(self.limits_hi, dtype=float)


@dataclass
class HandModel:
    fingers: list

    @property
    def n_angles(self):
        return int(sum(f.n_dof for f in self.fingers))

    def angle_slices(self):
        """Per-finger slices into the flat 21-angle vector."""
        out = []
        start = 0
        for f in self.fingers:
            out.append(slice(start, start + f.n_dof))
            start += f.n_dof
        return out

    def total_bone_length(self):
        return float(
            sum(np.linalg.norm(f.base_offset) + f.link_lengths.sum() for f in self.fingers)
        )

    def limits(self):
        lo = np.concatenate([f.limits_lo for f in self.fingers])
        hi = np.concatenate([f.limits_hi for f in self.fingers])
        return lo, hi

    def to_json(self):
        doc = {
            "units": "mm_deg",
            "fingers": [
                {
                    "name": f.name,
                    "base_offset": f.base_offset.tolist(),
                    "rest_splay_deg": f.rest_splay_deg,
                    "link_lengths": f.link_lengths.tolist(),
                    "n_dof": f.n_dof,
                    "limits_lo": f.limits_lo.tolist(),
                    "limits_hi": f.limits_hi.tolist(),
                }
                for f in self.fingers
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        fingers = [
            Finger(
                name=d["name"],
                base_offset=d["base_offset"],
                rest_splay_deg=float(d["rest_splay_deg"]),
                link_lengths=d["link_lengths"],
                n_dof=int(d["n_dof"]),
                limits_lo=d["limits_lo"],
                limits_hi=d["limits_hi"],
            )
            for d in doc["fingers"]
        ]
        return cls(fingers=fingers)

    @classmethod
    def default(cls):
        """Adult-scale hand, lengths in mm."""

        def polar(r, deg):
            return [r * math.cos(math.radians(deg)), r * math.sin(math.radians(deg)), 0.0]

        thumb = Finger(
            name="thumb",
            base_offset=polar(42.0, 40.0),
            rest_splay_deg=48.0,
            link_lengths=[36.0, 30.0, 26.0],
            n_dof=5,
            limits_lo=[-20.0, -15.0, -20.0, -10.0, -5.0],
            limits_hi=[45.0, 70.0, 20.0, 80.0, 90.0],
        )
        spec = [
            ("index", 80.0, 13.0, 8.0, (44.0, 26.0, 22.0)),
            ("middle", 82.0, 0.0, 0.0, (48.0, 30.0, 24.0)),
            ("ring", 76.0, -12.0, -8.0, (44.0, 28.0, 22.0)),
            ("pinky", 68.0, -25.0, -18.0, (34.0, 22.0, 20.0)),
        ]
        fingers = [thumb]
        for name, r, base_deg, splay, links in spec:
            fingers.append(
                Finger(
                    name=name,
                    base_offset=polar(r, base_deg),
                    rest_splay_deg=splay,
                    link_lengths=list(links),
                    n_dof=4,
                    limits_lo=[-20.0, -15.0, -5.0, -5.0],
                    limits_hi=[20.0, 100.0, 110.0, 90.0],
                )
            )
        return cls(fingers=fingers)


@dataclass
class HandConfig:
    """Wrist pose plus the flat 21-angle vector (degrees)."""

    wrist: Pose
    angles: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float).reshape(-1)


@dataclass
class IKResult:
    config: HandConfig
    residual_mm: float   # mean joint-position residual
    converged: bool
    iterations: int


def _finger_points_local(finger, angles):
    """Movable joint positions of one finger in the wrist frame (3, 3)."""
    # local frame: x along the rest finger direction, z the palm normal
    Q = rot_z(finger.rest_splay_deg)
    p = finger.base_offset.copy()
    pts = np.empty((3, 3))
    if finger.n_dof == 5:
        dofs = ((angles[0], angles[1]), (angles[2], angles[3]), (None, angles[4]))
    else:
        dofs = ((angles[0], angles[1]), (None, angles[2]), (None, angles[3]))
    for i, (abd, flex) in enumerate(dofs):
        R = rot_y(-flex) if abd is None else rot_z(abd) @ rot_y(-flex)
        Q = Q @ R
        p = p + finger.link_lengths[i] * Q[:, 0]
        pts[i] = p
    return pts


def check_limits(model, angles, tol=1e-6):
    lo, hi = model.limits()
    angles = np.asarray(angles, dtype=float)
    if angles.shape != lo.shape:
        raise AngleOutOfRange(f"expected {lo.size} angles, got {angles.size}")
    bad = np.flatnonzero((angles < lo - tol) | (angles > hi + tol))
    if bad.size:
        raise AngleOutOfRange(f"angles out of limits at indices {bad.tolist()}")


def forward_kinematics(model, config, validate=True):
    """Joint positions (21, 3) for a wrist pose and angle vector."""
    if validate:
        check_limits(model, config.angles)
    W, p0 = config.wrist.W, config.wrist.p
    joints = np.empty((21, 3))
    joints[0] = p0
    row = 1
    for finger, sl in zip(model.fingers, model.angle_slices()):
        joints[row] = p0 + W @ finger.base_offset
        local = _finger_points_local(finger, config.angles[sl])
        joints[row + 1 : row + 4] = local @ W.T + p0
        row += 4
    return joints


def wrist_frame_from_joints(joints):
    """Palm frame from landmark positions.

    Origin at the wrist, x toward the middle metacarpal head, z the palm
    normal built from the index and pinky metacarpals.
    """
    joints = np.asarray(joints, dtype=float)
    o = joints[0]
    x = joints[1 + 4 * 2] - o          # middle mcp
    nx = np.linalg.norm(x)
    z0 = np.cross(joints[1 + 4 * 4] - o, joints[1 + 4 * 1] - o)  # pinky x index
    nz = np.linalg.norm(z0)
    if nx < 1e-6 or nz < 1e-6:
        raise DegenerateSkeleton("metacarpal landmarks are coincident")
    x = x / nx
    y = np.cross(z0 / nz, x)
    ny = np.linalg.norm(y)
    if ny < 1e-6:
        raise DegenerateSkeleton("palm normal parallel to the middle metacarpal")
    y = y / ny
    z = np.cross(x, y)
    return Pose(o, np.column_stack([x, y, z]))


def scale_joints(joints, model):
    """Uniformly rescale a joint set so summed bone lengths match the model.

    The wrist stays fixed; relative proportions are preserved.
    """
    joints = np.asarray(joints, dtype=float).reshape(21, 3)
    total = 0.0
    for fi in range(5):
        base = 1 + 4 * fi
        total += np.linalg.norm(joints[base] - joints[0])
        for j in range(3):
            total += np.linalg.norm(joints[base + j + 1] - joints[base + j])
    if total < 1e-9:
        raise DegenerateSkeleton("zero total bone length")
    factor = model.total_bone_length() / total
    return joints[0] + (joints - joints[0]) * factor


def _solve_finger(finger, target, init=None):
    """Damped least-squares fit of one finger's angles to its 3 movable
    points (wrist-frame coordinates). Returns (angles, residual_norm,
    converged, iterations)."""
    n = finger.n_dof
    lo, hi = finger.limits_lo, finger.limits_hi
    theta = np.zeros(n) if init is None else np.asarray(init, dtype=float).copy()
    target = target.reshape(9)

    def residual(t):
        return target - _finger_points_local(finger, t).reshape(9)

    r = residual(theta)
    best_theta, best_norm = theta.copy(), float(np.linalg.norm(r))
    lam2 = IK_DAMPING ** 2
    h = 1e-5
    converged = False
    it = 0
    for it in range(1, IK_MAX_ITERS + 1):
        J = np.empty((9, n))
        for k in range(n):
            tp = theta.copy()
            tp[k] += h
            tm = theta.copy()
            tm[k] -= h
            J[:, k] = (residual(tm) - residual(tp)) / (2.0 * h)  # d(fk)/d(theta)
        # fk(theta + d) ~ fk + J d, so the damped normal equations give d
        A = J.T @ J + lam2 * np.eye(n)
        step = np.linalg.solve(A, J.T @ r)
        theta = np.clip(theta + step, lo, hi)
        r = residual(theta)
        norm = float(np.linalg.norm(r))
        improvement = best_norm - norm
        if norm < best_norm:
            best_theta, best_norm = theta.copy(), norm
        if improvement < IK_MIN_IMPROVEMENT:
            converged = True
            break
    return best_theta, best_norm, converged, it


def inverse_kinematics(model, joints):
    """Recover wrist pose and 21 angles from labeled joint positions.

    Expects the joint set already scaled to the model's proportions (see
    scale_joints). The wrist pose comes from the palm landmark frame;
    fingers are solved independently with damped least squares. Returns
    an IKResult whose converged flag is False when any finger hit the
    iteration cap.
    """
    joints = np.asarray(joints, dtype=float).reshape(21, 3)
    wrist = wrist_frame_from_joints(joints)
    local = (joints - wrist.p) @ wrist.W
    angles = np.zeros(model.n_angles)
    converged = True
    iters = 0
    for fi, (finger, sl) in enumerate(zip(model.fingers, model.angle_slices())):
        target = local[1 + 4 * fi + 1 : 1 + 4 * fi + 4]
        theta, _, ok, it = _solve_finger(finger, target)
        angles[sl] = theta
        converged = converged and ok
        iters = max(iters, it)
    config = HandConfig(wrist=wrist, angles=angles)
    fk = forward_kinematics(model, config, validate=False)
    residual = float(np.mean(np.linalg.norm(fk - joints, axis=1)))
    return IKResult(config=config, residual_mm=residual, converged=converged, iterations=iters)


def hp_error(pred_joints, gt_joints):
    """Mean root-relative joint-position error in mm.

    Both sets are re-expressed relative to their own wrist before the
    per-joint distances are averaged over all 21 points.
    """
    p = np.asarray(pred_joints, dtype=float).reshape(21, 3)
    g = np.asarray(gt_joints, dtype=float).reshape(21, 3)
    rp = p - p[0]
    rg = g - g[0]
    return float(np.mean(np.linalg.norm(rp - rg, axis=1)))


def random_config(model, rng, wrist=None, margin=0.0):
    """Uniform in-limit configuration, mostly for tests and data synthesis."""
    lo, hi = model.limits()
    span = hi - lo
    a = rng.uniform(lo + margin * span, hi - margin * span)
    if wrist is None:
        wrist = Pose(np.zeros(3), np.eye(3))
    return HandConfig(wrist=wrist, angles=a)
