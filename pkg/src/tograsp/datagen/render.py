"""Orthographic depth/silhouette rasterizer.

The camera sits at the origin looking along +z with x to the right and
y up; a pixel (row, col) covers the world rectangle around
x = (col + 0.5 - size/2) * scale, y = (size/2 - row - 0.5) * scale.
Depth is stored normalized: (far - z) / (far - near), so nearer
surfaces are brighter and the background is 0. Images carry two
channels, depth then silhouette; the hand mask in object-only views is
white in both.

The hand is drawn as spheres strung densely along each skeleton bone,
which z-buffers exactly like the triangle geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IMAGE_SIZE = 64
CROP_SIZE = 32
HAND_BONE_RADIUS = 8.0
CROP_PAD_PX = 2.0


class SubjectOutOfFrame(ValueError):
    """Scene content leaves the camera window or depth bounds."""


@dataclass
class Camera:
    size: int = IMAGE_SIZE
    scale: float = 6.5          # mm per pixel
    near: float = 300.0
    far: float = 700.0
    center: tuple = (0.0, 0.0)  # window centre, world mm

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("camera scale must be > 0")
        if self.far <= self.near:
            raise ValueError("far plane must sit beyond near")


def _window_x(cam, cols):
    return (np.asarray(cols) + 0.5 - cam.size / 2.0) * cam.scale + cam.center[0]


def _window_y(cam, rows):
    return (cam.size / 2.0 - np.asarray(rows) - 0.5) * cam.scale + cam.center[1]


def _col_of(cam, x):
    return (np.asarray(x) - cam.center[0]) / cam.scale + cam.size / 2.0 - 0.5


def _row_of(cam, y):
    return cam.size / 2.0 - (np.asarray(y) - cam.center[1]) / cam.scale - 0.5


def render_mesh_z(verts, faces, cam):
    """Per-pixel minimum z over the triangles; +inf where nothing hits."""
    z = np.full((cam.size, cam.size), np.inf)
    cols = _col_of(cam, verts[:, 0])
    rows = _row_of(cam, verts[:, 1])
    for f in faces:
        c = cols[f]
        r = rows[f]
        c0 = max(0, int(np.ceil(c.min())))
        c1 = min(cam.size - 1, int(np.floor(c.max())))
        r0 = max(0, int(np.ceil(r.min())))
        r1 = min(cam.size - 1, int(np.floor(r.max())))
        if c0 > c1 or r0 > r1:
            continue
        x0, y0 = c[0], r[0]
        d = np.array([[c[1] - x0, c[2] - x0], [r[1] - y0, r[2] - y0]])
        det = d[0, 0] * d[1, 1] - d[0, 1] * d[1, 0]
        if abs(det) < 1e-12:
            continue
        gc, gr = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        px = gc - x0
        py = gr - y0
        b1 = (d[1, 1] * px - d[0, 1] * py) / det
        b2 = (-d[1, 0] * px + d[0, 0] * py) / det
        eps = 1e-9
        inside = (b1 >= -eps) & (b2 >= -eps) & (b1 + b2 <= 1.0 + eps)
        if not inside.any():
            continue
        vz = verts[f, 2]
        pz = vz[0] + b1 * (vz[1] - vz[0]) + b2 * (vz[2] - vz[0])
        tile = z[r0 : r1 + 1, c0 : c1 + 1]
        np.minimum(tile, np.where(inside, pz, np.inf), out=tile)
    return z


def render_spheres_z(centers, radius, cam):
    """Per-pixel minimum z over spheres; +inf where nothing hits."""
    z = np.full((cam.size, cam.size), np.inf)
    r_px = radius / cam.scale
    for cx, cy, cz in centers:
        col = float(_col_of(cam, cx))
        row = float(_row_of(cam, cy))
        c0 = max(0, int(np.ceil(col - r_px)))
        c1 = min(cam.size - 1, int(np.floor(col + r_px)))
        r0 = max(0, int(np.ceil(row - r_px)))
        r1 = min(cam.size - 1, int(np.floor(row + r_px)))
        if c0 > c1 or r0 > r1:
            continue
        gc, gr = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        dx = (gc - col) * cam.scale
        dy = (gr - row) * cam.scale
        d2 = dx * dx + dy * dy
        hit = d2 <= radius * radius
        if not hit.any():
            continue
        dz = np.sqrt(np.maximum(0.0, radius * radius - d2))
        tile = z[r0 : r1 + 1, c0 : c1 + 1]
        np.minimum(tile, np.where(hit, cz - dz, np.inf), out=tile)
    return z


def hand_segments(joints):
    """Bone segments (20, 2, 3) from the 21-point skeleton: wrist to
    each metacarpal head, then the three phalanges per finger."""
    joints = np.asarray(joints, dtype=float).reshape(21, 3)
    segs = []
    for f in range(5):
        base = 1 + 4 * f
        segs.append((joints[0], joints[base]))
        for k in range(3):
            segs.append((joints[base + k], joints[base + k + 1]))
    return np.array(segs)


def _sphere_centers(segments, step=4.0):
    centers = []
    for a, b in segments:
        length = float(np.linalg.norm(b - a))
        k = max(2, int(np.ceil(length / step)) + 1)
        for t in np.linspace(0.0, 1.0, k):
            centers.append(a + t * (b - a))
    return np.array(centers)


def _depth(cam, z):
    return np.clip((cam.far - z) / (cam.far - cam.near), 0.0, 1.0)


def _scene_channels(cam, z_obj, z_hand):
    z = np.minimum(z_obj, z_hand)
    sil = np.isfinite(z)
    depth = np.where(sil, _depth(cam, z), 0.0)
    return np.stack([depth, sil.astype(float)])


def _object_channels(cam, z_obj, z_hand):
    sil = np.isfinite(z_obj)
    depth = np.where(sil, _depth(cam, z_obj), 0.0)
    img = np.stack([depth, sil.astype(float)])
    white = sil & np.isfinite(z_hand) & (z_hand < z_obj)
    img[0][white] = 1.0
    img[1][white] = 1.0
    return img


def _crop_camera(cam, lo, hi):
    pad = CROP_PAD_PX * cam.scale
    w = hi[0] - lo[0] + 2 * pad
    h = hi[1] - lo[1] + 2 * pad
    side = max(w, h)
    center = ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0)
    return Camera(size=CROP_SIZE, scale=side / CROP_SIZE, near=cam.near,
                  far=cam.far, center=center)


def _check_in_frame(cam, xy_lo, xy_hi, z_lo, z_hi, what):
    half = cam.size / 2.0 * cam.scale
    if (xy_lo[0] < cam.center[0] - half or xy_hi[0] > cam.center[0] + half
            or xy_lo[1] < cam.center[1] - half or xy_hi[1] > cam.center[1] + half):
        raise SubjectOutOfFrame(f"{what} leaves the camera window")
    if z_lo < cam.near + 5.0 or z_hi > cam.far - 5.0:
        raise SubjectOutOfFrame(f"{what} leaves the depth range")


def render_sample(mesh, obj_pose, joints, cam=None):
    """All four images for one scene.

    mesh is in the object frame, obj_pose maps it to the camera frame,
    joints are camera-frame hand joints (21, 3). Returns a dict with
    X, XO (size x size) and XHc, XOc (crop) images plus the crop
    cameras. Raises SubjectOutOfFrame when object or hand leaves the
    window or depth bounds.
    """
    cam = cam if cam is not None else Camera()
    verts = obj_pose.transform_points(mesh.vertices)
    segs = hand_segments(joints)
    centers = _sphere_centers(segs)
    obj_lo, obj_hi = verts.min(axis=0), verts.max(axis=0)
    hand_lo = centers.min(axis=0) - HAND_BONE_RADIUS
    hand_hi = centers.max(axis=0) + HAND_BONE_RADIUS
    _check_in_frame(cam, obj_lo[:2], obj_hi[:2], obj_lo[2], obj_hi[2], "object")
    _check_in_frame(cam, hand_lo[:2], hand_hi[:2], hand_lo[2], hand_hi[2], "hand")

    z_obj = render_mesh_z(verts, mesh.faces, cam)
    z_hand = render_spheres_z(centers, HAND_BONE_RADIUS, cam)

    hand_cam = _crop_camera(cam, hand_lo[:2], hand_hi[:2])
    obj_cam = _crop_camera(cam, obj_lo[:2], obj_hi[:2])
    zc_obj_h = render_mesh_z(verts, mesh.faces, hand_cam)
    zc_hand_h = render_spheres_z(centers, HAND_BONE_RADIUS, hand_cam)
    zc_obj_o = render_mesh_z(verts, mesh.faces, obj_cam)
    zc_hand_o = render_spheres_z(centers, HAND_BONE_RADIUS, obj_cam)

    return {
        "X": _scene_channels(cam, z_obj, z_hand),
        "XO": _object_channels(cam, z_obj, z_hand),
        "XHc": _scene_channels(hand_cam, zc_obj_h, zc_hand_h),
        "XOc": _object_channels(obj_cam, zc_obj_o, zc_hand_o),
        "hand_cam": hand_cam,
        "obj_cam": obj_cam,
    }
