"""Parametric category meshes built by lofting cross-section rings.

Each generator returns a watertight triangle mesh, a per-face part
label, and the sampled dimension set. All dimensions are millimetres.
Meshes are centred on their bounding-box midpoint so object poses can
treat the origin as the object centre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..voxelgrid import TriMesh

BOTTLE_SEGMENTS = 24
SPOON_SEGMENTS = 16


@dataclass
class CategoryParams:
    """Sampled dimensions for one mesh instance."""

    category: str
    dims: dict

    def validate(self):
        for k, v in self.dims.items():
            if v <= 0:
                raise ValueError(f"{self.category} dim {k} = {v} must be > 0")
        if self.category == "knife" and self.dims["blade_length"] <= self.dims["handle_width"]:
            raise ValueError("blade must be longer than the handle is wide")

    @classmethod
    def sample(cls, category, rng):
        if category == "bottle":
            dims = {
                "body_radius": rng.uniform(28.0, 38.0),
                "body_height": rng.uniform(90.0, 140.0),
                "shoulder_height": rng.uniform(10.0, 16.0),
                "neck_radius": rng.uniform(10.0, 15.0),
                "neck_height": rng.uniform(25.0, 45.0),
                "cap_height": rng.uniform(12.0, 18.0),
            }
        elif category == "knife":
            dims = {
                "handle_length": rng.uniform(80.0, 110.0),
                "handle_width": rng.uniform(22.0, 32.0),
                "handle_thickness": rng.uniform(12.0, 18.0),
                "blade_length": rng.uniform(120.0, 170.0),
                "blade_width": rng.uniform(18.0, 26.0),
                "blade_thickness": rng.uniform(4.0, 6.0),
            }
        elif category == "spoon":
            dims = {
                "handle_length": rng.uniform(90.0, 130.0),
                "handle_ry": rng.uniform(3.5, 5.0),
                "handle_rz": rng.uniform(2.5, 4.0),
                "bowl_ax": rng.uniform(25.0, 35.0),
                "bowl_ay": rng.uniform(18.0, 26.0),
                "bowl_az": rng.uniform(10.0, 16.0),
            }
        else:
            raise ValueError(f"unknown category {category!r}")
        p = cls(category, dims)
        p.validate()
        return p


# ---------------------------------------------------------------------------
# lofting
# ---------------------------------------------------------------------------


def loft(rings, band_labels, bottom_label, top_label):
    """Closed surface over a stack of equal-size rings.

    Consecutive rings are joined by a quad band (two triangles each,
    labelled from band_labels); the first and last rings are closed by
    triangle fans to their centroids. Winding is consistent, so the
    result is watertight; _ensure_outward fixes the global orientation.
    """
    m = rings[0].shape[0]
    if any(r.shape != (m, 3) for r in rings):
        raise ValueError("all rings need the same vertex count")
    if len(band_labels) != len(rings) - 1:
        raise ValueError("need one label per band")
    verts = np.concatenate(rings)
    faces = []
    labels = []
    for i, lab in enumerate(band_labels):
        a = i * m
        b = (i + 1) * m
        for j in range(m):
            k = (j + 1) % m
            faces.append((a + j, b + j, b + k))
            faces.append((a + j, b + k, a + k))
            labels.extend([lab, lab])
    c_bot = len(verts)
    c_top = len(verts) + 1
    verts = np.concatenate([verts, rings[0].mean(axis=0, keepdims=True),
                            rings[-1].mean(axis=0, keepdims=True)])
    top0 = (len(rings) - 1) * m
    for j in range(m):
        k = (j + 1) % m
        faces.append((c_bot, j, k))
        labels.append(bottom_label)
        faces.append((c_top, top0 + k, top0 + j))
        labels.append(top_label)
    return _ensure_outward(TriMesh(verts, np.array(faces)), labels)


def _ensure_outward(mesh, labels):
    # signed volume > 0 <=> outward winding (divergence theorem)
    v = mesh.vertices
    f = mesh.faces
    vol = np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0
    if vol < 0:
        f = f[:, [0, 2, 1]]
    return TriMesh(v, f), list(labels)


def _center(mesh):
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    return TriMesh(mesh.vertices - (lo + hi) / 2.0, mesh.faces)


def _circle_ring(radius, z, m):
    ang = 2.0 * np.pi * np.arange(m) / m
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang),
                            np.full(m, float(z))])


def _rect_ring(x, width_y, thick_z):
    hy, hz = width_y / 2.0, thick_z / 2.0
    return np.array([
        [x, hy, -hz], [x, hy, hz], [x, -hy, hz], [x, -hy, -hz]
    ])


def _ellipse_ring(x, ry, rz, cz, m):
    ang = 2.0 * np.pi * np.arange(m) / m
    return np.column_stack([np.full(m, float(x)), ry * np.cos(ang),
                            cz + rz * np.sin(ang)])


# ---------------------------------------------------------------------------
# category generators
# ---------------------------------------------------------------------------


def _bottle(dims):
    m = BOTTLE_SEGMENTS
    rb, hb = dims["body_radius"], dims["body_height"]
    hs = dims["shoulder_height"]
    rn, hn = dims["neck_radius"], dims["neck_height"]
    hc = dims["cap_height"]
    rc = rn + 2.0
    z_neck_top = hb + hs + hn
    rings = [
        _circle_ring(rb, 0.0, m),
        _circle_ring(rb, hb, m),
        _circle_ring(rn, hb + hs, m),
        _circle_ring(rn, z_neck_top, m),
        _circle_ring(rc, z_neck_top, m),
        _circle_ring(rc, z_neck_top + hc, m),
    ]
    bands = ["body", "body", "neck", "cap", "cap"]
    return loft(rings, bands, "body", "cap")


def _knife(dims):
    lh = dims["handle_length"]
    wh, th = dims["handle_width"], dims["handle_thickness"]
    lb = dims["blade_length"]
    wb, tb = dims["blade_width"], dims["blade_thickness"]
    rings = [
        _rect_ring(-lh, wh, th),
        _rect_ring(0.0, wh, th),
        _rect_ring(0.0, wb, tb),
        _rect_ring(0.85 * lb, 0.8 * wb, tb),
        _rect_ring(lb, 2.0, 0.4 * tb),
    ]
    bands = ["handle", "handle", "blade", "blade"]
    return loft(rings, bands, "handle", "blade")


def _spoon(dims):
    m = SPOON_SEGMENTS
    lh = dims["handle_length"]
    hy, hz = dims["handle_ry"], dims["handle_rz"]
    ax, ay, az = dims["bowl_ax"], dims["bowl_ay"], dims["bowl_az"]
    dip = 0.4 * az
    rings = [
        _ellipse_ring(-lh, hy, hz, 0.0, m),
        _ellipse_ring(0.0, hy, hz, 0.0, m),
    ]
    bands = ["handle"]
    # bowl: ellipsoid cross-sections sagging by dip*q, which kills the
    # z-mirror symmetry while keeping the y-mirror one
    for u in (0.08, 0.25, 0.5, 0.75, 0.92):
        x = u * 2.0 * ax
        w = (x - ax) / ax
        q = float(np.sqrt(max(1e-6, 1.0 - w * w)))
        rings.append(_ellipse_ring(x, ay * q, az * q, -dip * q, m))
        bands.append("bowl")
    return loft(rings, bands, "handle", "bowl")


_GENERATORS = {"bottle": _bottle, "knife": _knife, "spoon": _spoon}

CATEGORIES = tuple(sorted(_GENERATORS))


def generate_mesh(category, seed):
    """(TriMesh, per-face labels, CategoryParams) for one instance."""
    if category not in _GENERATORS:
        raise ValueError(f"unknown category {category!r}")
    rng = np.random.default_rng(seed)
    params = CategoryParams.sample(category, rng)
    mesh, labels = _GENERATORS[category](params.dims)
    return _center(mesh), labels, params
