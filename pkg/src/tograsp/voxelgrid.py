"""Point clouds, triangle meshes, and binary surface-occupancy voxel
grids, plus the small amount of file IO the pipeline needs.

Grids are always 50x50x50. The largest bounding-box extent of the input
is fitted to 48 cells so one empty voxel of margin remains on every
side, and the object is centered. Occupancy marks surface cells only;
solids are not filled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

GRID_DIM = 50
_FIT_CELLS = 48.0
VOXG_MAGIC = b"VOXG"


class ShapeMismatch(ValueError):
    """Grids or arrays disagree in shape."""


class DegenerateNeighborhood(ValueError):
    """Covariance of a k-NN patch does not define a plane."""


class EmptyMesh(ValueError):
    """Mesh has no usable (non-degenerate) triangles."""


@dataclass
class PointCloud:
    """Points in mm with optional per-point unit normals.

    normal_valid marks points whose normal estimate is usable; invalid
    points keep NaN normals and are excluded from grasp sampling.
    """

    points: np.ndarray
    normals: np.ndarray = None
    normal_valid: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if self.normals.shape[0] != self.points.shape[0]:
                raise ShapeMismatch("normals and points disagree in length")
        if self.normal_valid is not None:
            self.normal_valid = np.asarray(self.normal_valid, dtype=bool).reshape(-1)

    def __len__(self):
        return self.points.shape[0]


@dataclass
class VoxelGrid:
    """Binary occupancy plus the grid-to-world transform.

    World position of cell (i,j,k)'s low corner is origin + scale*(i,j,k).
    """

    occupancy: np.ndarray
    scale: float
    origin: np.ndarray

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.shape != (GRID_DIM, GRID_DIM, GRID_DIM):
            raise ShapeMismatch(f"expected {GRID_DIM}^3 occupancy, got {self.occupancy.shape}")
        self.scale = float(self.scale)
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)

    def count(self):
        return int(self.occupancy.sum())

    def index_of(self, points):
        v = (np.asarray(points, dtype=float).reshape(-1, 3) - self.origin) / self.scale
        return np.clip(np.floor(v).astype(int), 0, GRID_DIM - 1)


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    def face_areas(self):
        v = self.vertices
        f = self.faces
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def face_normals(self):
        v = self.vertices
        f = self.faces
        cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        n = np.linalg.norm(cross, axis=1, keepdims=True)
        n[n < 1e-12] = 1.0
        return cross / n

    def cleanup(self):
        """Drop zero-area and repeated-index faces; keeps vertex order."""
        f = self.faces
        ok = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
        areas = self.face_areas()
        ok &= areas > 1e-12
        return TriMesh(self.vertices, f[ok]), np.flatnonzero(ok)


def check_watertight(mesh):
    """True when every undirected edge is shared by exactly two faces
    with opposite winding."""
    from collections import Counter

    directed = Counter()
    for a, b, c in mesh.faces:
        for e in ((a, b), (b, c), (c, a)):
            directed[e] += 1
    for (a, b), n in directed.items():
        if n != 1 or directed.get((b, a), 0) != 1:
            return False
    return True


# ---------------------------------------------------------------------------
# voxelization
# ---------------------------------------------------------------------------


def voxelize(cloud):
    """Fit a 50^3 binary grid around a cloud.

    Invariant to uniform scaling and translation of the input: the grid
    scale tracks the largest extent, so the occupancy bits only depend
    on the shape. A single point lands in the center cell.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    pts = pts.reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("cannot voxelize an empty cloud")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    scale = extent / _FIT_CELLS if extent > 0 else 1.0
    half_span = (hi - lo) / (2.0 * scale)
    # u in [0, 48] along the max axis; shift so the object is centered
    u = (pts - lo) / scale
    v = u + (GRID_DIM / 2.0 - half_span)
    idx = np.clip(np.floor(v).astype(int), 1, GRID_DIM - 2)
    occ = np.zeros((GRID_DIM, GRID_DIM, GRID_DIM), dtype=bool)
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    center = (lo + hi) / 2.0
    origin = center - (GRID_DIM / 2.0) * scale
    return VoxelGrid(occupancy=occ, scale=scale, origin=origin)


def sample_mesh_surface(mesh, per_triangle=20, seed=0, min_per_cell=4.0,
                        return_faces=False):
    """Deterministic area-weighted surface sampling.

    The sample budget is per_triangle * n_faces, split across faces by
    area with largest-remainder rounding so the total is exact. A
    density floor of min_per_cell expected samples per occupied voxel
    keeps coarsely triangulated meshes from leaving holes in the grid.
    With return_faces, also returns each point's source face index in
    the original (pre-cleanup) face array.
    """
    clean, kept = mesh.cleanup()
    if clean.faces.shape[0] == 0:
        raise EmptyMesh("no non-degenerate triangles to sample")
    areas = clean.face_areas()
    extent = float((clean.vertices.max(axis=0) - clean.vertices.min(axis=0)).max())
    total = int(per_triangle * clean.faces.shape[0])
    if extent > 0:
        cell = extent / _FIT_CELLS
        total = max(total, int(np.ceil(min_per_cell * areas.sum() / (cell * cell))))
    w = areas / areas.sum() * total
    counts = np.floor(w).astype(int)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(w - counts), kind="stable")
        counts[order[:short]] += 1
    rng = np.random.default_rng(seed)
    v = clean.vertices
    f = clean.faces
    pts = []
    nrm = []
    src = []
    normals = clean.face_normals()
    for i in range(f.shape[0]):
        c = counts[i]
        if c == 0:
            continue
        r1 = np.sqrt(rng.random(c))
        r2 = rng.random(c)
        a, b, cvert = v[f[i, 0]], v[f[i, 1]], v[f[i, 2]]
        p = (
            (1.0 - r1)[:, None] * a
            + (r1 * (1.0 - r2))[:, None] * b
            + (r1 * r2)[:, None] * cvert
        )
        pts.append(p)
        nrm.append(np.tile(normals[i], (c, 1)))
        src.append(np.full(c, kept[i]))
    points = np.concatenate(pts, axis=0)
    norms = np.concatenate(nrm, axis=0)
    cloud = PointCloud(points=points, normals=norms, normal_valid=np.ones(len(points), bool))
    if return_faces:
        return cloud, np.concatenate(src)
    return cloud


def mesh_to_voxels(mesh, per_triangle=20, seed=0, min_per_cell=4.0):
    """Surface-occupancy grid of a triangle mesh via deterministic
    area-weighted sampling. Raises EmptyMesh when nothing is sampleable."""
    cloud = sample_mesh_surface(
        mesh, per_triangle=per_triangle, seed=seed, min_per_cell=min_per_cell
    )
    return voxelize(cloud)


# ---------------------------------------------------------------------------
# metrics and cloud ops
# ---------------------------------------------------------------------------


def f1_score(a, b):
    """F1 over occupied cells. Two empty grids count as a perfect match;
    one empty grid against a non-empty one scores 0."""
    oa = a.occupancy if isinstance(a, VoxelGrid) else np.asarray(a, dtype=bool)
    ob = b.occupancy if isinstance(b, VoxelGrid) else np.asarray(b, dtype=bool)
    if oa.shape != ob.shape:
        raise ShapeMismatch(f"grid shapes differ: {oa.shape} vs {ob.shape}")
    tp = int(np.logical_and(oa, ob).sum())
    na = int(oa.sum())
    nb = int(ob.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return 2.0 * tp / (na + nb)


def estimate_normals(cloud, k=12):
    """Per-point normals from k-NN covariance (smallest eigenvector),
    oriented away from the cloud centroid.

    Returns a new PointCloud with normals and a validity mask. Patches
    whose covariance has no clear plane (collinear or coincident
    neighbors) are flagged invalid and keep NaN normals.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    pts = pts.reshape(-1, 3)
    n = pts.shape[0]
    if n < 3:
        raise DegenerateNeighborhood("need at least 3 points to estimate normals")
    k = min(k, n)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    nbrs = pts[idx]                     # (n, k, 3), self included
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = evecs[:, :, 0]
    scale2 = float(np.einsum("ij,ij->", pts - pts.mean(0), pts - pts.mean(0))) / max(n, 1)
    floor = 1e-12 * max(scale2, 1e-6)
    valid = (evals[:, 1] > 1e-6 * np.maximum(evals[:, 2], floor)) & (evals[:, 2] > floor)
    centroid = pts.mean(axis=0)
    out = pts - centroid
    dots = np.einsum("ij,ij->i", normals, out)
    flip = dots < 0.0
    # ambiguous points (normal orthogonal to the outward direction, e.g.
    # a pure plane): orient by the dominant component for consistency
    amb = np.abs(dots) < 1e-9
    if amb.any():
        key = normals[amb]
        lead = np.take_along_axis(
            key, np.abs(key).argmax(axis=1, keepdims=True), axis=1
        ).ravel()
        flip = flip.copy()
        flip[amb] = lead < 0.0
    normals = np.where(flip[:, None], -normals, normals)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    normals = normals / norms
    normals[~valid] = np.nan
    return PointCloud(points=pts.copy(), normals=normals, normal_valid=valid)


def dropout_points(cloud, rate, seed):
    """Remove each point independently with probability rate.

    Seeded and deterministic; always keeps at least one point. Normals
    and validity masks follow their points.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    pts = cloud.points
    rng = np.random.default_rng(seed)
    keep = rng.random(len(pts)) >= rate
    if not keep.any():
        keep[0] = True
    return PointCloud(
        points=pts[keep],
        normals=None if cloud.normals is None else cloud.normals[keep],
        normal_valid=None if cloud.normal_valid is None else cloud.normal_valid[keep],
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def save_point_cloud(path, cloud):
    """ASCII: one point per line, 'x y z' or 'x y z nx ny nz'."""
    with_normals = cloud.normals is not None
    with open(path, "w") as fh:
        for i, p in enumerate(cloud.points):
            if with_normals:
                row = np.concatenate([p, cloud.normals[i]])
            else:
                row = p
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_point_cloud(path):
    pts = []
    nrm = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) == 3:
                pts.append(vals)
                nrm.append(None)
            elif len(vals) == 6:
                pts.append(vals[:3])
                nrm.append(vals[3:])
            else:
                raise ValueError(f"{path}:{line_no}: expected 3 or 6 values, got {len(vals)}")
    if not pts:
        raise ValueError(f"{path}: empty point cloud")
    points = np.array(pts, dtype=float)
    if any(v is None for v in nrm):
        return PointCloud(points=points)
    normals = np.array(nrm, dtype=float)
    return PointCloud(points=points, normals=normals, normal_valid=np.ones(len(points), bool))


def save_voxel_grid(path, grid):
    """Binary layout: magic 'VOXG', u32 dim, f32 scale, f32[3] origin,
    then dim^3 occupancy bits packed little-endian in C order."""
    header = struct.pack(
        "<4sIffff",
        VOXG_MAGIC,
        GRID_DIM,
        float(grid.scale),
        float(grid.origin[0]),
        float(grid.origin[1]),
        float(grid.origin[2]),
    )
    bits = np.packbits(grid.occupancy.ravel(order="C").astype(np.uint8), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bits.tobytes())


def load_voxel_grid(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    head_len = struct.calcsize("<4sIffff")
    if len(blob) < head_len:
        raise ValueError(f"{path}: truncated voxel grid file")
    magic, dim, scale, ox, oy, oz = struct.unpack("<4sIffff", blob[:head_len])
    if magic != VOXG_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if dim != GRID_DIM:
        raise ValueError(f"{path}: unsupported grid dim {dim}")
    n_bits = dim ** 3
    n_bytes = (n_bits + 7) // 8
    body = blob[head_len : head_len + n_bytes]
    if len(body) != n_bytes:
        raise ValueError(f"{path}: occupancy payload truncated")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="little")[:n_bits]
    occ = bits.reshape(dim, dim, dim).astype(bool)
    return VoxelGrid(occupancy=occ, scale=scale, origin=np.array([ox, oy, oz]))
