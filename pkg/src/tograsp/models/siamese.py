"""Cross-modal shape embedding: object image crops vs voxel grids.

Both encoders map into the same space; a pair's probability of showing
the same object is sigma(tau - squared embedding distance) with a
trainable offset tau. Retrieval embeds all stored meshes once and picks
the mesh with the highest pair probability against a query image
embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensorcore import (
    LayerSpec,
    Network,
    adam_state,
    optimizer_step,
    sigmoid_ce_loss,
)
from .common import (
    conv3d_stack,
    conv_stack,
    load_nets,
    save_nets,
    sigmoid,
)


class InsufficientPairs(ValueError):
    """Too few meshes to form contrastive pairs."""


class EmptyStore(ValueError):
    """Retrieval against a store with no meshes."""


@dataclass
class EmbeddingStore:
    mesh_ids: list
    vectors: np.ndarray
    tau: float

    def __len__(self):
        return len(self.mesh_ids)


def _embed_net(kind, input_shape, dim, seed, channels):
    if kind == "image":
        specs, feat = conv_stack("t.", "img", channels)
        inputs = {"img": input_shape}
    else:
        specs, feat = conv3d_stack("t.", "vox", channels)
        inputs = {"vox": input_shape}
    specs.append(LayerSpec("emb", "dense", [feat], units=dim))
    return Network(specs, inputs, ["emb"], seed=seed)


class SiameseModel:
    def __init__(self, seed=0, crop=32, grid=50, dim=64,
                 image_channels=(8, 16, 32), mesh_channels=(8, 16)):
        self.seed = int(seed)
        self.crop = crop
        self.grid = grid
        self.dim = dim
        self.image_channels = tuple(image_channels)
        self.mesh_channels = tuple(mesh_channels)
        self.image = _embed_net("image", (2, crop, crop), dim, seed, image_channels)
        self.mesh = _embed_net("mesh", (1, grid, grid, grid), dim, seed + 1, mesh_channels)
        self.tau = {"tau": np.array([1.0])}
        self.trained = False

    # -- persistence ----------------------------------------------------

    def save(self, directory):
        save_nets(
            directory,
            {
                "kind": "siamese",
                "seed": self.seed,
                "crop": self.crop,
                "grid": self.grid,
                "dim": self.dim,
                "image_channels": list(self.image_channels),
                "mesh_channels": list(self.mesh_channels),
                "tau": float(self.tau["tau"][0]),
                "trained": self.trained,
            },
            {"image": self.image, "mesh": self.mesh},
        )

    @classmethod
    def load(cls, directory):
        manifest, nets = load_nets(directory)
        obj = cls.__new__(cls)
        obj.seed = manifest["seed"]
        obj.crop = manifest["crop"]
        obj.grid = manifest["grid"]
        obj.dim = manifest["dim"]
        obj.image_channels = tuple(manifest["image_channels"])
        obj.mesh_channels = tuple(manifest["mesh_channels"])
        obj.image = nets["image"]
        obj.mesh = nets["mesh"]
        obj.tau = {"tau": np.array([manifest["tau"]])}
        obj.trained = manifest["trained"]
        return obj

    # -- embeddings -------------------------------------------------------

    def embed_images(self, X, batch=64):
        X = np.asarray(X, dtype=float)
        out = [
            self.image.forward({"img": X[i : i + batch]})["emb"]
            for i in range(0, X.shape[0], batch)
        ]
        return np.concatenate(out, axis=0)

    def embed_voxels(self, V, batch=16):
        V = np.asarray(V, dtype=float)
        out = [
            self.mesh.forward({"vox": V[i : i + batch]})["emb"]
            for i in range(0, V.shape[0], batch)
        ]
        return np.concatenate(out, axis=0)

    def pair_logits(self, ei, em):
        d = np.asarray(ei) - np.asarray(em)
        return float(self.tau["tau"][0]) - np.sum(d * d, axis=1)

    def pair_probability(self, ei, em):
        return sigmoid(self.pair_logits(ei, em))

    def build_store(self, voxels):
        """voxels: {mesh id: (1, grid, grid, grid) occupancy}. Ids are
        sorted so the store layout is reproducible."""
        ids = sorted(voxels)
        V = np.stack([np.asarray(voxels[i], dtype=float) for i in ids])
        return EmbeddingStore(
            mesh_ids=ids,
            vectors=self.embed_voxels(V),
            tau=float(self.tau["tau"][0]),
        )


def voxels_as_input(grid):
    """VoxelGrid -> (1, D, D, D) float network input."""
    return grid.occupancy.astype(float)[None]


def train_siamese(model, images, image_mesh_ids, voxels, mesh_categories,
                  steps=400, batch=16, lr=1e-3, seed=0, neg_ratio=3):
    """Contrastive training on (image crop, voxel grid) pairs.

    images: (N, 2, crop, crop); image_mesh_ids: mesh id per image;
    voxels: {mesh id: (1, grid^3) occupancy}; mesh_categories: {mesh id:
    category}. Each step draws 1 positive per neg_ratio negatives.
    Negatives come from the image's own category: cross-category pairs
    are trivially separable and teach the embedding nothing about
    telling apart shapes of the same kind. Returns the final batch loss.
    """
    same_cat = {}
    for cat in set(mesh_categories.values()):
        members = sorted(m for m, c in mesh_categories.items() if c == cat)
        if len(members) < 2:
            raise InsufficientPairs(f"category {cat!r} has {len(members)} mesh(es); need 2+")
        for m in members:
            same_cat[m] = [o for o in members if o != m]
    images = np.asarray(images, dtype=float)
    ids = list(image_mesh_ids)
    mesh_ids = sorted(voxels)
    vox_arr = {m: np.asarray(voxels[m], dtype=float) for m in mesh_ids}
    n = images.shape[0]
    rng = np.random.default_rng(seed)
    st_img = adam_state(model.image.params)
    st_mesh = adam_state(model.mesh.params)
    st_tau = adam_state(model.tau)
    n_pos = max(1, batch // (1 + neg_ratio))
    loss = None
    for _ in range(steps):
        img_idx = rng.integers(0, n, size=batch)
        labels = np.zeros(batch)
        labels[:n_pos] = 1.0
        pair_mesh = []
        for j, i in enumerate(img_idx):
            own = ids[i]
            if j < n_pos:
                pair_mesh.append(own)
            else:
                others = same_cat[own]
                pair_mesh.append(others[rng.integers(0, len(others))])
        ei = model.image.forward({"img": images[img_idx]})["emb"]
        em = model.mesh.forward({"vox": np.stack([vox_arr[m] for m in pair_mesh])})["emb"]
        d = ei - em
        logits = float(model.tau["tau"][0]) - np.sum(d * d, axis=1)
        loss, gl = sigmoid_ce_loss(logits, labels)
        # logit = tau - |ei - em|^2
        g_ei = -2.0 * d * gl[:, None]
        g_em = 2.0 * d * gl[:, None]
        optimizer_step(model.image.params, model.image.backward({"emb": g_ei}), st_img, lr=lr)
        optimizer_step(model.mesh.params, model.mesh.backward({"emb": g_em}), st_mesh, lr=lr)
        optimizer_step(model.tau, {"tau": np.array([gl.sum()])}, st_tau, lr=lr)
    model.trained = True
    return loss


def retrieve_mesh(embedding, store):
    """Highest pair probability wins; exact ties go to the lowest mesh id."""
    if len(store) == 0:
        raise EmptyStore("no meshes in the embedding store")
    d = store.vectors - np.asarray(embedding, dtype=float)[None, :]
    p = sigmoid(store.tau - np.sum(d * d, axis=1))
    best = p.max()
    cand = [store.mesh_ids[i] for i in range(len(store)) if p[i] == best]
    return min(cand), float(best)


def save_store(path, store):
    """Embedding store as an npz archive (ids, vectors, tau)."""
    np.savez(path, mesh_ids=np.array(store.mesh_ids, dtype=str),
             vectors=store.vectors, tau=np.array([store.tau]))


def load_store(path):
    with np.load(path) as z:
        return EmbeddingStore(
            mesh_ids=[str(m) for m in z["mesh_ids"]],
            vectors=z["vectors"].astype(float),
            tau=float(z["tau"][0]),
        )
