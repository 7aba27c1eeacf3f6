"""Evaluation harness: per-category metric tables and ablation pairing.

evaluate() consumes a loaded dataset split plus whichever models are
supplied and produces an EvalReport with one row per category and an
average row recomputed as the mean of the category rows. Passing the
string "oracle" for a model family substitutes the ground-truth labels
as predictions; by construction this must give exactly-zero errors, so
it doubles as a self-test that the harness adds no noise of its own.

Orientation errors are reported twice: the symmetry-aware MAE used for
all headline numbers and the naive Euler MAE next to it, so the effect
of symmetry handling stays visible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..geometry import (
    Pose,
    euler_mae,
    orientation_mae,
    symmetry_class_for,
)
from ..handkin import HandConfig, HandModel, forward_kinematics, hp_error
from ..models import retrieve_mesh
from ..voxelgrid import f1_score


class MissingModel(ValueError):
    """A model required for the requested metrics was not supplied."""


_KNOWN_FAMILIES = ("hand", "object", "siamese", "store")

# column order for the text table
_METRICS = (
    "obj_pos_mae", "obj_rot_mae", "obj_rot_mae_naive",
    "hand_pos_mae", "hand_rot_mae", "joint_mae", "hp_error",
    "f1", "top1",
)


@dataclass
class RunConfig:
    """Settings shared by CLI runs; recorded in every run manifest."""

    seed: int = 0
    dataset: str = ""
    models: str = ""
    split: str = "test"
    categories: tuple | None = None
    ablation: str | None = None
    suit_threshold: float = 0.5
    stab_threshold: float = 0.5
    workspace: tuple | None = None

    def __post_init__(self):
        for t in (self.suit_threshold, self.stab_threshold):
            if not 0.0 < t < 1.0:
                raise ValueError("thresholds must lie strictly between 0 and 1")
        if self.categories is not None:
            self.categories = tuple(self.categories)
        if self.workspace is not None:
            self.workspace = tuple(float(v) for v in self.workspace)
            if len(self.workspace) != 6:
                raise ValueError("workspace box needs 6 numbers: lo xyz + hi xyz")

    def to_dict(self):
        d = dict(self.__dict__)
        if self.categories is not None:
            d["categories"] = list(self.categories)
        if self.workspace is not None:
            d["workspace"] = list(self.workspace)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EvalReport:
    """Per-category metric rows plus metadata.

    The average row is never stored; averages() recomputes it as the
    arithmetic mean of the category rows every time, so the table can
    never drift out of sync with its own rows.
    """

    rows: dict
    meta: dict = field(default_factory=dict)

    def categories(self):
        return sorted(self.rows)

    def averages(self):
        cats = self.categories()
        if not cats:
            return {}
        keys = [k for k in _METRICS if all(k in self.rows[c] for c in cats)]
        return {k: float(np.mean([self.rows[c][k] for c in cats])) for k in keys}

    def to_dict(self):
        return {"rows": self.rows, "avg": self.averages(), "meta": self.meta}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_text(self):
        cats = self.categories()
        cols = [k for k in _METRICS if any(k in self.rows[c] for c in cats)]
        avg = self.averages()
        header = ["category"] + cols
        lines = [header]
        for c in cats:
            lines.append([c] + [_fmt(self.rows[c].get(k)) for k in cols])
        lines.append(["avg"] + [_fmt(avg.get(k)) for k in cols])
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        out = []
        for row in lines:
            out.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        return "\n".join(out) + "\n"

    def save(self, directory, stem="report"):
        import os

        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, stem + ".json"), "w") as fh:
            fh.write(self.to_json() + "\n")
        with open(os.path.join(directory, stem + ".txt"), "w") as fh:
            fh.write(self.to_text())


def _fmt(v):
    return "-" if v is None else f"{v:.3f}"


# ---------------------------------------------------------------------------
# metric families
# ---------------------------------------------------------------------------


def _per_coordinate_mae(pred, gt):
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(gt))))


def _hand_metrics(model, d, conditioning):
    n = d["X"].shape[0]
    if model == "oracle":
        p, W, beta = d["p_H"], d["W_H"], d["beta"]
    elif conditioning == "zero":
        p, W, beta = model.predict_refined(
            d["X"], d["XHc"], np.zeros((n, 3)), np.zeros((n, 3, 3))
        )
    else:
        p, W, beta = model.predict_refined(d["X"], d["XHc"], d["p_O"], d["W_O"])
    hand_model = HandModel.default()
    hp = [
        hp_error(
            forward_kinematics(
                hand_model, HandConfig(wrist=Pose(p[i], W[i]), angles=beta[i])
            ),
            d["joints"][i],
        )
        for i in range(n)
    ]
    return {
        "hand_pos_mae": _per_coordinate_mae(p, d["p_H"]),
        "hand_rot_mae": float(np.mean([euler_mae(W[i], d["W_H"][i]) for i in range(n)])),
        "joint_mae": _per_coordinate_mae(beta, d["beta"]),
        "hp_error": float(np.mean(hp)),
    }


def _object_metrics(model, d, category):
    n = d["XO"].shape[0]
    if model == "oracle":
        p, W = d["p_O"], d["W_O"]
        sym = symmetry_class_for(category)
    else:
        p, W = model.predict(d["XO"], d["XOc"], p_H=d["p_H"], W_H=d["W_H"],
                             joints=d["joints"])
        sym = model.symmetry
    return {
        "obj_pos_mae": _per_coordinate_mae(p, d["p_O"]),
        "obj_rot_mae": float(np.mean(
            [orientation_mae(W[i], d["W_O"][i], sym) for i in range(n)]
        )),
        "obj_rot_mae_naive": float(np.mean(
            [euler_mae(W[i], d["W_O"][i]) for i in range(n)]
        )),
    }


def _retrieval_metrics(siamese, store, d, mesh_bundle):
    if mesh_bundle is None:
        raise ValueError("retrieval metrics need the dataset mesh bundle")
    gt_ids = d["mesh_ids"]
    if siamese == "oracle":
        got = list(gt_ids)
    else:
        emb = siamese.embed_images(d["XOc"])
        got = [retrieve_mesh(emb[i], store)[0] for i in range(len(gt_ids))]
    top1 = float(np.mean([g == t for g, t in zip(got, gt_ids)]))
    f1 = float(np.mean([
        f1_score(mesh_bundle[g]["grid"], mesh_bundle[t]["grid"])
        for g, t in zip(got, gt_ids)
    ]))
    return {"f1": f1, "top1": top1}


def evaluate(models, data, mesh_bundle=None, hand_conditioning="object"):
    """EvalReport over a loaded split.

    models: dict with any of the keys "hand" (HandNets), "object"
    (ObjectNets or {category: ObjectNets}), "siamese" + "store". Any
    entry may be the string "oracle". data: {category: arrays} as
    returned by load_split. hand_conditioning: "object" feeds the
    ground-truth object pose to the refinement heads, "zero" feeds
    zeros (the without-object ablation).
    """
    if not models:
        raise MissingModel("no models supplied")
    unknown = set(models) - set(_KNOWN_FAMILIES)
    if unknown:
        raise MissingModel(f"unknown model families: {sorted(unknown)}")
    if not data:
        raise ValueError("empty evaluation split")
    if hand_conditioning not in ("object", "zero"):
        raise ValueError("hand_conditioning must be 'object' or 'zero'")
    if ("siamese" in models) != ("store" in models) and models.get("siamese") != "oracle":
        raise MissingModel("retrieval needs both 'siamese' and 'store'")

    rows = {}
    for cat in sorted(data):
        d = data[cat]
        row = {}
        if "hand" in models:
            row.update(_hand_metrics(models["hand"], d, hand_conditioning))
        if "object" in models:
            obj = models["object"]
            if isinstance(obj, dict):
                if cat not in obj:
                    raise MissingModel(f"no object model for category {cat!r}")
                obj = obj[cat]
            row.update(_object_metrics(obj, d, cat))
        if "siamese" in models:
            row.update(_retrieval_metrics(models["siamese"], models.get("store"),
                                          d, mesh_bundle))
        rows[cat] = row
    return EvalReport(rows=rows, meta={"n_per_category": {c: int(data[c]["X"].shape[0]) for c in data},
                                       "hand_conditioning": hand_conditioning if "hand" in models else None})


def pair_reports(with_report, without_report, label_with="with", label_without="without"):
    """Side-by-side average-row comparison of two reports.

    Returns {metric: {label_with: x, label_without: y, "direction": d}}
    where d is -1 when the first report's average is lower, +1 when
    higher, 0 on a tie.
    """
    a = with_report.averages()
    b = without_report.averages()
    out = {}
    for k in sorted(set(a) & set(b)):
        diff = a[k] - b[k]
        out[k] = {
            label_with: a[k],
            label_without: b[k],
            "direction": 0 if diff == 0 else (-1 if diff < 0 else 1),
        }
    return out
