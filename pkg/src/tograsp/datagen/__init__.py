"""Procedural synthetic data: parametric category meshes, rejection
sampled grasps with hand poses, an orthographic depth/silhouette
renderer, and dataset assembly."""

from .meshes import CategoryParams, generate_mesh, loft
from .grasps import (
    POWER_GRASP_TEMPLATE,
    RejectionExhausted,
    balanced_labeled_grasps,
    label_task_suitability,
    sample_grasps,
    suitability_rule,
    uniform_labeled_grasps,
)
from .render import Camera, SubjectOutOfFrame, hand_segments, render_sample
from .dataset import (
    DatasetConfig,
    IoFailure,
    build_dataset,
    load_mesh_bundle,
    load_split,
)

__all__ = [
    "CategoryParams",
    "generate_mesh",
    "loft",
    "POWER_GRASP_TEMPLATE",
    "RejectionExhausted",
    "balanced_labeled_grasps",
    "label_task_suitability",
    "sample_grasps",
    "suitability_rule",
    "uniform_labeled_grasps",
    "Camera",
    "SubjectOutOfFrame",
    "hand_segments",
    "render_sample",
    "DatasetConfig",
    "IoFailure",
    "build_dataset",
    "load_mesh_bundle",
    "load_split",
]
