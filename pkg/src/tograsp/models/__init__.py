"""Networks and training loops for pose estimation, retrieval, and
task-oriented grasp scoring."""

from .common import (
    ANGLE_SCALE,
    POS_SCALE,
    UntrainedModel,
    batch_orientation_loss,
    inject_orientation_noise,
    param_keys,
    project_rotations,
)
from .hand import HandNets, train_hand
from .objectnet import COND_MODES, ObjectNets, train_object
from .siamese import (
    EmbeddingStore,
    EmptyStore,
    InsufficientPairs,
    SiameseModel,
    load_store,
    retrieve_mesh,
    save_store,
    train_siamese,
    voxels_as_input,
)
from .stability import (
    NoValidGrasp,
    select_grasp,
    stability_score,
    stability_score_cloud,
)
from .togt import (
    TASK_FOR_CATEGORY,
    TASKS,
    IncompatibleTask,
    TogTModel,
    check_task,
    grasp_vector,
    task_onehot,
    togt_predict,
    togt_segment,
    train_togt,
)

__all__ = [
    "ANGLE_SCALE",
    "POS_SCALE",
    "UntrainedModel",
    "batch_orientation_loss",
    "inject_orientation_noise",
    "param_keys",
    "project_rotations",
    "HandNets",
    "train_hand",
    "COND_MODES",
    "ObjectNets",
    "train_object",
    "EmbeddingStore",
    "EmptyStore",
    "InsufficientPairs",
    "SiameseModel",
    "load_store",
    "retrieve_mesh",
    "save_store",
    "train_siamese",
    "voxels_as_input",
    "NoValidGrasp",
    "select_grasp",
    "stability_score",
    "stability_score_cloud",
    "TASK_FOR_CATEGORY",
    "TASKS",
    "IncompatibleTask",
    "TogTModel",
    "check_task",
    "grasp_vector",
    "task_onehot",
    "togt_predict",
    "togt_segment",
    "train_togt",
]
