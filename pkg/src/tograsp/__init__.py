"""Task-oriented grasping pipeline: geometry, hand kinematics, voxel
grids, a small differentiable tensor engine, pose/retrieval/suitability
models, a synthetic data generator, and an evaluation CLI."""

__version__ = "0.1.0"
