"""Evaluation harness and command-line interface."""

from .gradcheck import TOLERANCE, layer_probes, model_probes, run_all
from .infer import run_inference
from .report import EvalReport, MissingModel, RunConfig, evaluate, pair_reports

__all__ = [
    "TOLERANCE",
    "layer_probes",
    "model_probes",
    "run_all",
    "run_inference",
    "EvalReport",
    "MissingModel",
    "RunConfig",
    "evaluate",
    "pair_reports",
]
