"""Exemplar-guided image colourisation with axial-attention style
transfer, built on a minimal reverse-mode tensor engine."""

from .colorspace import LabImage, lab_to_rgb, replicate_luma, rgb_to_lab
from .config import Config, load_config
from .decoder import ColorizationNet, PredictionSet, network_forward
from .estimator import ExemplarColorizer, ReferenceRecommender
from .metrics import his_score, ssim_score
from .tensor import Graph, GraphError, ShapeError, Tensor, grad_check
from .trainer import AdamState, adam_step, train_loop

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Graph", "ShapeError", "GraphError", "grad_check",
    "LabImage", "rgb_to_lab", "lab_to_rgb", "replicate_luma",
    "Config", "load_config",
    "ColorizationNet", "PredictionSet", "network_forward",
    "ExemplarColorizer", "ReferenceRecommender",
    "his_score", "ssim_score",
    "AdamState", "adam_step", "train_loop",
    "__version__",
]
