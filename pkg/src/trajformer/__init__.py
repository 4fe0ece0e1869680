"""Graph-embedded Transformer trajectory prediction with domain-adversarial
training, on a self-contained reverse-mode autodiff core."""

__version__ = "0.1.0"

from .data import Scaler, TrajectoryRecord, TrajectorySample, fit_scaler
from .domain import DatConfig
from .estimator import TrajectoryPredictor
from .graph import SceneGraph, build_scene_graph, gcn_forward
from .model import TransformerConfig
from .synth import SynthSpec, synth_generate
from .tensor import Tensor
from .training import TrainConfig

__all__ = [
    "DatConfig",
    "Scaler",
    "SceneGraph",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "TrajectoryPredictor",
    "TrajectoryRecord",
    "TrajectorySample",
    "TransformerConfig",
    "build_scene_graph",
    "fit_scaler",
    "gcn_forward",
    "synth_generate",
    "__version__",
]
