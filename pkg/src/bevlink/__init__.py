"""BEV semantic transmission testbed.

Fuses multi-camera and radar inputs into a bird's-eye-view feature map,
sends a compressed representation through an analog or digital channel
model, decodes per-cell vehicle occupancy, and optionally refines or
forecasts the mask with a conditional diffusion model.
"""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .grid import BevGridSpec
from .metrics import binarize, iou, mean_iou
from .pipeline import Pipeline, build_pipeline
from .scenes import SceneFrame, SceneSequence, generate_sequence

__version__ = "0.1.0"

__all__ = [
    "BevGridSpec",
    "ConfigError",
    "ExperimentConfig",
    "Pipeline",
    "SceneFrame",
    "SceneSequence",
    "binarize",
    "build_pipeline",
    "generate_sequence",
    "iou",
    "load_config",
    "mean_iou",
    "parse_config",
    "__version__",
]
