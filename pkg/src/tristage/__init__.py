"""Three-stage camouflaged object detection: locate, crop and refine, fuse."""
from .config import ModelConfig, full_profile, profile, tiny_profile
from .model import StageOutputs, ThreeStageNet, build_model, count_parameters

__version__ = "0.1.0"

__all__ = ["ModelConfig", "StageOutputs", "ThreeStageNet", "build_model", "count_parameters",
           "full_profile", "profile", "tiny_profile"]
