"""Multi-importance semantic fast-forward for first-person video feature streams."""

from .errors import MiffError
from .features import FeatureStream, FrameFeatures, Detection, load_feature_stream, save_feature_stream
from .pipeline import PipelineConfig, run_pipeline, uniform_baseline

__all__ = [
    "Detection",
    "FeatureStream",
    "FrameFeatures",
    "MiffError",
    "PipelineConfig",
    "load_feature_stream",
    "run_pipeline",
    "save_feature_stream",
    "uniform_baseline",
]
__version__ = "0.1.0"
