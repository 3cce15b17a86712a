"""Weakly supervised video anomaly detection on frame-embedding sequences.

Training aligns learnable event-text embeddings with video frames, infers
frame-level pseudo-labels with normality guidance, and self-trains a
temporal-attention frame classifier; inference needs only the classifier
side. See the CLI (``wsvad --help``) for the end-to-end workflow.
"""

__version__ = "0.1.0"

from .config import RunConfig, TrainConfig
from .data import DatasetManifest, FeatureSequence, SyntheticConfig
from .model import AnomalyModel

__all__ = [
    "AnomalyModel",
    "DatasetManifest",
    "FeatureSequence",
    "RunConfig",
    "SyntheticConfig",
    "TrainConfig",
    "__version__",
]
