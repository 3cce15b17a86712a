"""Frame-level pseudo-label generation with normality guidance.

Everything here is plain numpy: pseudo-labels are training targets and never
carry gradients. For an abnormal video the per-frame match similarities with
the enhanced normal text and with the true abnormal text are min-max
normalized, fused with guidance weight alpha, normalized again, and
thresholded. Normal videos always get the zero label vector.

Label polarity: in the fused score psi, large values indicate NORMAL frames
(high normal-text match, low abnormal-text match). The default ``anomaly``
polarity therefore labels a frame 1 when 1 - psi_norm >= theta, so that
gamma=1 means anomalous and can supervise the anomaly score. The ``literal``
polarity (gamma = 1 where psi_norm >= theta) is kept for auditability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureSequence
from .errors import ContractError

POLARITIES = ("anomaly", "literal")


@dataclass
class PlgConfig:
    """Guidance weight alpha in [0, 1] and threshold theta in (0, 1)."""

    alpha: float = 0.2
    theta: float = 0.55
    polarity: str = "anomaly"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.theta < 1.0:
            raise ContractError(f"theta must lie in (0, 1), got {self.theta}")
        if self.polarity not in POLARITIES:
            raise ContractError(f"polarity must be one of {POLARITIES}, got {self.polarity!r}")


@dataclass
class SimilarityVector:
    """Per-frame match similarities of one text embedding with one video."""

    values: np.ndarray
    class_index: int = 0
    video_id: str = ""


@dataclass
class PseudoLabelVector:
    """Binary frame labels (1 = anomalous under the default polarity)."""

    video_id: str
    gamma: np.ndarray
    psi_norm: np.ndarray


def similarities(frames: np.ndarray, text: np.ndarray) -> np.ndarray:
    """Inner product of each frame embedding with a text embedding."""
    return frames @ text


def minmax_normalize(s: np.ndarray) -> np.ndarray:
    """Map to [0, 1] by the per-video range; constant input maps to zeros."""
    s = np.asarray(s, dtype=np.float64)
    lo = s.min()
    hi = s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def fuse(s_an_norm: np.ndarray, s_aa_norm: np.ndarray, alpha: float) -> np.ndarray:
    """Normality-guided fusion: alpha * s_an + (1 - alpha) * (1 - s_aa)."""
    if len(s_an_norm) != len(s_aa_norm):
        raise ContractError("fused similarity vectors must have equal length")
    return alpha * s_an_norm + (1.0 - alpha) * (1.0 - s_aa_norm)


def threshold_labels(psi_norm: np.ndarray, theta: float, polarity: str = "anomaly") -> np.ndarray:
    """Threshold the fused, normalized score into binary labels (inclusive >=)."""
    if polarity == "literal":
        return (psi_norm >= theta).astype(np.float64)
    if polarity == "anomaly":
        return ((1.0 - psi_norm) >= theta).astype(np.float64)
    raise ContractError(f"unknown polarity {polarity!r}")


def pseudo_labels(
    video: FeatureSequence,
    embeddings: list[np.ndarray],
    enhanced_normal: np.ndarray,
    cfg: PlgConfig,
) -> PseudoLabelVector:
    """Infer frame labels for one video from current text embeddings.

    ``embeddings`` is the full k-vector text embedding set (normal last);
    ``enhanced_normal`` is the visual-prompt-enhanced normal embedding used
    for the guidance similarities.
    """
    if not video.is_abnormal:
        zeros = np.zeros(video.num_frames)
        return PseudoLabelVector(video.video_id, zeros, zeros.copy())
    if video.class_index > len(embeddings) - 1 or video.class_index < 1:
        raise ContractError(
            f"{video.video_id}: no text embedding for class {video.class_index}"
        )
    s_an = minmax_normalize(similarities(video.frames, enhanced_normal))
    s_aa = minmax_normalize(similarities(video.frames, embeddings[video.class_index - 1]))
    psi_norm = minmax_normalize(fuse(s_an, s_aa, cfg.alpha))
    gamma = threshold_labels(psi_norm, cfg.theta, cfg.polarity)
    return PseudoLabelVector(video.video_id, gamma, psi_norm)
