"""Frame-level evaluation: ROC AUC with midrank tie correction, average
precision with stable-order tie breaking, and the test-split driver.

Only the temporal stack and classifier participate in evaluation; the prompt
and pseudo-label machinery is a training-time device.

AUC returns NaN as the error sentinel when the truth vector is degenerate
(all positive or all negative); AP does the same.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DatasetManifest, FeatureSequence, load_split
from .errors import ContractError
from .model import AnomalyModel
from .temporal import FrameScores


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values assigned the mean of their rank block."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def frame_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Area under the frame-level ROC curve, rank-statistic form.

    Equals P(score_pos > score_neg) + 0.5 * P(tie) over all positive/negative
    frame pairs. Degenerate truth returns NaN.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ContractError("scores and truth must have equal length")
    positives = int((truth == 1).sum())
    negatives = int((truth == 0).sum())
    if positives == 0 or negatives == 0:
        return math.nan
    ranks = _midranks(scores)
    pos_rank_sum = float(ranks[truth == 1].sum())
    return (pos_rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives)


def frame_ap(scores: np.ndarray, truth: np.ndarray) -> float:
    """Average precision via step interpolation over descending scores.

    Ties are broken by stable input order, so two frames with equal score are
    ranked in the order they appear; this is an evaluation-exactness caveat
    relative to implementations that group tied thresholds.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ContractError("scores and truth must have equal length")
    positives = int((truth == 1).sum())
    if positives == 0 or positives == len(truth):
        return math.nan
    order = np.argsort(-scores, kind="stable")
    ordered_truth = truth[order]
    tp = np.cumsum(ordered_truth == 1)
    ranks = np.arange(1, len(truth) + 1)
    precisions = (tp[ordered_truth == 1] / ranks[ordered_truth == 1]).tolist()
    return math.fsum(precisions) / positives


@dataclass
class EvalResult:
    """Frame-level metrics over a split plus the per-video score curves."""

    auc: float
    ap: float
    num_frames: int
    curves: list[tuple[FrameScores, np.ndarray]]

    def as_dict(self) -> dict:
        return {
            "auc": None if math.isnan(self.auc) else self.auc,
            "ap": None if math.isnan(self.ap) else self.ap,
            "num_frames": self.num_frames,
        }


def evaluate_videos(videos: list[FeatureSequence], model: AnomalyModel) -> EvalResult:
    """Score every frame of every video and pool them into AUC and AP."""
    if not videos:
        raise ContractError("evaluation needs at least one video")
    curves: list[tuple[FrameScores, np.ndarray]] = []
    all_scores: list[np.ndarray] = []
    all_truth: list[np.ndarray] = []
    for video in videos:
        if video.frame_truth is None:
            raise ContractError(f"{video.video_id}: evaluation requires frame_truth")
        eta = model.frame_scores(video.frames)
        curves.append((FrameScores(video.video_id, eta), video.frame_truth))
        all_scores.append(eta)
        all_truth.append(video.frame_truth)
    scores = np.concatenate(all_scores)
    truth = np.concatenate(all_truth)
    return EvalResult(
        auc=frame_auc(scores, truth),
        ap=frame_ap(scores, truth),
        num_frames=len(scores),
        curves=curves,
    )


def evaluate(manifest: DatasetManifest, model: AnomalyModel, base_dir, split: str = "test") -> EvalResult:
    return evaluate_videos(load_split(manifest, split, base_dir), model)
