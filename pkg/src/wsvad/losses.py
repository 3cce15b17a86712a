"""Training objectives: max-margin ranking losses over match similarities,
the distribution-inconsistency penalty, temporal smoothness and sparsity
constraints, the pseudo-label classification loss, and their weighted total.

Naming note: the squared-temporal-difference term is called ``smooth`` here
and carries the 0.1 default weight; the score-sum term is called ``sparse``
with the 0.01 default weight. The assignment of weights to terms follows the
original objective exactly; only the names are behavior-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError

BCE_CLIP = 1e-7


@dataclass
class LossWeights:
    """Nonnegative weights for the temporal constraint terms."""

    smooth: float = 0.1
    sparse: float = 0.01

    def __post_init__(self):
        if self.smooth < 0 or self.sparse < 0:
            raise ContractError("loss weights must be nonnegative")


@dataclass
class LossReport:
    """Per-term scalar values of one step or batch, plus the weighted total."""

    rank_normal: float = 0.0
    rank_abnormal: float = 0.0
    dil: float = 0.0
    bce: float = 0.0
    smooth: float = 0.0
    sparse: float = 0.0
    total: float = 0.0

    TERMS = ("rank_normal", "rank_abnormal", "dil", "bce", "smooth", "sparse", "total")

    def as_dict(self) -> dict[str, float]:
        return {t: getattr(self, t) for t in self.TERMS}


def _chain_max(values: Sequence[Tensor]) -> Tensor:
    out = values[0]
    for v in values[1:]:
        out = ag.maximum(out, v)
    return out


def rank_loss_normal(s_nn: Tensor, phi_na: Sequence[Tensor]) -> Tensor:
    """Hinge pushing the best normal-text match on a normal video a margin of 1
    above the best abnormal-text match."""
    if not phi_na:
        raise ContractError("normal ranking loss needs at least one abnormal-text similarity vector")
    best_neg = _chain_max([ag.tensor_max(p) for p in phi_na])
    return ag.relu(1.0 - ag.tensor_max(s_nn) + best_neg)


def rank_loss_abnormal(s_an: Tensor, s_aa: Tensor, phi_aa: Sequence[Tensor]) -> Tensor:
    """Two hinges on an abnormal video: both the enhanced-normal-text match and
    the true-abnormal-text match must beat every other abnormal text by 1.

    With only one abnormal class the competitor set is empty and each hinge
    reduces to max(0, 1 - max(s)): the margin is measured against zero.
    """
    if phi_aa:
        best_other = _chain_max([ag.tensor_max(p) for p in phi_aa])
        term_normal = ag.relu(1.0 - ag.tensor_max(s_an) + best_other)
        term_abnormal = ag.relu(1.0 - ag.tensor_max(s_aa) + best_other)
    else:
        term_normal = ag.relu(1.0 - ag.tensor_max(s_an))
        term_abnormal = ag.relu(1.0 - ag.tensor_max(s_aa))
    return term_normal + term_abnormal


def normalize_minmax(s: Tensor) -> Tensor:
    """Differentiable per-video min-max to [0, 1]; constant input gives zeros."""
    lo = ag.tensor_min(s)
    hi = ag.tensor_max(s)
    if hi.item() == lo.item():
        return Tensor(np.zeros(s.shape))
    return (s - lo) / (hi - lo)


def profile_cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two per-frame similarity profiles; 0 if either is
    the zero vector."""
    sq_a = ag.tensor_sum(a * a)
    sq_b = ag.tensor_sum(b * b)
    if sq_a.item() == 0.0 or sq_b.item() == 0.0:
        return Tensor(np.zeros(()))
    return ag.tensor_sum(a * b) / (ag.sqrt(sq_a) * ag.sqrt(sq_b))


def dil_loss(s_aa_norm: Sequence[Tensor], s_an_norm: Sequence[Tensor]) -> Tensor:
    """Mean cosine similarity between the abnormal-text and normal-text
    similarity profiles, per video. Minimizing it pushes the profiles apart."""
    if len(s_aa_norm) != len(s_an_norm) or not s_aa_norm:
        raise ContractError("distribution-inconsistency loss needs matched nonempty profile lists")
    total = profile_cosine(s_aa_norm[0], s_an_norm[0])
    for a, b in zip(s_aa_norm[1:], s_an_norm[1:]):
        total = total + profile_cosine(a, b)
    return total * (1.0 / len(s_aa_norm))


def smooth_sparse(s_norm: Tensor) -> tuple[Tensor, Tensor]:
    """Temporal squared differences and the plain score sum of one profile."""
    if s_norm.shape[0] < 2:
        raise ContractError("temporal constraints need at least two frames")
    diffs = s_norm[1:] - s_norm[:-1]
    return ag.tensor_sum(diffs * diffs), ag.tensor_sum(s_norm)


def bce_loss(eta: Tensor, gamma: np.ndarray) -> Tensor:
    """Binary cross-entropy of predicted scores against pseudo-label targets,
    averaged over frames. Scores are clipped away from {0, 1} before the log."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if eta.shape != gamma.shape:
        raise ContractError(f"score/label length mismatch: {eta.shape} vs {gamma.shape}")
    e = ag.clamp(eta, BCE_CLIP, 1.0 - BCE_CLIP)
    per_frame = gamma * ag.log(e) + (1.0 - gamma) * ag.log(1.0 - e)
    return -ag.tensor_mean(per_frame)


def total_loss(rank_normal, rank_abnormal, dil, bce, smooth, sparse,
               weights: LossWeights):
    """Weighted sum of all terms; works on floats and on graph scalars alike."""
    return (
        rank_normal + rank_abnormal + dil + bce
        + weights.smooth * smooth + weights.sparse * sparse
    )
