"""The training loop: stratified batch sampling, per-step pseudo-label
generation synchronized with classifier updates, and Adam with decoupled
weight decay.

Gradient flow is split by construction: ranking, distribution-inconsistency,
and temporal-constraint terms reach only the prompt-side parameters, while
the classification loss reaches only the temporal stack and classifier.
Pseudo-labels are recomputed from the current parameters every step and never
carry gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import losses
from .autograd import Tensor, backward
from .config import RunConfig, TrainConfig, seed_for
from .data import DatasetManifest, FeatureSequence, load_split
from .errors import ContractError, NumericsError
from .losses import LossReport, LossWeights
from .model import AnomalyModel
from .prompts import compute_nvp, enhance_normal_text
from .pseudolabels import pseudo_labels


class Adam:
    """Adam with decoupled weight decay applied directly to parameters.

    Moments default to beta1=0.9, beta2=0.999, eps=1e-8; parameters whose
    gradient is absent in a step are left untouched.
    """

    def __init__(self, params: dict[str, Tensor], learning_rate: float,
                 weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        lr = self.learning_rate
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data = p.data - lr * update - lr * self.weight_decay * p.data


class BatchSampler:
    """Permutation sampler per pool; exhausted pools wrap with a reshuffle."""

    def __init__(self, num_normal: int, num_abnormal: int, batch_normal: int,
                 batch_abnormal: int, rng: np.random.Generator):
        if num_normal < 1 or num_abnormal < 1:
            raise ContractError("both the normal and abnormal pools must be nonempty")
        self.rng = rng
        self.batch_normal = batch_normal
        self.batch_abnormal = batch_abnormal
        self._pools = {
            "normal": [num_normal, rng.permutation(num_normal), 0],
            "abnormal": [num_abnormal, rng.permutation(num_abnormal), 0],
        }
        self.steps_per_epoch = max(
            math.ceil(num_normal / batch_normal),
            math.ceil(num_abnormal / batch_abnormal),
        )

    def _draw(self, pool: str, count: int) -> list[int]:
        size, perm, pos = self._pools[pool]
        out: list[int] = []
        while len(out) < count:
            if pos == size:
                perm = self.rng.permutation(size)
                pos = 0
            take = min(count - len(out), size - pos)
            out.extend(perm[pos:pos + take].tolist())
            pos += take
        self._pools[pool] = [size, perm, pos]
        return out

    def next_batch(self) -> tuple[list[int], list[int]]:
        return self._draw("normal", self.batch_normal), self._draw("abnormal", self.batch_abnormal)


# ---------------------------------------------------------------------------
# Loss assembly
# ---------------------------------------------------------------------------

def _normal_video_terms(model: AnomalyModel, video: FeatureSequence, emb, cfg: TrainConfig):
    """Per-video loss tensors for a normal video."""
    x = Tensor(video.frames)
    terms: dict[str, Tensor] = {}
    if cfg.use_rank_normal:
        s_nn = x @ emb.normal
        phi_na = [x @ emb.vectors[i] for i in range(model.num_classes - 1)]
        terms["rank_normal"] = losses.rank_loss_normal(s_nn, phi_na)
    eta = model.classifier.forward(model.stack.forward(x))
    terms["bce"] = losses.bce_loss(eta, np.zeros(video.num_frames))
    return terms


def _abnormal_video_terms(model: AnomalyModel, video: FeatureSequence,
                          pair_frames: np.ndarray | None, emb, cfg: TrainConfig):
    """Per-video loss tensors for an abnormal video, paired with one normal
    video for the normality visual prompt."""
    x = Tensor(video.frames)
    if cfg.nvp == "off":
        enhanced = emb.normal
    else:
        if pair_frames is None:
            raise ContractError("visual prompt enhancement needs a paired normal video")
        nvp = compute_nvp(emb.normal, pair_frames, mode=cfg.nvp)
        enhanced = enhance_normal_text(emb.normal, nvp, model.nvp_ffn)

    s_an = x @ enhanced
    s_aa = x @ emb.for_class(video.class_index)
    terms: dict[str, Tensor] = {}
    if cfg.use_rank_abnormal:
        phi_aa = [x @ e for e in emb.abnormal_others(video.class_index)]
        terms["rank_abnormal"] = losses.rank_loss_abnormal(s_an, s_aa, phi_aa)
    s_aa_norm = losses.normalize_minmax(s_aa)
    if cfg.use_dil:
        s_an_norm = losses.normalize_minmax(s_an)
        terms["dil"] = losses.profile_cosine(s_aa_norm, s_an_norm)
    terms["smooth"], terms["sparse"] = losses.smooth_sparse(s_aa_norm)

    labels = pseudo_labels(video, emb.as_arrays(), enhanced.data, cfg.plg())
    eta = model.classifier.forward(model.stack.forward(x))
    terms["bce"] = losses.bce_loss(eta, labels.gamma)
    return terms


def _weighted_contribution(terms: dict[str, Tensor], is_abnormal: bool,
                           cfg: TrainConfig, n_normal: int, n_abnormal: int):
    """One video's share of the batch loss."""
    weights = LossWeights(cfg.smooth_weight, cfg.sparse_weight)
    contrib = terms["bce"] * (1.0 / (n_normal + n_abnormal))
    if is_abnormal:
        scale = 1.0 / n_abnormal
        if "rank_abnormal" in terms:
            contrib = contrib + terms["rank_abnormal"] * scale
        if "dil" in terms:
            contrib = contrib + terms["dil"] * scale
        contrib = contrib + terms["smooth"] * (weights.smooth * scale)
        contrib = contrib + terms["sparse"] * (weights.sparse * scale)
    elif "rank_normal" in terms:
        contrib = contrib + terms["rank_normal"] * (1.0 / n_normal)
    return contrib


class _TermAverager:
    def __init__(self):
        self.sums: dict[str, float] = {}
        self.counts: dict[str, int] = {}

    def add(self, terms: dict[str, Tensor]) -> None:
        for name, t in terms.items():
            self.sums[name] = self.sums.get(name, 0.0) + t.item()
            self.counts[name] = self.counts.get(name, 0) + 1

    def mean(self, name: str) -> float:
        if name not in self.counts:
            return 0.0
        return self.sums[name] / self.counts[name]

    def report(self, weights: LossWeights) -> LossReport:
        means = {name: self.mean(name) for name in LossReport.TERMS if name != "total"}
        total = losses.total_loss(
            means["rank_normal"], means["rank_abnormal"], means["dil"],
            means["bce"], means["smooth"], means["sparse"], weights,
        )
        return LossReport(total=total, **means)


def _iter_batch(model, normals, abnormals, cfg):
    """Yield (terms, is_abnormal) per video; the embedding graph is shared."""
    emb = model.embedding_set()
    for video in normals:
        yield _normal_video_terms(model, video, emb, cfg), False
    for j, video in enumerate(abnormals):
        pair = normals[j % len(normals)].frames if normals and cfg.nvp != "off" else None
        yield _abnormal_video_terms(model, video, pair, emb, cfg), True


def batch_loss(model: AnomalyModel, normals: list[FeatureSequence],
               abnormals: list[FeatureSequence], cfg: TrainConfig) -> tuple[Tensor, LossReport]:
    """The whole batch objective as a single graph scalar (used by gradient
    checks; train_step accumulates per video instead to bound memory)."""
    if not normals or not abnormals:
        raise ContractError("a batch needs at least one normal and one abnormal video")
    averager = _TermAverager()
    total: Tensor | None = None
    for terms, is_abnormal in _iter_batch(model, normals, abnormals, cfg):
        averager.add(terms)
        contrib = _weighted_contribution(terms, is_abnormal, cfg, len(normals), len(abnormals))
        total = contrib if total is None else total + contrib
    weights = LossWeights(cfg.smooth_weight, cfg.sparse_weight)
    return total, averager.report(weights)


def train_step(model: AnomalyModel, normals: list[FeatureSequence],
               abnormals: list[FeatureSequence], optimizer: Adam,
               cfg: TrainConfig) -> LossReport:
    """One synchronized step: current-parameter pseudo-labels, gradients for
    every enabled term, a single Adam update. Aborts without updating if any
    loss or gradient is non-finite."""
    if not normals or not abnormals:
        raise ContractError("a batch needs at least one normal and one abnormal video")
    optimizer.zero_grad()
    averager = _TermAverager()
    for terms, is_abnormal in _iter_batch(model, normals, abnormals, cfg):
        averager.add(terms)
        contrib = _weighted_contribution(terms, is_abnormal, cfg, len(normals), len(abnormals))
        if not math.isfinite(contrib.item()):
            raise NumericsError("aborting step: non-finite loss")
        backward(contrib)
    for name, p in model.parameters().items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericsError(f"aborting step: non-finite gradient for {name}")
    optimizer.step()
    optimizer.zero_grad()
    weights = LossWeights(cfg.smooth_weight, cfg.sparse_weight)
    return averager.report(weights)


# ---------------------------------------------------------------------------
# Full training run
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: AnomalyModel
    log_rows: list[dict] = field(default_factory=list)


def train(manifest: DatasetManifest, base_dir, run: RunConfig,
          progress=None) -> TrainResult:
    """Train a fresh model on the manifest's train split."""
    videos = load_split(manifest, "train", base_dir)
    normal_pool = [v for v in videos if not v.is_abnormal]
    abnormal_pool = [v for v in videos if v.is_abnormal]
    if not normal_pool or not abnormal_pool:
        raise ContractError("training needs both normal and abnormal videos")

    cfg = run.train
    model = AnomalyModel.from_run_config(manifest, run)
    optimizer = Adam(model.parameters(), cfg.learning_rate, cfg.weight_decay)
    sampler = BatchSampler(
        len(normal_pool), len(abnormal_pool),
        min(cfg.batch_normal, len(normal_pool)),
        min(cfg.batch_abnormal, len(abnormal_pool)),
        np.random.default_rng(seed_for(run.seed, "batches")),
    )

    rows: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        for step in range(1, sampler.steps_per_epoch + 1):
            normal_idx, abnormal_idx = sampler.next_batch()
            report = train_step(
                model,
                [normal_pool[i] for i in normal_idx],
                [abnormal_pool[i] for i in abnormal_idx],
                optimizer,
                cfg,
            )
            rows.append({"epoch": epoch, "step": step, **report.as_dict()})
        if progress is not None:
            progress(epoch, rows[-1])
    return TrainResult(model=model, log_rows=rows)
