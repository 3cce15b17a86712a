"""Temporal context learning: a causal transformer encoder whose per-head
attention span adapts to the input, plus the frame classifier.

Each head masks its causal attention weights with a soft ramp: weight 1 up to
distance z, falling linearly to 0 over a further ``softness`` frames. z is
predicted per query position from the layer input, so heads widen or shrink
their context with the video content. The current frame is always included
(the ramp is 1 at distance 0), which removes the first-frame singularity.

Dot products are scaled by 1/sqrt(d_head) for numerical stability.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError

TEMPORAL_MODES = ("tcsal", "plain-encoder")

# Sentinel distance for non-causal (future) positions: large enough that the
# ramp is exactly 0 there for any plausible z and softness.
_FUTURE = 1e9

_distance_cache: dict[int, np.ndarray] = {}


def _distances(num_frames: int) -> np.ndarray:
    cached = _distance_cache.get(num_frames)
    if cached is None:
        t = np.arange(num_frames, dtype=np.float64)
        cached = t[:, None] - t[None, :]
        cached[cached < 0] = _FUTURE
        _distance_cache[num_frames] = cached
    return cached


def soft_mask(h, z, softness):
    """Ramp mask value in [0, 1] for a frame distance h and span z.

    Equals 1 for h <= z, 0 once h - z reaches the softness, linear between.
    The (z - h)/softness + 1 arrangement makes both saturation laws exact in
    floating point (rounding is monotone and z - h is exactly signed).
    """
    return np.clip((np.asarray(z, dtype=np.float64) - h) / softness + 1.0, 0.0, 1.0)


def adaptive_span(x: Tensor, span_vec: Tensor, span_bias: Tensor) -> Tensor:
    """Per-position span z in (0, F) predicted from the layer input."""
    num_frames = x.shape[0]
    return float(num_frames) * ag.sigmoid(x @ span_vec + span_bias)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, z: Tensor, softness: float) -> Tensor:
    """Causal attention with the soft span mask applied per query position.

    Rows of the attention matrix are probability vectors; weights on future
    frames are exactly zero. Raises if any row masks out everything, which
    cannot happen for z >= 0 because the self-distance mask is 1.
    """
    if softness < 1:
        raise ContractError("mask softness must be at least 1")
    num_frames, d_head = q.shape
    beta = (q @ k.T) * (1.0 / math.sqrt(d_head))
    dist = _distances(num_frames)
    ramp = ag.clamp((z.reshape((num_frames, 1)) - dist) / softness + 1.0, 0.0, 1.0)
    # Shift is a constant: the softmax-style normalization is invariant to it.
    shift = beta.data.max(axis=1, keepdims=True)
    weights = ramp * ag.exp(beta - shift)
    denom = ag.tensor_sum(weights, axis=1, keepdims=True)
    if np.any(denom.data == 0.0):
        raise ContractError("a query position masked out every frame including itself")
    return (weights / denom) @ v


def _plain_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Full-context bidirectional attention (the no-mask encoder variant)."""
    d_head = q.shape[1]
    beta = (q @ k.T) * (1.0 / math.sqrt(d_head))
    return ag.softmax(beta, axis=1) @ v


@dataclass
class SpanParams:
    """Learnable span predictor for one head plus the shared softness."""

    span_vec: Tensor
    span_bias: Tensor
    softness: float


class EncoderLayer:
    """Self-attention block: attention + residual + norm, FFN + residual + norm."""

    def __init__(self, dim: int, heads: int, softness: float, rng: np.random.Generator,
                 masked: bool = True, ffn_ratio: int = 4):
        if dim % heads != 0:
            raise ContractError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.d_head = dim // heads
        self.softness = softness
        self.masked = masked
        hidden = ffn_ratio * dim

        def w(*shape):
            return ag.parameter(0.02 * rng.standard_normal(shape))

        self.wq, self.wk, self.wv, self.wo = (w(dim, dim) for _ in range(4))
        self.bq, self.bk, self.bv, self.bo = (ag.parameter(np.zeros(dim)) for _ in range(4))
        self.span_vecs = ag.parameter(np.zeros((heads, dim)))
        self.span_biases = ag.parameter(np.zeros(heads))
        self.ffn_w1 = w(dim, hidden)
        self.ffn_b1 = ag.parameter(np.zeros(hidden))
        self.ffn_w2 = w(hidden, dim)
        self.ffn_b2 = ag.parameter(np.zeros(dim))
        self.ln1_gain = ag.parameter(np.ones(dim))
        self.ln1_bias = ag.parameter(np.zeros(dim))
        self.ln2_gain = ag.parameter(np.ones(dim))
        self.ln2_bias = ag.parameter(np.zeros(dim))

    def parameters(self) -> dict[str, Tensor]:
        names = (
            "wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo",
            "span_vecs", "span_biases",
            "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
            "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
        )
        return {name: getattr(self, name) for name in names}

    def forward(self, x: Tensor) -> Tensor:
        q = x @ self.wq + self.bq
        k = x @ self.wk + self.bk
        v = x @ self.wv + self.bv
        if self.masked:
            # All heads' spans from the layer input in one matmul.
            z_all = float(x.shape[0]) * ag.sigmoid(x @ self.span_vecs.T + self.span_biases)
        head_outs = []
        for h in range(self.heads):
            cols = slice(h * self.d_head, (h + 1) * self.d_head)
            qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
            if self.masked:
                head_outs.append(masked_attention(qh, kh, vh, z_all[:, h], self.softness))
            else:
                head_outs.append(_plain_attention(qh, kh, vh))
        attn = ag.concat(head_outs, axis=1) @ self.wo + self.bo
        x = ag.layer_norm(x + attn) * self.ln1_gain + self.ln1_bias
        ffn = ag.relu(x @ self.ffn_w1 + self.ffn_b1) @ self.ffn_w2 + self.ffn_b2
        return ag.layer_norm(x + ffn) * self.ln2_gain + self.ln2_bias


class TemporalStack:
    """Stack of encoder layers, span-masked causal by default.

    ``mode="plain-encoder"`` swaps in full-context bidirectional attention
    with no mask (the comparison baseline).
    """

    def __init__(self, dim: int, layers: int = 4, heads: int = 4, softness: float = 256.0,
                 seed: int = 0, mode: str = "tcsal", ffn_ratio: int = 4):
        if mode not in TEMPORAL_MODES:
            raise ContractError(f"temporal mode must be one of {TEMPORAL_MODES}, got {mode!r}")
        rng = np.random.default_rng(seed)
        self.mode = mode
        self.layers = [
            EncoderLayer(dim, heads, softness, rng, masked=(mode == "tcsal"), ffn_ratio=ffn_ratio)
            for _ in range(layers)
        ]

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                out[f"temporal.layer{i}.{name}"] = p
        return out

    def forward(self, x) -> Tensor:
        x = ag.as_tensor(x)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ContractError("temporal stack expects a nonempty F x D matrix")
        for layer in self.layers:
            x = layer.forward(x)
        return x


@dataclass
class FrameScores:
    """Frame-level anomaly scores in (0, 1) for one video."""

    video_id: str
    eta: np.ndarray


class FrameClassifier:
    """Layer norm, linear map to one logit per frame, sigmoid."""

    def __init__(self, dim: int):
        self.ln_gain = ag.parameter(np.ones(dim))
        self.ln_bias = ag.parameter(np.zeros(dim))
        self.weight = ag.parameter(np.zeros(dim))
        self.bias = ag.parameter(np.zeros(()))

    def parameters(self) -> dict[str, Tensor]:
        return {
            "classifier.ln_gain": self.ln_gain,
            "classifier.ln_bias": self.ln_bias,
            "classifier.weight": self.weight,
            "classifier.bias": self.bias,
        }

    def forward(self, x: Tensor) -> Tensor:
        normed = ag.layer_norm(x) * self.ln_gain + self.ln_bias
        return ag.sigmoid(normed @ self.weight + self.bias)
