"""Learnable text prompts and the normality visual prompt.

The frozen text-encoder stack is stood in for by mean pooling over prompt
tokens followed by a learnable square projection; the learnable surface
(context vectors, positional vectors, projection) is what training tunes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError

NVP_MODES = ("similarity-aggregate", "frame-average", "off")


class PromptBank:
    """Learnable prompt state shared by every class embedding.

    Holds l context vectors (shared across classes), l+1 positional vectors,
    a square projection, and the frozen per-class token vectors.
    """

    def __init__(self, class_tokens: np.ndarray, context_length: int, seed: int):
        if context_length < 1:
            raise ContractError("context_length must be at least 1")
        if class_tokens.ndim != 2 or class_tokens.shape[0] < 2:
            raise ContractError("class_tokens must be a k x D matrix with k >= 2")
        k, dim = class_tokens.shape
        rng = np.random.default_rng(seed)
        self.context_length = context_length
        self.num_classes = k
        self.dim = dim
        self.contexts = ag.parameter(0.02 * rng.standard_normal((context_length, dim)))
        self.positions = ag.parameter(0.02 * rng.standard_normal((context_length + 1, dim)))
        self.projection = ag.parameter(np.eye(dim) + 0.02 * rng.standard_normal((dim, dim)))
        self.class_tokens = Tensor(class_tokens)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "prompt.contexts": self.contexts,
            "prompt.positions": self.positions,
            "prompt.projection": self.projection,
        }


@dataclass
class TextEmbeddingSet:
    """The k class text embeddings; the last vector is the normal class."""

    vectors: list[Tensor]

    @property
    def normal(self) -> Tensor:
        return self.vectors[-1]

    def for_class(self, class_index: int) -> Tensor:
        """1-based lookup matching manifest class indices."""
        if not 1 <= class_index <= len(self.vectors):
            raise ContractError(f"class index {class_index} out of range")
        return self.vectors[class_index - 1]

    def abnormal_others(self, class_index: int) -> list[Tensor]:
        """Embeddings of the abnormal classes other than ``class_index``."""
        k = len(self.vectors)
        return [self.vectors[i] for i in range(k - 1) if i != class_index - 1]

    def as_arrays(self) -> list[np.ndarray]:
        return [v.data for v in self.vectors]


@dataclass
class NormalityVisualPrompt:
    """Aggregate of a normal video's frames used to enhance the normal text."""

    q: Tensor
    source_video_id: str


def encode_class(bank: PromptBank, class_index: int) -> Tensor:
    """Embed one class: mean over (context + position, token + position) rows,
    then the learnable projection."""
    if not 1 <= class_index <= bank.num_classes:
        raise ContractError(f"class index {class_index} out of range")
    prompt_rows = ag.tensor_sum(bank.contexts + bank.positions[: bank.context_length], axis=0)
    token_row = bank.class_tokens[class_index - 1] + bank.positions[bank.context_length]
    pooled = (prompt_rows + token_row) * (1.0 / (bank.context_length + 1))
    return bank.projection @ pooled


def build_embedding_set(bank: PromptBank) -> TextEmbeddingSet:
    return TextEmbeddingSet([encode_class(bank, i) for i in range(1, bank.num_classes + 1)])


def compute_nvp(normal_text: Tensor, frames, mode: str = "similarity-aggregate",
                video_id: str = "") -> NormalityVisualPrompt:
    """Aggregate a normal video's frames into a single prompt vector.

    ``similarity-aggregate`` weights frames by softmaxed match similarity with
    the normal text embedding; ``frame-average`` is the plain frame mean.
    """
    x = ag.as_tensor(frames)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ContractError("normality prompt needs a nonempty F x D frame matrix")
    if mode == "frame-average":
        return NormalityVisualPrompt(ag.tensor_mean(x, axis=0), video_id)
    if mode != "similarity-aggregate":
        raise ContractError(f"unknown nvp mode {mode!r}")
    sims = x @ normal_text
    weights = ag.softmax(sims, axis=0)
    return NormalityVisualPrompt(weights @ x, video_id)


class FfnBlock:
    """Two linear maps with a ReLU between, input 2D -> hidden -> D."""

    def __init__(self, dim: int, seed: int, hidden: int | None = None):
        rng = np.random.default_rng(seed)
        h = 4 * dim if hidden is None else hidden
        self.dim = dim
        self.w1 = ag.parameter(0.02 * rng.standard_normal((2 * dim, h)))
        self.b1 = ag.parameter(np.zeros(h))
        self.w2 = ag.parameter(0.02 * rng.standard_normal((h, dim)))
        self.b2 = ag.parameter(np.zeros(dim))

    def parameters(self) -> dict[str, Tensor]:
        return {"nvp.w1": self.w1, "nvp.b1": self.b1, "nvp.w2": self.w2, "nvp.b2": self.b2}

    def forward(self, x: Tensor) -> Tensor:
        return ag.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2


def enhance_normal_text(normal_text: Tensor, nvp: NormalityVisualPrompt, ffn: FfnBlock) -> Tensor:
    """Skip-connected enhancement of the normal text embedding."""
    if normal_text.shape != (ffn.dim,) or nvp.q.shape != (ffn.dim,):
        raise ContractError("normal text and visual prompt must both have dimension D")
    return ffn.forward(ag.concat([normal_text, nvp.q], axis=0)) + normal_text
