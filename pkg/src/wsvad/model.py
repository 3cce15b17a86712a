"""The assembled detector: prompt bank, visual-prompt FFN, temporal stack,
and frame classifier, with named parameter access for the optimizer and
checkpointing.

Inference uses only the temporal stack and classifier on raw frame
embeddings; the text side exists purely to supervise training.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import RunConfig, TrainConfig, seed_for
from .data import DatasetManifest, class_token_embeddings
from .errors import ContractError
from .prompts import FfnBlock, PromptBank, TextEmbeddingSet, build_embedding_set
from .temporal import FrameClassifier, TemporalStack


class AnomalyModel:
    """All trainable state for one run."""

    def __init__(self, manifest: DatasetManifest, cfg: TrainConfig, master_seed: int):
        self.cfg = cfg
        self.num_classes = manifest.num_classes
        self.dim = manifest.dim
        tokens = class_token_embeddings(manifest, seed_for(master_seed, "class-tokens"))
        self.bank = PromptBank(tokens, cfg.context_length, seed_for(master_seed, "prompt-bank"))
        self.nvp_ffn = FfnBlock(manifest.dim, seed_for(master_seed, "nvp-ffn"))
        self.stack = TemporalStack(
            manifest.dim,
            layers=cfg.layers,
            heads=cfg.heads,
            softness=cfg.softness,
            seed=seed_for(master_seed, "temporal"),
            mode=cfg.temporal,
            ffn_ratio=cfg.ffn_ratio,
        )
        self.classifier = FrameClassifier(manifest.dim)

    @classmethod
    def from_run_config(cls, manifest: DatasetManifest, run: RunConfig) -> "AnomalyModel":
        return cls(manifest, run.train, run.seed)

    # -- parameter access ---------------------------------------------------

    def text_parameters(self) -> dict[str, Tensor]:
        return {**self.bank.parameters(), **self.nvp_ffn.parameters()}

    def temporal_parameters(self) -> dict[str, Tensor]:
        return {**self.stack.parameters(), **self.classifier.parameters()}

    def parameters(self) -> dict[str, Tensor]:
        return {**self.text_parameters(), **self.temporal_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def checksum(self) -> str:
        """Order-independent digest of all parameter values."""
        h = hashlib.sha256()
        for name in sorted(self.parameters()):
            h.update(name.encode("utf-8"))
            h.update(self.parameters()[name].data.tobytes())
        return h.hexdigest()

    # -- forward paths ------------------------------------------------------

    def embedding_set(self) -> TextEmbeddingSet:
        return build_embedding_set(self.bank)

    def frame_scores(self, frames: np.ndarray) -> np.ndarray:
        """Inference path: frame embeddings -> temporal stack -> classifier.

        Never touches the prompt bank or the visual-prompt FFN.
        """
        with ag.no_grad():
            encoded = self.stack.forward(ag.Tensor(frames))
            return self.classifier.forward(encoded).data

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ContractError(f"checkpoint is missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            stored = np.asarray(arrays[name], dtype=np.float64)
            if stored.shape != p.data.shape:
                raise ContractError(
                    f"checkpoint parameter {name} has shape {stored.shape}, expected {p.data.shape}"
                )
            p.data = stored.copy()
