"""Frame-embedding datasets: the TPF1 file format, JSON manifests, and a
controllable synthetic benchmark generator.

TPF1 layout: 4-byte magic ``TPF1``, little-endian uint32 frame count F,
little-endian uint32 embedding dimension D, then F*D little-endian float64
values in frame-major order. Real features extracted offline enter through
the same contract; this module never runs an encoder.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

MAGIC = b"TPF1"
_HEADER = struct.Struct("<4sII")


def save_features(path: str | Path, frames: np.ndarray) -> None:
    """Write an F x D matrix of frame embeddings as a TPF1 file."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ContractError(f"features must be a nonempty F x D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("features contain NaN or Inf")
    payload = _HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]) + arr.astype("<f8").tobytes()
    Path(path).write_bytes(payload)


def load_features(path: str | Path) -> np.ndarray:
    """Read a TPF1 file back into an F x D float64 matrix, bit-exact."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, num_frames, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if num_frames < 1 or dim < 1:
        raise FormatError(f"{path}: invalid dimensions F={num_frames}, D={dim}")
    expected = _HEADER.size + num_frames * dim * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return flat.reshape(num_frames, dim).astype(np.float64)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass
class FeatureSequence:
    """One video: frame embeddings plus its video-level annotation.

    ``class_index`` is 1-based; abnormal classes occupy 1..k-1 and the normal
    class is k. ``frame_truth`` is present only on test videos.
    """

    video_id: str
    frames: np.ndarray
    label: int
    class_index: int
    frame_truth: np.ndarray | None = None

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ContractError(f"{self.video_id}: frames must be a nonempty F x D matrix")
        if self.label not in (0, 1):
            raise ContractError(f"{self.video_id}: label must be 0 or 1")
        if self.frame_truth is not None and len(self.frame_truth) != self.num_frames:
            raise ContractError(f"{self.video_id}: frame_truth length mismatch")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def is_abnormal(self) -> bool:
        return self.label == 1


@dataclass
class VideoEntry:
    path: str
    label: int
    class_index: int
    split: str
    frame_truth: list[int] | None = None


@dataclass
class DatasetManifest:
    """Dataset description: dimension, class names, and the video list.

    The last class name is the normal class (1-based index ``num_classes``).
    """

    name: str
    dim: int
    num_classes: int
    classes: list[str]
    videos: list[VideoEntry] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ContractError("a dataset needs at least one abnormal class and one normal class")
        if len(self.classes) != self.num_classes:
            raise ContractError("classes list length disagrees with num_classes")
        if len(set(self.classes)) != len(self.classes):
            raise ContractError("duplicate class names")
        seen: set[str] = set()
        for v in self.videos:
            if not 1 <= v.class_index <= self.num_classes:
                raise ContractError(f"{v.path}: class_index {v.class_index} out of range")
            if v.label == 0 and v.class_index != self.num_classes:
                raise ContractError(f"{v.path}: normal videos must use the normal class index")
            if v.label == 1 and v.class_index == self.num_classes:
                raise ContractError(f"{v.path}: abnormal videos cannot use the normal class index")
            if v.path in seen:
                raise ContractError(f"{v.path}: video listed in more than one split")
            seen.add(v.path)

    def in_split(self, split: str) -> list[VideoEntry]:
        return [v for v in self.videos if v.split == split]

    def to_dict(self) -> dict:
        videos = []
        for v in self.videos:
            entry: dict = {
                "path": v.path,
                "label": v.label,
                "class_index": v.class_index,
                "split": v.split,
            }
            if v.frame_truth is not None:
                entry["frame_truth"] = list(map(int, v.frame_truth))
            videos.append(entry)
        return {
            "name": self.name,
            "dim": self.dim,
            "num_classes": self.num_classes,
            "classes": list(self.classes),
            "videos": videos,
        }

    def save(self, path: str | Path) -> None:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        Path(path).write_text(text + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON manifest: {e}") from e
        try:
            videos = [
                VideoEntry(
                    path=v["path"],
                    label=int(v["label"]),
                    class_index=int(v["class_index"]),
                    split=v["split"],
                    frame_truth=v.get("frame_truth"),
                )
                for v in doc["videos"]
            ]
            return cls(
                name=doc["name"],
                dim=int(doc["dim"]),
                num_classes=int(doc["num_classes"]),
                classes=list(doc["classes"]),
                videos=videos,
            )
        except KeyError as e:
            raise FormatError(f"{path}: manifest is missing field {e}") from e


def load_video(manifest: DatasetManifest, entry: VideoEntry, base_dir: str | Path) -> FeatureSequence:
    """Load one manifest entry, checking its dimension against the manifest."""
    frames = load_features(Path(base_dir) / entry.path)
    if frames.shape[1] != manifest.dim:
        raise ContractError(
            f"{entry.path}: feature dimension {frames.shape[1]} disagrees with manifest dim {manifest.dim}"
        )
    truth = None if entry.frame_truth is None else np.asarray(entry.frame_truth, dtype=np.float64)
    return FeatureSequence(
        video_id=Path(entry.path).stem,
        frames=frames,
        label=entry.label,
        class_index=entry.class_index,
        frame_truth=truth,
    )


def load_split(manifest: DatasetManifest, split: str, base_dir: str | Path) -> list[FeatureSequence]:
    return [load_video(manifest, v, base_dir) for v in manifest.in_split(split)]


# ---------------------------------------------------------------------------
# Synthetic benchmark
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Knobs of the synthetic benchmark generator.

    Abnormal videos are a normal background with one contiguous segment
    replaced by an abnormal class prototype plus noise; segment length is a
    uniform fraction of F drawn from ``segment_range``.
    """

    num_classes: int = 4
    dim: int = 64
    frames: int = 64
    train_videos: int = 200
    test_videos: int = 60
    segment_range: tuple[float, float] = (0.2, 0.5)
    prototype_separation: float = 1.2
    noise_scale: float = 0.3
    seed: int = 7

    def __post_init__(self):
        if self.num_classes < 2:
            raise ContractError("num_classes must be at least 2")
        lo, hi = self.segment_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ContractError("segment_range must lie inside (0, 1]")
        if self.noise_scale <= 0:
            raise ContractError("noise_scale must be positive")
        if self.frames < 2 or self.dim < 1:
            raise ContractError("frames must be >= 2 and dim >= 1")
        if self.train_videos < 2 or self.test_videos < 2:
            raise ContractError("each split needs at least one normal and one abnormal video")


def draw_prototypes(num_classes: int, dim: int, separation: float, rng: np.random.Generator,
                    max_tries: int = 1000) -> np.ndarray:
    """Draw unit-norm class prototypes with pairwise distance >= separation."""
    for _ in range(max_tries):
        protos = rng.standard_normal((num_classes, dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        dists = np.linalg.norm(protos[:, None, :] - protos[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= separation:
            return protos
    raise ContractError(
        f"could not draw {num_classes} prototypes with separation {separation} in dim {dim}"
    )


def _synthesize_video(rng: np.random.Generator, cfg: SyntheticConfig, prototypes: np.ndarray,
                      class_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Build one video; returns (frames, frame_truth). class_index is 1-based."""
    normal_proto = prototypes[cfg.num_classes - 1]
    frames = normal_proto + cfg.noise_scale * rng.standard_normal((cfg.frames, cfg.dim))
    truth = np.zeros(cfg.frames)
    if class_index != cfg.num_classes:
        lo, hi = cfg.segment_range
        length = int(round(cfg.frames * rng.uniform(lo, hi)))
        length = min(max(length, 1), cfg.frames)
        start = int(rng.integers(0, cfg.frames - length + 1))
        seg = prototypes[class_index - 1] + cfg.noise_scale * rng.standard_normal((length, cfg.dim))
        frames[start:start + length] = seg
        truth[start:start + length] = 1.0
    return frames, truth


def generate_synthetic(cfg: SyntheticConfig, out_dir: str | Path) -> DatasetManifest:
    """Write a synthetic dataset (TPF1 files plus manifest) under ``out_dir``.

    Fully reproducible: the same config produces byte-identical files.
    Frame-level truth is recorded in the manifest for the test split only.
    """
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    prototypes = draw_prototypes(cfg.num_classes, cfg.dim, cfg.prototype_separation, rng)

    classes = [f"event_{i}" for i in range(1, cfg.num_classes)] + ["normal"]
    videos: list[VideoEntry] = []
    for split, count in (("train", cfg.train_videos), ("test", cfg.test_videos)):
        n_normal = count // 2
        n_abnormal = count - n_normal
        plan = [(cfg.num_classes, i) for i in range(n_normal)]
        plan += [(1 + i % (cfg.num_classes - 1), i) for i in range(n_abnormal)]
        for class_index, i in plan:
            kind = "normal" if class_index == cfg.num_classes else f"abn{class_index}"
            video_id = f"{split}_{kind}_{i:03d}"
            frames, truth = _synthesize_video(rng, cfg, prototypes, class_index)
            rel = f"features/{video_id}.tpf"
            save_features(out / rel, frames)
            videos.append(VideoEntry(
                path=rel,
                label=0 if class_index == cfg.num_classes else 1,
                class_index=class_index,
                split=split,
                frame_truth=[int(t) for t in truth] if split == "test" else None,
            ))

    manifest = DatasetManifest(
        name=f"synthetic-k{cfg.num_classes}-d{cfg.dim}-f{cfg.frames}",
        dim=cfg.dim,
        num_classes=cfg.num_classes,
        classes=classes,
        videos=videos,
    )
    manifest.save(out / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# Frozen class-token embeddings
# ---------------------------------------------------------------------------

def _token_vector(name: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def class_token_embeddings(manifest: DatasetManifest, seed: int) -> np.ndarray:
    """Deterministic unit-norm token vector per class name; never trained."""
    if len(set(manifest.classes)) != len(manifest.classes):
        raise ContractError("duplicate class names")
    if manifest.num_classes < 2:
        raise ContractError("need at least 2 classes")
    return np.stack([_token_vector(name, manifest.dim, seed) for name in manifest.classes])
