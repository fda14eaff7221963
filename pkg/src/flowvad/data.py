"""Dataset trees on disk and the training-pair streams built from them.

Layout::

    <root>/<split>/<video_id>/<zero-padded index>.png   frames (split: train | test)
    <root>/flow/<video_id>/<frame stem>.flo              flow from frame t to t+1, under t
    <root>/labels/<video_id>.txt                         test labels, one 0/1 per line
    <root>/labels/<video_id>.npy                         ... or as a 1-d array
    <root>/labels/<video_id>/<index>.png                 ... or as per-frame pixel masks

Split directories match case-insensitively and may be named ``training`` /
``testing``; a ``frames`` directory inside a split is descended into.  In
the test split, ``<video_id>_gt`` directories (UCSD style pixel masks) are
label sources, not clips.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DataError, InputError
from .flow import flow_to_rgb, load_flo
from .media import FRAME_SIZE, IMAGE_SUFFIXES, load_frame, load_image, resize_bilinear

SPLITS = ("train", "test")
_SPLIT_ALIASES = {"train": ("train", "training"), "test": ("test", "testing")}
_INDEX = re.compile(r"(\d+)$")


@dataclass
class Clip:
    video_id: str
    frame_paths: list[Path]
    flow_dir: Path | None = None
    labels: np.ndarray | None = None
    label_source: Path | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frame_paths)

    @property
    def frame_dir(self) -> Path:
        return self.frame_paths[0].parent

    def flow_path(self, t: int) -> Path:
        if self.flow_dir is None:
            raise DataError(f"clip {self.video_id} has no flow directory")
        return self.flow_dir / f"{self.frame_paths[t].stem}.flo"


@dataclass
class DatasetManifest:
    name: str
    split: str
    root: Path
    clips: list[Clip] = field(default_factory=list)
    flow_root: Path | None = None

    def __post_init__(self):
        if self.split == "train" and any(c.labels is not None for c in self.clips):
            raise DataError("train split must not carry labels")

    @property
    def frame_count(self) -> int:
        return sum(c.frame_count for c in self.clips)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "split": self.split,
            "root": str(self.root),
            "flow_root": None if self.flow_root is None else str(self.flow_root),
            "clips": [
                {
                    "video_id": c.video_id,
                    "frame_dir": str(c.frame_dir),
                    "frame_count": c.frame_count,
                    "flow_dir": None if c.flow_dir is None else str(c.flow_dir),
                    "label_source": None if c.label_source is None else str(c.label_source),
                    "abnormal_frames": None if c.labels is None else int(c.labels.sum()),
                }
                for c in self.clips
            ],
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def _split_dir(root: Path, split: str) -> Path:
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name.lower() in _SPLIT_ALIASES[split]:
            return child / "frames" if (child / "frames").is_dir() else child
    raise DataError(f"no {split!r} directory under {root}")


def _frame_index(path: Path) -> int:
    m = _INDEX.search(path.stem)
    if m is None:
        raise DataError(f"frame file name has no trailing index: {path}")
    return int(m.group(1))


def list_frames(directory: Path) -> list[Path]:
    """Frame files of one clip in index order; gaps in the numbering are an error."""
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no frames in {directory}")
    files.sort(key=_frame_index)
    indices = [_frame_index(p) for p in files]
    width = len(files[0].stem)
    for expected, (idx, path) in enumerate(zip(indices, files), start=indices[0]):
        if idx != expected:
            missing = directory / f"{str(expected).zfill(width)}{files[0].suffix}"
            if idx < expected:
                raise DataError(f"duplicate frame index {idx} in {directory}: {path.name}")
            raise DataError(f"missing frame {missing}")
    return files


def frame_labels_from_pixel(masks, frame_count: int | None = None) -> np.ndarray:
    """A frame is abnormal (1) when any pixel of its mask is nonzero."""
    masks = list(masks)
    if frame_count is not None and len(masks) != frame_count:
        raise InputError(f"{len(masks)} masks for {frame_count} frames")
    return np.array([1 if np.any(np.asarray(m) != 0) else 0 for m in masks], dtype=np.int64)


def read_labels(source: Path, frame_count: int) -> np.ndarray:
    if source.is_dir():
        mask_files = list_frames(source)
        labels = frame_labels_from_pixel((load_image(p) for p in mask_files), None)
    elif source.suffix == ".npy":
        labels = np.load(source).reshape(-1)
    else:
        tokens = source.read_text().split()
        try:
            labels = np.array([int(t) for t in tokens])
        except ValueError as exc:
            raise DataError(f"label file {source} holds non-integer tokens") from exc
    labels = np.asarray(labels).astype(np.int64)
    if labels.shape != (frame_count,):
        raise DataError(f"{source}: {labels.size} labels for {frame_count} frames")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError(f"{source}: labels must be 0 or 1")
    return labels


def _find_labels(label_root: Path, split_dir: Path, video_id: str) -> Path | None:
    candidates = (label_root / f"{video_id}.txt", label_root / f"{video_id}.npy", label_root / video_id,
                  split_dir / f"{video_id}_gt")
    for candidate in candidates:
        if candidate.exists():
            return candidate
    return None


def build_manifest(root: str | Path, split: str = "train", layout: str = "frames_only",
                   flow_root: str | Path | None = None, label_root: str | Path | None = None,
                   name: str | None = None) -> DatasetManifest:
    """Index one split of a dataset tree; clips are sorted by id and checked for gaps.

    ``layout="frames_plus_flow"`` additionally requires every train clip to
    have a flow directory.  Test clips must resolve labels.
    """
    root = Path(root)
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}")
    if layout not in ("frames_only", "frames_plus_flow"):
        raise DataError(f"unknown layout {layout!r}")
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    split_dir = _split_dir(root, split)
    flow_root = Path(flow_root) if flow_root is not None else root / "flow"
    label_root = Path(label_root) if label_root is not None else root / "labels"

    clips = []
    for clip_dir in sorted(p for p in split_dir.iterdir() if p.is_dir() and not p.name.endswith("_gt")):
        frames = list_frames(clip_dir)
        vid = clip_dir.name
        flow_dir = flow_root / vid if (flow_root / vid).is_dir() else None
        if layout == "frames_plus_flow" and split == "train" and flow_dir is None:
            raise DataError(f"missing flow directory {flow_root / vid}; run `flowvad precompute-flow`")
        labels = source = None
        if split == "test":
            source = _find_labels(label_root, split_dir, vid)
            if source is None:
                raise DataError(f"no labels for test clip {vid} under {label_root}")
            labels = read_labels(source, len(frames))
        clips.append(Clip(vid, frames, flow_dir, labels, source))
    if not clips:
        raise DataError(f"no clips under {split_dir}")
    return DatasetManifest(name or root.name, split, root, clips, flow_root)


# --------------------------------------------------------------------------
# Training pairs
# --------------------------------------------------------------------------


class PairSet:
    """Indexable (input, target) pairs drawn from consecutive frames within clips.

    ``mode="frame_pairs"`` yields (I_t, I_t+1); ``mode="flow_pairs"`` yields
    (I_t, flow RGB of O_t,t+1).  Pairs never cross clip boundaries.
    """

    def __init__(self, inputs, targets, pair_ids=None, mode="frame_pairs"):
        self._inputs = inputs
        self._targets = targets
        self.mode = mode
        self.pair_ids = pair_ids if pair_ids is not None else [("", i) for i in range(len(inputs))]

    def __len__(self) -> int:
        return len(self.pair_ids)

    @classmethod
    def from_arrays(cls, inputs: np.ndarray, targets: np.ndarray, mode: str = "frame_pairs") -> "PairSet":
        inputs = np.asarray(inputs, dtype=np.float32)
        targets = np.asarray(targets, dtype=np.float32)
        if inputs.shape != targets.shape:
            raise DataError(f"inputs {inputs.shape} and targets {targets.shape} differ")
        return cls(inputs, targets, None, mode)

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        if isinstance(self._inputs, np.ndarray):
            return self._inputs[idx], self._targets[idx]
        return (np.stack([self._inputs(i) for i in idx]), np.stack([self._targets(i) for i in idx]))

    def inputs(self) -> np.ndarray:
        return self.batch(np.arange(len(self)))[0]

    def materialize(self) -> "PairSet":
        x, y = self.batch(np.arange(len(self)))
        return PairSet(x, y, list(self.pair_ids), self.mode)


def flow_rgb_for(clip: Clip, t: int, size: int) -> np.ndarray:
    path = clip.flow_path(t)
    if not path.exists():
        raise DataError(
            f"missing flow file {path} (pair {clip.video_id}:{t}->{t + 1}); "
            "run `flowvad precompute-flow` or import .flo files"
        )
    rgb = flow_to_rgb(load_flo(path)).pixels
    return np.clip(resize_bilinear(rgb, size), 0.0, 1.0)


def load_pairs(manifest: DatasetManifest, mode: str = "frame_pairs", size: int = FRAME_SIZE,
               in_memory: bool = True, cache_frames: int = 4096) -> PairSet:
    """Build the pair stream of a manifest; clip of T frames contributes T-1 pairs."""
    if mode not in ("frame_pairs", "flow_pairs"):
        raise DataError(f"unknown pair mode {mode!r}")
    pair_ids = [(clip_i, t) for clip_i, clip in enumerate(manifest.clips) for t in range(clip.frame_count - 1)]
    if mode == "flow_pairs":
        for clip_i, t in pair_ids:
            clip = manifest.clips[clip_i]
            if clip.flow_dir is None:
                raise DataError(
                    f"no flow tree for clip {clip.video_id} (expected {manifest.flow_root}/{clip.video_id}); "
                    "run `flowvad precompute-flow` first"
                )
            if not clip.flow_path(t).exists():
                flow_rgb_for(clip, t, size)

    @lru_cache(maxsize=cache_frames)
    def frame(clip_i: int, t: int) -> np.ndarray:
        return load_frame(manifest.clips[clip_i].frame_paths[t], size)

    def source(i: int) -> np.ndarray:
        return frame(*pair_ids[i])

    def target(i: int) -> np.ndarray:
        clip_i, t = pair_ids[i]
        if mode == "frame_pairs":
            return frame(clip_i, t + 1)
        return flow_rgb_for(manifest.clips[clip_i], t, size)

    ids = [(manifest.clips[c].video_id, t) for c, t in pair_ids]
    pairs = PairSet(source, target, ids, mode)
    return pairs.materialize() if in_memory else pairs


def load_clip(clip: Clip, size: int = FRAME_SIZE) -> np.ndarray:
    return np.stack([load_frame(p, size) for p in clip.frame_paths])
