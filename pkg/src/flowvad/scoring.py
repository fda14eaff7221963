"""Anomaly scores from prediction quality, and frame-level ROC-AUC.

Per video: PSNR of every predicted frame, min-max normalised to a normality
score, complemented to an anomaly score.  Videos are normalised separately
and only then concatenated for the AUC.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import DatasetManifest, frame_labels_from_pixel, load_clip  # noqa: F401  (re-export)
from .errors import EvaluationError, InputError
from .media import PSNR_CAP, patch_psnr_mask, psnr

CSV_COLUMNS = ("video_id", "frame_index", "psnr_db", "ns", "score", "label")

Predictor = Callable[[np.ndarray], np.ndarray]


def normalize_scores(values: Sequence[float]) -> np.ndarray:
    """Min-max normalise one video's PSNR series to [0, 1]; a constant series maps to all ones."""
    p = np.asarray(values, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InputError("need a nonempty 1-d series")
    lo, hi = p.min(), p.max()
    if hi == lo:
        return np.ones_like(p)
    return (p - lo) / (hi - lo)


def anomaly_scores(ns: Sequence[float]) -> np.ndarray:
    ns = np.asarray(ns, dtype=np.float64)
    if np.any(ns < 0) or np.any(ns > 1) or not np.all(np.isfinite(ns)):
        raise InputError("normality scores must lie in [0, 1]")
    return 1.0 - ns


@dataclass
class ScoreSeries:
    video_id: str
    psnr: np.ndarray
    ns: np.ndarray
    score: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.psnr)
        if len(self.ns) != n or len(self.score) != n or (self.labels is not None and len(self.labels) != n):
            raise InputError(f"series lengths differ for video {self.video_id}")

    @classmethod
    def from_psnr(cls, video_id: str, psnr_values: Sequence[float], labels=None) -> "ScoreSeries":
        p = np.asarray(psnr_values, dtype=np.float64)
        ns = normalize_scores(p)
        lab = None if labels is None else np.asarray(labels, dtype=np.int64)
        return cls(video_id, p, ns, anomaly_scores(ns), lab)

    def rows(self):
        for t in range(len(self.psnr)):
            label = "" if self.labels is None else int(self.labels[t])
            yield (self.video_id, t, f"{self.psnr[t]:.6f}", f"{self.ns[t]:.6f}", f"{self.score[t]:.6f}", label)


def clip_psnr(predictor: Predictor, clip: np.ndarray, cap: float = PSNR_CAP) -> np.ndarray:
    """PSNR of every frame against its prediction from the previous frame; frame 0 copies frame 1."""
    clip = np.asarray(clip, dtype=np.float32)
    if clip.ndim != 4 or len(clip) < 2:
        raise InputError(f"need a clip of at least 2 frames, got shape {clip.shape}")
    pred = np.asarray(predictor(clip[:-1]))
    values = np.array([psnr(clip[t], pred[t - 1], cap) for t in range(1, len(clip))])
    return np.concatenate([values[:1], values])


def score_video(predictor: Predictor, clip: np.ndarray, video_id: str = "video",
                labels=None) -> ScoreSeries:
    """Score one clip: I_t is compared against the prediction made from I_{t-1}."""
    return ScoreSeries.from_psnr(video_id, clip_psnr(predictor, clip), labels)


def compute_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """ROC-AUC as the Mann-Whitney statistic: P(pos > neg) + P(tie) / 2.

    A sweep over scores sorted ascending; each tie group credits its
    positives with all lower negatives plus half of the tied ones.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError("scores and labels must be 1-d and equally long")
    pos = int(np.sum(y == 1))
    neg = int(np.sum(y == 0))
    if pos + neg != len(y):
        raise InputError("labels must be 0 or 1")
    if pos == 0 or neg == 0:
        raise EvaluationError("AUC needs at least one positive and one negative frame")
    order = np.argsort(s, kind="mergesort")
    s, y = s[order], y[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    wins = 0.0
    negs_below = 0
    for group in np.split(np.arange(len(s)), boundaries):
        gp = int(np.sum(y[group] == 1))
        gn = len(group) - gp
        wins += gp * (negs_below + 0.5 * gn)
        negs_below += gn
    return wins / (pos * neg)


@dataclass
class EvaluationReport:
    series: list[ScoreSeries]
    auc: float
    per_video_auc: dict[str, float] = field(default_factory=dict)

    @property
    def scores(self) -> np.ndarray:
        return np.concatenate([s.score for s in self.series])

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([s.labels for s in self.series])

    def summary(self) -> str:
        lines = [f"frames: {len(self.scores)}", f"videos: {len(self.series)}", f"global_auc: {self.auc:.6f}"]
        for vid, auc in self.per_video_auc.items():
            lines.append(f"auc[{vid}]: {auc:.6f}")
        return "\n".join(lines) + "\n"


def concatenated_auc(series: Sequence[ScoreSeries]) -> float:
    """Global AUC over per-video normalised scores, concatenated in the given order."""
    scores = np.concatenate([s.score for s in series])
    labels = np.concatenate([s.labels for s in series])
    return compute_auc(scores, labels)


def report_from_series(series: list[ScoreSeries]) -> EvaluationReport:
    per_video = {}
    for s in series:
        if s.labels is not None and 0 < s.labels.sum() < len(s.labels):
            per_video[s.video_id] = compute_auc(s.score, s.labels)
    return EvaluationReport(series, concatenated_auc(series), per_video)


def write_scores_csv(path: str | Path, series: Sequence[ScoreSeries]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for s in series:
            writer.writerows(s.rows())
    return path


def read_scores_csv(path: str | Path) -> list[ScoreSeries]:
    by_video: dict[str, list[dict]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_video.setdefault(row["video_id"], []).append(row)
    out = []
    for vid, rows in by_video.items():
        rows.sort(key=lambda r: int(r["frame_index"]))
        labels = None if rows[0]["label"] == "" else np.array([int(r["label"]) for r in rows])
        out.append(ScoreSeries(vid, np.array([float(r["psnr_db"]) for r in rows]),
                               np.array([float(r["ns"]) for r in rows]),
                               np.array([float(r["score"]) for r in rows]), labels))
    return out


def score_manifest(predictor: Predictor, manifest: DatasetManifest, size: int) -> list[ScoreSeries]:
    """Score every clip of a manifest, in manifest order."""
    return [score_video(predictor, load_clip(c, size), c.video_id, c.labels) for c in manifest.clips]


def evaluate_dataset(predictor: Predictor, manifest: DatasetManifest, size: int,
                     out: str | Path | None = None) -> EvaluationReport:
    """Score a labelled test split and compute the frame-level AUC.

    With ``out`` set, writes ``scores.csv`` and ``summary.txt`` there.
    """
    if any(c.labels is None for c in manifest.clips):
        raise EvaluationError("every test clip needs frame labels")
    report = report_from_series(score_manifest(predictor, manifest, size))
    if out is not None:
        out = Path(out)
        write_scores_csv(out / "scores.csv", report.series)
        (out / "summary.txt").write_text(report.summary())
    return report


def clip_patch_masks(predictor: Predictor, clip: np.ndarray, patch: int = 64) -> np.ndarray:
    """Patch-PSNR masks for frames 1..T-1 of a clip, shape (T-1, H//patch, W//patch)."""
    clip = np.asarray(clip, dtype=np.float32)
    if clip.ndim != 4 or len(clip) < 2:
        raise InputError("need a clip of at least 2 frames")
    pred = np.asarray(predictor(clip[:-1]))
    return np.stack([patch_psnr_mask(clip[t], pred[t - 1], patch) for t in range(1, len(clip))])


def masks_to_images(masks: np.ndarray, patch: int) -> np.ndarray:
    """Grayscale renderings of patch masks, darker where PSNR is lower (scaled per video)."""
    lo, hi = float(masks.min()), float(masks.max())
    scaled = np.ones_like(masks) if hi == lo else (masks - lo) / (hi - lo)
    return np.repeat(np.repeat(scaled, patch, axis=1), patch, axis=2)
