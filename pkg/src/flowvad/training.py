"""Two-stage optimisation: fit the motion net on ground-truth flow, then freeze it
and fit the frame net on flow-guided next-frame prediction."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch

from .data import DatasetManifest, PairSet, load_pairs
from .errors import CheckpointError, ConfigError
from .losses import NORMS, frame_loss_terms, loss_opt
from .nets import (FrameNetSpec, MotionNet, MotionNetSpec, build_frame_net,
                   build_motion_net, predict_flow, save_checkpoint)

log = logging.getLogger(__name__)

DEFAULT_LR = 2e-4
# motion-stage epochs per benchmark; the frame stage uses 10 everywhere
MOTION_EPOCHS = {"shanghaitech": 10, "avenue": 20, "ped2": 20}
FRAME_EPOCHS = 10

ABLATIONS = {
    "Exp1": dict(use_margin_loss=False, use_flow_guidance=False),
    "Exp2": dict(use_margin_loss=True, use_flow_guidance=False),
    "Exp3": dict(use_margin_loss=False, use_flow_guidance=True),
    "Exp4": dict(use_margin_loss=True, use_flow_guidance=True),
}


@dataclass
class TrainConfig:
    stage: str = "motion"
    learning_rate: float = DEFAULT_LR
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 16
    epochs: int = 10
    alpha: float = 0.2
    lambda_: float = 0.004
    seed: int = 0
    use_flow_guidance: bool = True
    use_margin_loss: bool = True
    norm: str = "rms"

    def __post_init__(self):
        if self.stage not in ("motion", "frame"):
            raise ConfigError(f"stage must be 'motion' or 'frame', got {self.stage!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be an integer >= 1, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be an integer >= 1, got {self.batch_size}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.alpha < 0 or self.lambda_ < 0:
            raise ConfigError("alpha and lambda must be nonnegative")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        """Build from a mapping; the key ``lambda`` is accepted for ``lambda_`` and unknown keys are ignored."""
        data = dict(data)
        if "lambda" in data:
            data["lambda_"] = data.pop("lambda")
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d


def dataset_learning_rate(dataset: str, stage: str) -> float:
    """Published learning rate: 2e-4 everywhere except the Ped2 frame stage (2e-5)."""
    if stage == "frame" and dataset.lower() in ("ped2", "ucsd_ped2", "ucsdped2"):
        return 2e-5
    return DEFAULT_LR


@dataclass
class TrainResult:
    model: torch.nn.Module
    epoch_losses: list[float]
    best_epoch: int
    checkpoints: list[Path] = field(default_factory=list)
    flow_evaluations: int = 0
    step_log: list[dict] = field(default_factory=list)


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(n: int, batch_size: int, seed: int, epoch: int):
    """Seeded shuffle per epoch; the last partial batch is kept."""
    order = epoch_order(n, seed, epoch)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _nchw(x: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x)).permute(0, 3, 1, 2).to(dtype)


class MetricsLog:
    """Line-oriented JSON metrics: one record per optimisation step."""

    def __init__(self, path: Path | None):
        self.path = path
        self.records: list[dict] = []
        self._fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _pairs(dataset, mode: str, size: int) -> PairSet:
    if isinstance(dataset, PairSet):
        return dataset
    if isinstance(dataset, DatasetManifest):
        return load_pairs(dataset, mode, size)
    raise ConfigError(f"unsupported dataset type {type(dataset).__name__}")


def _optimizer(model, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                            betas=(config.adam_beta1, config.adam_beta2))


def _run(model, config: TrainConfig, pairs: PairSet, step_loss: Callable, checkpoint_dir,
         metrics_path, select_best: bool, meta: dict) -> TrainResult:
    opt = _optimizer(model, config)
    metrics = MetricsLog(Path(metrics_path) if metrics_path else None)
    dtype = next(model.parameters()).dtype
    epoch_losses: list[float] = []
    checkpoints: list[Path] = []
    best_state, best_loss, best_epoch = None, np.inf, config.epochs
    start = time.perf_counter()
    step = 0
    try:
        for epoch in range(1, config.epochs + 1):
            model.train()
            total, count = 0.0, 0
            for idx in batches(len(pairs), config.batch_size, config.seed, epoch):
                x, y = pairs.batch(idx)
                opt.zero_grad()
                terms = step_loss(model, _nchw(x, dtype), _nchw(y, dtype), idx)
                terms["loss"].backward()
                opt.step()
                step += 1
                value = float(terms["loss"].detach())
                total += value * len(idx)
                count += len(idx)
                record = {"stage": config.stage, "epoch": epoch, "step": step}
                record.update({k: float(v.detach()) for k, v in terms.items()})
                record["wall_time"] = round(time.perf_counter() - start, 4)
                metrics.write(record)
            mean = total / count
            epoch_losses.append(mean)
            log.info("%s epoch %d/%d loss %.6f", config.stage, epoch, config.epochs, mean)
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / f"{config.stage}-epoch{epoch}.pt"
                save_checkpoint(path, model, {**meta, "epoch": epoch, "seed": config.seed,
                                              "train_loss": mean, "config": config.to_dict()})
                checkpoints.append(path)
            if select_best and mean < best_loss:
                best_loss, best_epoch = mean, epoch
                best_state = copy.deepcopy(model.state_dict())
    finally:
        metrics.close()
    if select_best and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, epoch_losses, best_epoch, checkpoints, step_log=metrics.records)


def train_motion_stage(config: TrainConfig, dataset, spec: MotionNetSpec | None = None,
                       checkpoint_dir: str | Path | None = None,
                       metrics_path: str | Path | None = None) -> TrainResult:
    """Fit the motion net to ground-truth flow RGB with the L1 loss.

    The returned model holds the epoch with the lowest mean training loss.
    """
    if config.stage != "motion":
        raise ConfigError("train_motion_stage needs a config with stage='motion'")
    spec = spec or MotionNetSpec()
    pairs = _pairs(dataset, "flow_pairs", spec.image_size)
    _seed_everything(config.seed)
    model = build_motion_net(spec, config.seed)

    def step_loss(m, x, y, idx):
        return {"loss": loss_opt(m(x), y)}

    return _run(model, config, pairs, step_loss, checkpoint_dir, metrics_path, True, {"stage": "motion"})


def guidance_for(motion: MotionNet | None, frames: np.ndarray, use_flow_guidance: bool,
                 batch_size: int = 32) -> tuple[np.ndarray, int]:
    """Flow RGB guidance for a stack of frames and the number of motion-net evaluations."""
    if not use_flow_guidance:
        return np.zeros_like(frames, dtype=np.float32), 0
    out = [predict_flow(motion, frames[i:i + batch_size]) for i in range(0, len(frames), batch_size)]
    return np.concatenate(out).astype(np.float32), len(frames)


def train_frame_stage(config: TrainConfig, motion: MotionNet | None, dataset,
                      spec: FrameNetSpec | None = None, checkpoint_dir: str | Path | None = None,
                      metrics_path: str | Path | None = None) -> TrainResult:
    """Fit the frame net with the motion net frozen.

    With flow guidance on, the motion net's prediction for I_t is the flow
    input; otherwise a constant all-zero map is fed so that every ablation
    cell has the same architecture.  The frozen motion net is evaluated once
    per training frame since its output cannot change.
    """
    if config.stage != "frame":
        raise ConfigError("train_frame_stage needs a config with stage='frame'")
    spec = spec or FrameNetSpec()
    if config.use_flow_guidance:
        if not isinstance(motion, MotionNet):
            raise CheckpointError("flow guidance needs trained motion weights")
        if motion.spec.image_size != spec.image_size:
            raise CheckpointError(
                f"motion weights are for {motion.spec.image_size}px frames, frame net expects {spec.image_size}px"
            )
    pairs = _pairs(dataset, "frame_pairs", spec.image_size)
    current = pairs.inputs()
    guidance, evaluations = guidance_for(motion, current, config.use_flow_guidance)

    _seed_everything(config.seed)
    model = build_frame_net(spec, config.seed)

    def step_loss(m, x, y, idx):
        g = _nchw(guidance[idx], x.dtype)
        pred = m(x, g)
        return frame_loss_terms(y, pred, x, config.alpha, config.lambda_, config.norm, config.use_margin_loss)

    result = _run(model, config, pairs, step_loss, checkpoint_dir, metrics_path, False,
                  {"stage": "frame", "use_flow_guidance": config.use_flow_guidance,
                   "use_margin_loss": config.use_margin_loss})
    result.flow_evaluations = evaluations
    return result
