"""U-net predictors for the two stages: frame -> flow RGB and (frame, flow RGB) -> next frame.

Both networks share one skeleton: a multi-scale feature-extraction block
(four parallel convolutions with different kernel sizes, concatenated) in
place of the first two convolutions, stride-2 encoder levels, a symmetric
decoder with skip concatenation and LeakyReLU activations.  The output is
clamped to [0, 1] with a straight-through gradient: a sigmoid head saturates
when most targets sit exactly at 1 (zero flow is white), after which every
gradient vanishes and the motion net predicts a blank image.
"""

from __future__ import annotations

import json
import math
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, InputError, SpecError

CHECKPOINT_FORMAT = "flowvad-checkpoint"
CHECKPOINT_VERSION = 1
PIPELINE_FILE = "pipeline.json"


@dataclass(frozen=True)
class MotionNetSpec:
    levels: int = 5
    base_channels: int = 64
    feature_extraction_kernels: tuple[int, ...] = (1, 3, 5, 7)
    leaky_slope: float = 0.2
    skip_connections: bool = True
    max_channels: int = 512
    image_size: int = 256

    kind = "motion"
    input_channels = 3

    def validate(self) -> None:
        _validate_common(self)


@dataclass(frozen=True)
class FrameNetSpec:
    levels: int = 4
    base_channels: int = 64
    feature_extraction_kernels: tuple[int, ...] = (1, 3, 5, 7)
    leaky_slope: float = 0.2
    input_channels: int = 6
    skip_connections: bool = True
    max_channels: int = 512
    image_size: int = 256
    input_order: tuple[str, ...] = field(default=("frame", "flow"))

    kind = "frame"

    def validate(self) -> None:
        _validate_common(self)
        if self.input_channels != 6:
            raise SpecError("frame net takes frame (3) + flow RGB (3) = 6 input channels")
        if tuple(self.input_order) != ("frame", "flow"):
            raise SpecError(f"unsupported input order {self.input_order}")


def _validate_common(spec) -> None:
    kernels = tuple(spec.feature_extraction_kernels)
    if len(kernels) != 4:
        raise SpecError(f"feature extraction block needs exactly 4 kernels, got {len(kernels)}")
    if len(set(kernels)) != 4:
        raise SpecError(f"feature extraction kernels must be distinct, got {kernels}")
    if any(k < 1 or k % 2 == 0 for k in kernels):
        raise SpecError(f"feature extraction kernels must be odd and positive, got {kernels}")
    if spec.levels < 1:
        raise SpecError("levels must be >= 1")
    if spec.base_channels < 4 or spec.base_channels % 4:
        raise SpecError("base_channels must be a positive multiple of 4")
    if spec.max_channels < spec.base_channels:
        raise SpecError("max_channels must be >= base_channels")
    if not spec.skip_connections:
        raise SpecError("skip connections are part of the architecture and cannot be disabled")
    if spec.leaky_slope < 0:
        raise SpecError("leaky_slope must be nonnegative")
    stride = 2 ** (spec.levels - 1)
    if spec.image_size < stride or spec.image_size % stride:
        raise SpecError(f"image_size {spec.image_size} not divisible by 2^(levels-1) = {stride}")


def level_channels(spec) -> list[int]:
    return [min(spec.base_channels * 2**i, spec.max_channels) for i in range(spec.levels)]


class FeatureExtraction(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernels, slope: float):
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Conv2d(in_ch, out_ch // 4, k, padding=k // 2) for k in kernels
        )
        self.slope = slope

    def forward(self, x):
        return F.leaky_relu(torch.cat([b(x) for b in self.branches], dim=1), self.slope)


def _conv(in_ch: int, out_ch: int, slope: float, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1), nn.LeakyReLU(slope))


class _UnitClamp(torch.autograd.Function):
    """Clamp to [0, 1] forward; identity backward."""

    @staticmethod
    def forward(ctx, x):
        return x.clamp(0.0, 1.0)

    @staticmethod
    def backward(ctx, grad):
        return grad


def unit_clamp(x: torch.Tensor) -> torch.Tensor:
    return _UnitClamp.apply(x)


class UNet(nn.Module):
    def __init__(self, spec):
        super().__init__()
        spec.validate()
        self.spec = spec
        ch = level_channels(spec)
        slope = spec.leaky_slope
        self.features = FeatureExtraction(spec.input_channels, ch[0], spec.feature_extraction_kernels, slope)
        self.down = nn.ModuleList(
            nn.Sequential(_conv(ch[i - 1], ch[i], slope, stride=2), _conv(ch[i], ch[i], slope))
            for i in range(1, spec.levels)
        )
        self.up = nn.ModuleList(
            nn.Sequential(nn.ConvTranspose2d(ch[i], ch[i - 1], 2, stride=2), nn.LeakyReLU(slope))
            for i in range(spec.levels - 1, 0, -1)
        )
        self.decode = nn.ModuleList(
            nn.Sequential(_conv(2 * ch[i - 1], ch[i - 1], slope), _conv(ch[i - 1], ch[i - 1], slope))
            for i in range(spec.levels - 1, 0, -1)
        )
        self.head = nn.Conv2d(ch[0], 3, 1)

    def forward(self, x):
        x = self.features(x)
        skips = []
        for down in self.down:
            skips.append(x)
            x = down(x)
        for up, decode in zip(self.up, self.decode):
            x = decode(torch.cat([up(x), skips.pop()], dim=1))
        return unit_clamp(self.head(x))


class MotionNet(UNet):
    """Maps a frame (N, 3, H, W) to its predicted flow in color-wheel RGB."""


class FrameNet(UNet):
    """Maps frame (+) flow RGB, (N, 6, H, W), to the predicted next frame."""

    def forward(self, frame, flow_rgb=None):
        if flow_rgb is not None:
            frame = torch.cat([frame, flow_rgb], dim=1)
        return super().forward(frame)


def _init_weights(model: nn.Module, seed: int, slope: float) -> None:
    gen = torch.Generator().manual_seed(seed)
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    with torch.no_grad():
        for name, module in model.named_modules():
            if isinstance(module, nn.ConvTranspose2d):
                fan_in = module.in_channels
            elif isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            else:
                continue
            g = 1.0 if module is model.head else gain
            bound = g * math.sqrt(3.0 / fan_in)
            module.weight.copy_(torch.rand(module.weight.shape, generator=gen) * 2 * bound - bound)
            module.bias.zero_()
        model.head.bias.fill_(0.5)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_motion_net(spec: MotionNetSpec | None = None, seed: int = 0) -> MotionNet:
    """Seeded motion network; identical seeds give identical parameters."""
    spec = spec or MotionNetSpec()
    model = MotionNet(spec)
    _init_weights(model, seed, spec.leaky_slope)
    return model


def build_frame_net(spec: FrameNetSpec | None = None, seed: int = 0) -> FrameNet:
    spec = spec or FrameNetSpec()
    model = FrameNet(spec)
    _init_weights(model, seed, spec.leaky_slope)
    return model


# --------------------------------------------------------------------------
# Inference helpers on HWC numpy frames
# --------------------------------------------------------------------------


def _to_batch(frames: np.ndarray, size: int, name: str) -> tuple[torch.Tensor, bool]:
    arr = np.asarray(frames, dtype=np.float32)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != (size, size, 3):
        raise InputError(f"{name} must be ({size}, {size}, 3) frames, got shape {np.shape(frames)}")
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2), single


def _from_batch(t: torch.Tensor, single: bool) -> np.ndarray:
    out = t.permute(0, 2, 3, 1).numpy()
    return out[0] if single else out


def _param_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


@torch.no_grad()
def predict_flow(model: MotionNet, frames: np.ndarray) -> np.ndarray:
    """Flow RGB in [0, 1] for one (H, W, 3) frame or an (N, H, W, 3) stack."""
    x, single = _to_batch(frames, model.spec.image_size, "frames")
    model.eval()
    return _from_batch(model(x.to(_param_dtype(model))).float(), single)


@torch.no_grad()
def predict_frame(model: FrameNet, frames: np.ndarray, flow_rgb: np.ndarray) -> np.ndarray:
    """Next-frame prediction from current frame(s) and flow RGB guidance."""
    size = model.spec.image_size
    x, single = _to_batch(frames, size, "frames")
    g, single_g = _to_batch(flow_rgb, size, "flow_rgb")
    if single != single_g or x.shape != g.shape:
        raise InputError(f"frame and flow shapes differ: {np.shape(frames)} vs {np.shape(flow_rgb)}")
    model.eval()
    dtype = _param_dtype(model)
    return _from_batch(model(x.to(dtype), g.to(dtype)).float(), single)


class FlowGuidedPredictor:
    """The full next-frame predictor: motion net output guides the frame net.

    With ``use_flow_guidance`` off the frame net receives an all-zero flow
    map instead and the motion net is never run; ``flow_evaluations``
    counts motion-net forward passes.
    """

    def __init__(self, motion: MotionNet | None, frame: FrameNet, use_flow_guidance: bool = True,
                 batch_size: int = 16):
        if use_flow_guidance and motion is None:
            raise CheckpointError("flow guidance requires a motion network")
        if motion is not None and motion.spec.image_size != frame.spec.image_size:
            raise CheckpointError(
                f"motion net works at {motion.spec.image_size}px, frame net at {frame.spec.image_size}px"
            )
        self.motion = motion
        self.frame = frame
        self.use_flow_guidance = use_flow_guidance
        self.batch_size = batch_size
        self.flow_evaluations = 0

    @property
    def image_size(self) -> int:
        return self.frame.spec.image_size

    def guidance(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        if not self.use_flow_guidance:
            return np.zeros_like(frames)
        self.flow_evaluations += len(frames)
        return predict_flow(self.motion, frames)

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        out = []
        for i in range(0, len(frames), self.batch_size):
            chunk = frames[i:i + self.batch_size]
            out.append(predict_frame(self.frame, chunk, self.guidance(chunk)))
        return np.concatenate(out) if out else np.zeros_like(frames)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def _spec_from_dict(kind: str, data: dict):
    cls = {"motion": MotionNetSpec, "frame": FrameNetSpec}.get(kind)
    if cls is None:
        raise CheckpointError(f"unknown network kind {kind!r}")
    data = dict(data)
    for key in ("feature_extraction_kernels", "input_order"):
        if key in data:
            data[key] = tuple(data[key])
    try:
        return cls(**data)
    except TypeError as exc:
        raise CheckpointError(f"spec fields do not match a {kind} network: {exc}") from exc


def save_checkpoint(path: str | Path, model: UNet, meta: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = asdict(model.spec)
    spec["feature_extraction_kernels"] = list(spec["feature_extraction_kernels"])
    if "input_order" in spec:
        spec["input_order"] = list(spec["input_order"])
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.spec.kind,
        "spec": spec,
        "params": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
        "meta": dict(meta or {}),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path, kind: str | None = None) -> tuple[UNet, dict]:
    """Rebuild a network from a checkpoint; ``kind`` restricts it to 'motion' or 'frame'."""
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a flowvad checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    found = payload["kind"]
    if kind is not None and found != kind:
        raise CheckpointError(f"{path} holds a {found} network, expected {kind}")
    spec = _spec_from_dict(found, payload["spec"])
    try:
        model = (MotionNet if found == "motion" else FrameNet)(spec)
        model.load_state_dict(payload["params"])
    except (SpecError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: parameters do not fit the stored spec: {exc}") from exc
    return model, payload.get("meta", {})


def save_pipeline(directory: str | Path, motion_ckpt: str | Path | None, frame_ckpt: str | Path,
                  use_flow_guidance: bool = True) -> Path:
    """Write the manifest linking a motion and a frame checkpoint into one predictor."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "flowvad-pipeline",
        "version": CHECKPOINT_VERSION,
        "motion": None if motion_ckpt is None else str(Path(motion_ckpt).resolve()),
        "frame": str(Path(frame_ckpt).resolve()),
        "use_flow_guidance": use_flow_guidance,
    }
    out = directory / PIPELINE_FILE
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def load_pipeline(path: str | Path) -> FlowGuidedPredictor:
    path = Path(path)
    if path.is_dir():
        path = path / PIPELINE_FILE
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read pipeline manifest {path}: {exc}") from exc
    if manifest.get("format") != "flowvad-pipeline":
        raise CheckpointError(f"{path} is not a pipeline manifest")
    frame, _ = load_checkpoint(manifest["frame"], kind="frame")
    motion = None
    if manifest.get("motion"):
        motion, _ = load_checkpoint(manifest["motion"], kind="motion")
    return FlowGuidedPredictor(motion, frame, bool(manifest.get("use_flow_guidance", True)))
