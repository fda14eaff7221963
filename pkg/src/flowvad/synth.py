"""Seeded moving-sprite videos with analytic flow and injected anomaly windows.

Each normal shape always moves with its own velocity, so motion is
predictable from appearance.  Test clips carry one anomaly window during
which a sprite reverses, speeds up, or a never-seen shape appears.  Sprites
and background are textured so that block matching is well posed, and
sprites never overlap or leave the canvas.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .flow import save_flo
from .media import resize_bilinear, save_frame

SHAPES = ("square", "disk", "triangle")
ANOMALY_MODES = ("novel_shape", "reversed_velocity", "speed")

SHAPE_COLORS = {
    "square": (0.85, 0.25, 0.2),
    "disk": (0.2, 0.35, 0.9),
    "triangle": (0.25, 0.8, 0.3),
}


@dataclass(frozen=True)
class SyntheticSceneConfig:
    canvas: int = 256
    sprite_size: int = 40
    normal_shapes: tuple[str, ...] = ("square", "disk")
    normal_velocities: tuple[tuple[int, int], ...] = ((4, 0), (0, 4))
    novel_shape: str = "triangle"
    anomaly_modes: tuple[str, ...] = ANOMALY_MODES
    speed_factor: int = 2
    clip_length: int = 40
    window_length: tuple[int, int] = (8, 12)
    train_clips: int = 8
    test_clips: int = 6
    noise: float = 0.0
    texture_cells: int = 8
    sprite_texture: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.canvas < 8:
            raise ConfigError("canvas must be at least 8 pixels")
        if not 2 <= self.sprite_size <= self.canvas // 2:
            raise ConfigError("sprite_size must lie in [2, canvas/2]")
        if len(self.normal_shapes) != len(self.normal_velocities) or not self.normal_shapes:
            raise ConfigError("need one velocity per normal shape")
        for s in (*self.normal_shapes, self.novel_shape):
            if s not in SHAPES:
                raise ConfigError(f"unknown shape {s!r}; choose from {SHAPES}")
        if self.novel_shape in self.normal_shapes:
            raise ConfigError("the novel shape must not be a normal shape")
        for m in self.anomaly_modes:
            if m not in ANOMALY_MODES:
                raise ConfigError(f"unknown anomaly mode {m!r}; choose from {ANOMALY_MODES}")
        if self.test_clips and not self.anomaly_modes:
            raise ConfigError("test clips need at least one anomaly mode")
        if self.clip_length < 4 or self.train_clips < 0 or self.test_clips < 0:
            raise ConfigError("clip_length must be >= 4 and clip counts nonnegative")
        lo, hi = self.window_length
        if not 1 <= lo <= hi <= self.clip_length - 3:
            raise ConfigError("window_length must satisfy 1 <= min <= max <= clip_length - 3")
        if self.speed_factor < 1:
            raise ConfigError("speed_factor must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be nonnegative")
        room = self.canvas - self.sprite_size
        extra = (self.speed_factor - 1) * hi if "speed" in self.anomaly_modes else 0
        for v in self.normal_velocities:
            for comp in v:
                travel = abs(comp) * (self.clip_length - 1 + extra)
                if travel > room:
                    raise ConfigError(
                        f"velocity {tuple(v)} travels {travel}px per clip but the canvas leaves "
                        f"{room}px for a {self.sprite_size}px sprite"
                    )


@dataclass
class Sprite:
    shape: str
    velocities: np.ndarray           # (T, 2); row t is the displacement arriving at frame t
    present: np.ndarray              # (T,) bool
    positions: np.ndarray = field(default=None)  # (T, 2) top-left (x, y)


def shape_mask(shape: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "disk":
        c = (size - 1) / 2.0
        return (xx - c) ** 2 + (yy - c) ** 2 <= (size / 2.0) ** 2
    if shape == "triangle":
        half = (yy + 1) / size * (size / 2.0)
        return np.abs(xx - (size - 1) / 2.0) <= half
    raise ConfigError(f"unknown shape {shape!r}")


def value_noise(rng: np.random.Generator, size: int, cells: int, channels: int = 3) -> np.ndarray:
    grid = rng.random((cells + 1, cells + 1, channels)).astype(np.float32)
    return resize_bilinear(grid, size)


def _sprite_textures(cfg: SyntheticSceneConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 7919])
    out = {}
    for shape in SHAPES:
        base = np.array(SHAPE_COLORS[shape], dtype=np.float32)
        grain = rng.uniform(-cfg.sprite_texture, cfg.sprite_texture, (cfg.sprite_size, cfg.sprite_size, 1))
        out[shape] = np.clip(base + grain.astype(np.float32), 0.0, 1.0)
    return out


def _background(cfg: SyntheticSceneConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 104729])
    tex = value_noise(rng, cfg.canvas, cfg.texture_cells)
    return (0.3 + 0.4 * tex).astype(np.float32)


def _place(sprites: list[Sprite], cfg: SyntheticSceneConfig, rng: np.random.Generator) -> None:
    room = cfg.canvas - cfg.sprite_size
    paths = []
    for sp in sprites:
        path = np.cumsum(sp.velocities, axis=0)
        present = path[sp.present]
        lo = -present.min(axis=0)
        hi = room - present.max(axis=0)
        if np.any(lo > hi):
            raise ConfigError(f"{sp.shape} trajectory does not fit on a {cfg.canvas}px canvas")
        paths.append((path, lo, hi))
    for _ in range(2000):
        for sp, (path, lo, hi) in zip(sprites, paths):
            start = np.array([rng.integers(lo[0], hi[0] + 1), rng.integers(lo[1], hi[1] + 1)])
            sp.positions = start + path
        if not _overlaps(sprites, cfg.sprite_size):
            return
    raise ConfigError("could not place sprites without overlap; enlarge the canvas or shrink sprites")


def _overlaps(sprites: list[Sprite], size: int) -> bool:
    for i in range(len(sprites)):
        for j in range(i + 1, len(sprites)):
            both = sprites[i].present & sprites[j].present
            d = np.abs(sprites[i].positions[both] - sprites[j].positions[both])
            if np.any((d[:, 0] < size + 1) & (d[:, 1] < size + 1)):
                return True
    return False


def _render(sprites: list[Sprite], t: int, background: np.ndarray, textures, masks, cfg) -> tuple[np.ndarray, np.ndarray]:
    frame = background.copy()
    flow = np.zeros(background.shape[:2] + (2,), dtype=np.float32)
    s = cfg.sprite_size
    for sp in sprites:
        if not sp.present[t]:
            continue
        x, y = sp.positions[t]
        region = (slice(y, y + s), slice(x, x + s))
        mask = masks[sp.shape]
        frame[region][mask] = textures[sp.shape][mask]
        if t + 1 < len(sp.present):
            flow[region][mask] = sp.velocities[t + 1]
    return frame, flow


def _clip_sprites(cfg: SyntheticSceneConfig, rng: np.random.Generator, mode: str | None):
    T = cfg.clip_length
    sprites = []
    for shape, v in zip(cfg.normal_shapes, cfg.normal_velocities):
        vel = np.tile(np.asarray(v, dtype=np.int64), (T, 1))
        vel[0] = 0
        sprites.append(Sprite(shape, vel, np.ones(T, dtype=bool)))
    window = None
    if mode is not None:
        length = int(rng.integers(cfg.window_length[0], cfg.window_length[1] + 1))
        start = int(rng.integers(2, T - length + 1))
        window = (start, start + length - 1)
        span = slice(start, start + length)
        if mode == "novel_shape":
            v = cfg.normal_velocities[int(rng.integers(len(cfg.normal_velocities)))]
            vel = np.tile(np.asarray(v, dtype=np.int64), (T, 1))
            vel[: start + 1] = 0
            # appear on the first window frame and vanish on the last, so both unpredictable jumps are labelled
            present = np.zeros(T, dtype=bool)
            present[start:start + max(length - 1, 1)] = True
            sprites.append(Sprite(cfg.novel_shape, vel, present))
        else:
            target = sprites[int(rng.integers(len(sprites)))]
            factor = -1 if mode == "reversed_velocity" else cfg.speed_factor
            target.velocities[span] *= factor
    _place(sprites, cfg, rng)
    return sprites, window


def gen_synthetic(cfg: SyntheticSceneConfig, out: str | Path) -> dict:
    """Write a full synthetic dataset under ``out``; returns its metadata.

    Output: ``train/`` and ``test/`` frame trees, ``flow/`` analytic ``.flo``
    ground truth for every clip, ``labels/<test clip>.txt`` and
    ``synthetic.json`` with the config and every anomaly window.
    """
    cfg.validate()
    out = Path(out)
    background = _background(cfg)
    textures = _sprite_textures(cfg)
    masks = {s: shape_mask(s, cfg.sprite_size) for s in SHAPES}
    meta = {"config": asdict(cfg), "clips": []}

    plan = [("train", i, None) for i in range(cfg.train_clips)]
    plan += [("test", i, cfg.anomaly_modes[i % len(cfg.anomaly_modes)]) for i in range(cfg.test_clips)]
    for split, i, mode in plan:
        rng = np.random.default_rng([cfg.seed, SPLIT_CODES[split], i])
        sprites, window = _clip_sprites(cfg, rng, mode)
        vid = f"{split}_{i:03d}"
        frame_dir = out / split / vid
        flow_dir = out / "flow" / vid
        frame_dir.mkdir(parents=True, exist_ok=True)
        flow_dir.mkdir(parents=True, exist_ok=True)
        noise_rng = np.random.default_rng([cfg.seed, SPLIT_CODES[split], i, 1])
        for t in range(cfg.clip_length):
            frame, flow = _render(sprites, t, background, textures, masks, cfg)
            if cfg.noise > 0:
                frame = np.clip(frame + noise_rng.normal(0.0, cfg.noise, frame.shape), 0.0, 1.0)
            save_frame(frame_dir / f"{t:04d}.png", frame)
            if t + 1 < cfg.clip_length:
                save_flo(flow_dir / f"{t:04d}.flo", flow)
        entry = {"video_id": vid, "split": split, "mode": mode, "window": window}
        if split == "test":
            labels = np.zeros(cfg.clip_length, dtype=np.int64)
            labels[window[0]: window[1] + 1] = 1
            (out / "labels").mkdir(parents=True, exist_ok=True)
            (out / "labels" / f"{vid}.txt").write_text("".join(f"{v}\n" for v in labels))
        meta["clips"].append(entry)
    (out / "synthetic.json").write_text(json.dumps(meta, indent=2) + "\n")
    return meta


SPLIT_CODES = {"train": 0, "test": 1}


def config_from_dict(data: dict) -> SyntheticSceneConfig:
    data = dict(data)
    for key in ("normal_shapes", "anomaly_modes", "window_length"):
        if key in data:
            data[key] = tuple(data[key])
    if "normal_velocities" in data:
        data["normal_velocities"] = tuple(tuple(int(c) for c in v) for v in data["normal_velocities"])
    try:
        return SyntheticSceneConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic config: {exc}") from exc


def load_windows(root: str | Path) -> dict[str, tuple[int, int] | None]:
    meta = json.loads((Path(root) / "synthetic.json").read_text())
    return {c["video_id"]: (tuple(c["window"]) if c["window"] else None) for c in meta["clips"]}


def desk_config(seed: int = 0, **overrides) -> SyntheticSceneConfig:
    """Small-canvas scene sized for CPU-only training runs."""
    base = dict(
        canvas=64, sprite_size=14, normal_velocities=((2, 0), (0, 2)), clip_length=16,
        window_length=(4, 5), train_clips=8, test_clips=6, texture_cells=6, seed=seed,
    )
    base.update(overrides)
    return config_from_dict(base)
