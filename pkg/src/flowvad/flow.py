"""Optical flow fields: ``.flo`` IO, color-wheel RGB encoding, block matching, warping.

Flow arrays are H x W x 2 with channel 0 the horizontal (x) displacement and
channel 1 the vertical (y) displacement, in pixels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import FlowFormatError, InputError

FLO_MAGIC = 202021.25
_HEADER = struct.Struct("<fii")


@dataclass(frozen=True)
class FlowRGB:
    """Color-wheel rendering of a flow field, values in [0, 1]."""

    pixels: np.ndarray
    max_magnitude: float


# --------------------------------------------------------------------------
# .flo files
# --------------------------------------------------------------------------


def read_flo(data: bytes) -> np.ndarray:
    """Parse a Middlebury ``.flo`` byte stream into an H x W x 2 float32 array."""
    if len(data) < _HEADER.size:
        raise FlowFormatError("truncated header", len(data))
    magic, width, height = _HEADER.unpack_from(data, 0)
    if magic != np.float32(FLO_MAGIC):
        raise FlowFormatError(f"bad magic {magic!r}", 0)
    if width <= 0:
        raise FlowFormatError(f"nonpositive width {width}", 4)
    if height <= 0:
        raise FlowFormatError(f"nonpositive height {height}", 8)
    expected = _HEADER.size + 8 * width * height
    if len(data) < expected:
        raise FlowFormatError(
            f"truncated payload: need {expected} bytes for {width}x{height}, got {len(data)}",
            len(data),
        )
    if len(data) > expected:
        raise FlowFormatError(f"{len(data) - expected} trailing bytes", expected)
    uv = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=_HEADER.size)
    return uv.reshape(height, width, 2).astype(np.float32)


def write_flo(flow: np.ndarray) -> bytes:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2 or flow.shape[0] < 1 or flow.shape[1] < 1:
        raise InputError(f"expected an H x W x 2 flow field, got shape {flow.shape}")
    height, width = flow.shape[:2]
    header = _HEADER.pack(FLO_MAGIC, width, height)
    return header + np.ascontiguousarray(flow, dtype="<f4").tobytes()


def load_flo(path: str | Path) -> np.ndarray:
    try:
        return read_flo(Path(path).read_bytes())
    except FlowFormatError as exc:
        raise FlowFormatError(f"{path}: {exc.args[0]}", exc.offset) from exc


def save_flo(path: str | Path, flow: np.ndarray) -> None:
    Path(path).write_bytes(write_flo(flow))


# --------------------------------------------------------------------------
# RGB encoding
# --------------------------------------------------------------------------


@lru_cache(maxsize=1)
def color_wheel() -> np.ndarray:
    """The 55-entry Middlebury wheel (RY, YG, GC, CB, BM, MR segments), values in [0, 255]."""
    segments = [(15, 0, 1, 1), (6, 1, 0, -1), (4, 1, 2, 1), (11, 2, 1, -1), (13, 2, 0, 1), (6, 0, 2, -1)]
    rows = []
    for n, full, ramp, direction in segments:
        block = np.zeros((n, 3))
        block[:, full] = 255
        steps = np.floor(255 * np.arange(n) / n)
        block[:, ramp] = steps if direction > 0 else 255 - steps
        rows.append(block)
    return np.concatenate(rows)


def _wheel_colors(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Colors for flow vectors already scaled so that magnitudes are <= 1."""
    wheel = color_wheel()
    ncols = wheel.shape[0]
    rad = np.sqrt(u * u + v * v)
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = ((1.0 - f) * wheel[k0] + f * wheel[k1]) / 255.0
    col = 1.0 - np.minimum(rad, 1.0)[..., None] * (1.0 - col)
    return col


def flow_to_rgb(flow: np.ndarray, max_magnitude: float | None = None) -> FlowRGB:
    """Encode a flow field with the color wheel: hue from direction, saturation from magnitude.

    Magnitudes are normalised by the field's own maximum (at least 1 pixel)
    unless ``max_magnitude`` is given.  Zero flow renders white.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise InputError(f"expected an H x W x 2 flow field, got shape {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise InputError("flow field contains non-finite values")
    u, v = flow[..., 0], flow[..., 1]
    if max_magnitude is None:
        max_magnitude = max(float(np.sqrt(u * u + v * v).max()), 1.0)
    pixels = _wheel_colors(u / max_magnitude, v / max_magnitude)
    return FlowRGB(np.clip(pixels, 0.0, 1.0).astype(np.float32), float(max_magnitude))


@lru_cache(maxsize=4)
def _reference_hues(samples: int) -> tuple[np.ndarray, np.ndarray]:
    angles = np.linspace(-np.pi, np.pi, samples, endpoint=False)
    cols = _wheel_colors(np.cos(angles), np.sin(angles))
    dirs = 1.0 - cols
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return angles, dirs


def rgb_to_angle(rgb: np.ndarray, samples: int = 720) -> float:
    """Recover the flow direction atan2(v, u), in radians, encoded by one wheel color.

    Desaturation scales ``1 - color`` uniformly, so the direction of that
    vector identifies the hue regardless of magnitude.
    """
    c = 1.0 - np.asarray(rgb, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(c)
    if norm == 0.0:
        raise InputError("white encodes zero flow and has no direction")
    angles, dirs = _reference_hues(samples)
    return float(angles[np.argmax(dirs @ (c / norm))])


def dominant_angle(pixels: np.ndarray, min_saturation: float = 0.2) -> float:
    """Flow direction of the mean color over all sufficiently saturated pixels."""
    flat = 1.0 - np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    strength = np.linalg.norm(flat, axis=1)
    keep = strength >= min_saturation
    if not np.any(keep):
        raise InputError("no saturated pixels to read a direction from")
    return rgb_to_angle(1.0 - flat[keep].mean(axis=0))


def angle_difference(a: float, b: float) -> float:
    """Absolute wrapped difference between two angles, in [0, pi]."""
    d = (a - b + np.pi) % (2 * np.pi) - np.pi
    return abs(float(d))


# --------------------------------------------------------------------------
# Block matching
# --------------------------------------------------------------------------


def _candidate_order(radius: int) -> list[tuple[int, int]]:
    cands = [(u, v) for u in range(-radius, radius + 1) for v in range(-radius, radius + 1)]
    return sorted(cands, key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))


def block_match_flow(
    frame_a: np.ndarray, frame_b: np.ndarray, block: int = 8, radius: int = 4
) -> np.ndarray:
    """Exhaustive SSD block matching from ``frame_a`` to ``frame_b``.

    Each block of ``frame_a`` gets the displacement d in [-radius, radius]^2
    minimising the SSD against ``frame_b`` sampled at p + d (wrapping at the
    borders).  Ties go to the smallest magnitude, then smallest (u, v).
    Trailing partial blocks are matched as smaller blocks.
    """
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise InputError(f"expected H x W or H x W x C frames, got {a.shape}")
    h, w = a.shape[:2]
    if block < 1 or block > h or block > w:
        raise InputError(f"block size {block} does not fit a {h}x{w} frame")
    if radius < 0:
        raise InputError("radius must be nonnegative")

    row_starts = np.arange(0, h, block)
    col_starts = np.arange(0, w, block)
    best = np.full((len(row_starts), len(col_starts)), np.inf)
    best_uv = np.zeros((len(row_starts), len(col_starts), 2))
    for u, v in _candidate_order(radius):
        shifted = np.roll(b, shift=(-v, -u), axis=(0, 1))
        per_pixel = ((a - shifted) ** 2).sum(axis=2)
        ssd = np.add.reduceat(np.add.reduceat(per_pixel, row_starts, axis=0), col_starts, axis=1)
        better = ssd < best
        best[better] = ssd[better]
        best_uv[better] = (u, v)

    flow = np.repeat(np.repeat(best_uv, block, axis=0), block, axis=1)
    return flow[:h, :w].astype(np.float32)


# --------------------------------------------------------------------------
# Warping
# --------------------------------------------------------------------------


def warp(frame: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward warp: output(p) = frame(p + flow(p)), bilinear, clamped at the border."""
    frame = np.asarray(frame)
    flow = np.asarray(flow, dtype=np.float64)
    if frame.ndim not in (2, 3) or flow.shape != frame.shape[:2] + (2,):
        raise InputError(f"flow shape {flow.shape} does not match frame shape {frame.shape}")
    h, w = frame.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    x = np.clip(xs + flow[..., 0], 0, w - 1)
    y = np.clip(ys + flow[..., 1], 0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if frame.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    src = frame.astype(np.float64)
    top = (1 - fx) * src[y0, x0] + fx * src[y0, x1]
    bottom = (1 - fx) * src[y1, x0] + fx * src[y1, x1]
    return ((1 - fy) * top + fy * bottom).astype(frame.dtype if frame.dtype.kind == "f" else np.float64)
