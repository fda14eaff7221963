"""Frame preprocessing and prediction-quality metrics (MSE, PSNR, patch PSNR)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DataError, InputError

FRAME_SIZE = 256
PSNR_CAP = 100.0
MAX_FLOOR = 1e-6

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


def _as_hwc(raw: np.ndarray) -> np.ndarray:
    img = np.asarray(raw)
    if img.size == 0:
        raise InputError("empty image")
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise InputError(f"expected an HxW, HxWx1 or HxWx3 image, got shape {img.shape}")
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def to_unit_range(raw: np.ndarray) -> np.ndarray:
    """Scale an integer image by its dtype maximum; float images must already be in [0, 1]."""
    img = np.asarray(raw)
    if np.issubdtype(img.dtype, np.bool_):
        return img.astype(np.float32)
    if np.issubdtype(img.dtype, np.integer):
        return img.astype(np.float32) / np.float32(np.iinfo(img.dtype).max)
    if not np.issubdtype(img.dtype, np.floating):
        raise InputError(f"unsupported image dtype {img.dtype}")
    img = img.astype(np.float32)
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise InputError("float images must hold finite values in [0, 1]")
    return img


def resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an HxWxC float array to size x size (half-pixel centers, no antialias)."""
    if img.shape[0] == size and img.shape[1] == size:
        return img.astype(np.float32, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy()


def preprocess(raw: np.ndarray, size: int = FRAME_SIZE) -> np.ndarray:
    """Turn a raw 1- or 3-channel image into a size x size x 3 float32 frame in [0, 1]."""
    img = to_unit_range(_as_hwc(raw))
    out = resize_bilinear(img, size)
    return np.clip(out, 0.0, 1.0)


def load_image(path: str | Path) -> np.ndarray:
    """Read an image file as an integer array; palette and alpha are dropped."""
    try:
        with Image.open(path) as im:
            if im.mode in ("P", "RGBA", "LA", "CMYK", "YCbCr"):
                im = im.convert("RGB")
            arr = np.array(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc
    if arr.dtype == np.int32 and arr.ndim == 2:
        # 32-bit integer mode ("I") stores 16-bit data in practice
        arr = np.clip(arr, 0, 65535).astype(np.uint16)
    return arr


def load_frame(path: str | Path, size: int = FRAME_SIZE) -> np.ndarray:
    try:
        return preprocess(load_image(path), size)
    except InputError as exc:
        raise DataError(f"malformed image {path}: {exc}") from exc


def load_native_frame(path: str | Path) -> np.ndarray:
    """An HxWx3 float32 frame in [0, 1] at its stored resolution."""
    try:
        return to_unit_range(_as_hwc(load_image(path)))
    except InputError as exc:
        raise DataError(f"malformed image {path}: {exc}") from exc


def save_frame(path: str | Path, frame: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise InputError("empty frames")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference over all pixels and channels."""
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def _psnr_from(max_value: float, err: float, cap: float) -> float:
    if err == 0.0:
        return cap
    peak = max(max_value, MAX_FLOOR)
    return min(cap, 10.0 * np.log10(peak * peak / err))


def psnr(truth: np.ndarray, pred: np.ndarray, cap: float = PSNR_CAP) -> float:
    """PSNR in dB with the peak taken from the ground-truth frame.

    The peak is floored at 1e-6 for all-black frames and the result is capped
    at ``cap`` so that perfect predictions stay finite.
    """
    truth, pred = _check_pair(truth, pred)
    return _psnr_from(float(truth.max()), float(np.mean((truth - pred) ** 2)), cap)


def psnr_batch(truth: np.ndarray, pred: np.ndarray, cap: float = PSNR_CAP) -> np.ndarray:
    """Per-frame PSNR over the leading axis of two (N, H, W, C) stacks."""
    truth, pred = _check_pair(truth, pred)
    if truth.ndim != 4:
        raise InputError(f"expected (N, H, W, C) stacks, got {truth.shape}")
    return np.array([psnr(t, p, cap) for t, p in zip(truth, pred)])


def patch_psnr_mask(
    truth: np.ndarray, pred: np.ndarray, patch: int = 64, cap: float = PSNR_CAP
) -> np.ndarray:
    """PSNR of each non-overlapping patch x patch tile; trailing partial tiles are dropped.

    Lower values mark regions the predictor got wrong, i.e. likely anomalies.
    """
    truth, pred = _check_pair(truth, pred)
    if truth.ndim < 2:
        raise InputError("frames must be at least two-dimensional")
    h, w = truth.shape[:2]
    if patch < 1 or patch > h or patch > w:
        raise InputError(f"patch size {patch} does not fit a {h}x{w} frame")
    gh, gw = h // patch, w // patch
    out = np.empty((gh, gw))
    for i in range(gh):
        for j in range(gw):
            rows = slice(i * patch, (i + 1) * patch)
            cols = slice(j * patch, (j + 1) * patch)
            out[i, j] = psnr(truth[rows, cols], pred[rows, cols], cap)
    return out
