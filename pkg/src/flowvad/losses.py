"""Training objectives for the motion and frame networks.

Tensors of rank 4 are treated as batches along dim 0 (any layout); lower
ranks are a single sample.  Distances are computed per sample and averaged
over the batch, so a batch of identical samples has the loss of one.

``norm`` selects how the L2 distance between two frames is reduced:

* ``"rms"``  square root of the mean squared difference (default; keeps the
  margin on a per-pixel scale independent of resolution)
* ``"l2"``   plain Frobenius norm over all elements
* ``"mse"``  mean squared difference, no root
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import InputError

NORMS = ("rms", "l2", "mse")


def _tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _pair(a, b) -> tuple[torch.Tensor, torch.Tensor]:
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.numel() == 0:
        raise InputError("empty input")
    return a, b


def _per_sample(x: torch.Tensor) -> torch.Tensor:
    return x.reshape(x.shape[0], -1) if x.dim() == 4 else x.reshape(1, -1)


def distance(a, b, norm: str = "rms") -> torch.Tensor:
    """Per-sample L2-type distance, shape (batch,)."""
    a, b = _pair(a, b)
    sq = _per_sample((a - b) ** 2)
    if norm == "rms":
        return sq.mean(dim=1).sqrt()
    if norm == "l2":
        return sq.sum(dim=1).sqrt()
    if norm == "mse":
        return sq.mean(dim=1)
    raise InputError(f"unknown norm {norm!r}; expected one of {NORMS}")


def loss_opt(pred, truth) -> torch.Tensor:
    """Mean absolute difference between predicted and ground-truth flow RGB."""
    pred, truth = _pair(pred, truth)
    return _per_sample((pred - truth).abs()).mean(dim=1).mean()


def loss_dense(truth, pred, norm: str = "rms") -> torch.Tensor:
    return distance(truth, pred, norm).mean()


def loss_margin(truth_next, pred, current, alpha: float = 0.2, norm: str = "rms") -> torch.Tensor:
    """Hinge pushing the prediction at least ``alpha`` closer to the next frame than to the current one.

    The subgradient at the kink is zero.
    """
    if alpha < 0:
        raise InputError("alpha must be nonnegative")
    to_next = distance(truth_next, pred, norm)
    to_current = distance(current, pred, norm)
    return torch.relu(to_next - to_current + alpha).mean()


def loss_frame(truth_next, pred, current, alpha: float = 0.2, lam: float = 0.004,
               norm: str = "rms", use_margin: bool = True) -> torch.Tensor:
    dense = loss_dense(truth_next, pred, norm)
    if not use_margin:
        return dense
    return dense + lam * loss_margin(truth_next, pred, current, alpha, norm)


def frame_loss_terms(truth_next, pred, current, alpha: float = 0.2, lam: float = 0.004,
                     norm: str = "rms", use_margin: bool = True) -> dict[str, torch.Tensor]:
    """Total frame loss plus its components, for logging."""
    dense = loss_dense(truth_next, pred, norm)
    margin = loss_margin(truth_next, pred, current, alpha, norm)
    total = dense + lam * margin if use_margin else dense
    return {"loss": total, "dense": dense, "margin": margin}
