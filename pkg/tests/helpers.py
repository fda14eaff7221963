"""Shared checks: finite-difference gradients on tiny float64 networks and a CLI smoke run."""

import numpy as np
import torch

from flowvad.cli import run
from flowvad.losses import loss_frame, loss_margin, loss_opt
from flowvad.nets import FrameNetSpec, MotionNetSpec, build_frame_net, build_motion_net
from conftest import make_ped2_miniature

TINY = dict(levels=2, base_channels=4, image_size=8)


def _pre_activation(model, *inputs):
    captured = {}
    handle = model.head.register_forward_hook(lambda m, i, o: captured.setdefault("z", o.detach()))
    model(*inputs)
    handle.remove()
    return captured["z"]


def _keep_clamp_inactive(model, *inputs):
    """Shrink the head so every output is strictly inside (0, 1); there the clamp is the identity."""
    with torch.no_grad():
        model.head.weight.mul_(0.1)
    z = _pre_activation(model, *inputs)
    assert 0.0 < float(z.min()) and float(z.max()) < 1.0


def sample_parameters(model, count, rng):
    params = [p for p in model.parameters()]
    picks = []
    for _ in range(count):
        p = params[rng.integers(len(params))]
        picks.append((p, int(rng.integers(p.numel()))))
    return picks


def relative_errors(model, loss_fn, count=60, h=1e-6, seed=0):
    """Relative error between autograd and central differences at ``count`` sampled parameters."""
    rng = np.random.default_rng(seed)
    model.zero_grad()
    loss_fn().backward()
    errors = []
    for p, i in sample_parameters(model, count, rng):
        flat = p.data.view(-1)
        analytic = float(p.grad.view(-1)[i])
        orig = float(flat[i])
        with torch.no_grad():
            flat[i] = orig + h
            up = float(loss_fn())
            flat[i] = orig - h
            down = float(loss_fn())
            flat[i] = orig
        numeric = (up - down) / (2 * h)
        errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-7))
    return np.array(errors)


def motion_gradient_errors(seed=0, count=60):
    torch.manual_seed(seed)
    model = build_motion_net(MotionNetSpec(**TINY), seed).double()
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    y = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    _keep_clamp_inactive(model, x)
    return relative_errors(model, lambda: loss_opt(model(x), y), count, seed=seed)


def frame_gradient_errors(hinge_active: bool, seed=0, count=60):
    """Gradient check of the frame loss; returns (errors, margin value at the check point)."""
    torch.manual_seed(seed)
    model = build_frame_net(FrameNetSpec(**TINY), seed).double()
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    g = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    _keep_clamp_inactive(model, x, g)
    with torch.no_grad():
        pred = model(x, g)
    nxt = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    if hinge_active:
        current = pred + 0.05 * torch.randn(pred.shape, dtype=torch.float64)
    else:
        current = nxt + 1.0
    margin = float(loss_margin(nxt, pred, current))
    errors = relative_errors(model, lambda: loss_frame(nxt, model(x, g), current, 0.2, 0.004), count, seed=seed)
    return errors, margin


def run_ped2_miniature(root, out):
    """Every stage of the CLI on a 2-train, 2-test clip miniature of the UCSD Ped2 tree."""
    make_ped2_miniature(root, train=2, test=2, frames=6, shape=(24, 36))
    nets = ["--image-size", "16", "--base-channels", "4", "--motion-levels", "2", "--frame-levels", "2"]
    steps = [
        ["precompute-flow", "--dataset", str(root), "--block", "4", "--radius", "2"],
        ["train-motion", "--dataset", str(root), *nets, "--epochs", "1", "--dataset-name", "ped2", "--out", str(out / "m")],
        ["train-frame", "--dataset", str(root), "--motion", str(out / "m" / "motion.pt"), *nets, "--epochs", "1",
         "--dataset-name", "ped2", "--out", str(out / "f")],
        ["evaluate", "--dataset", str(root), "--model", str(out / "f"), "--out", str(out / "e")],
    ]
    return [run(step) for step in steps]
