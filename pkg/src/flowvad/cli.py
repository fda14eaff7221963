"""Command-line entry point: ``flowvad <command> [options]``.

Every command accepts ``--seed``, ``--config`` (a YAML or JSON mapping whose
keys are the long option names with dashes turned into underscores) and
``--out``.  Explicit flags override config values.  Exit status is 0 on
success, 1 on data, config or model errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .data import build_manifest, load_clip
from .errors import ConfigError, DataError, FlowVADError
from .flow import block_match_flow, load_flo, save_flo
from .media import PSNR_CAP, load_native_frame, psnr, save_frame
from .nets import (FlowGuidedPredictor, FrameNetSpec, MotionNetSpec, build_frame_net,
                   build_motion_net, load_checkpoint, load_pipeline, save_checkpoint,
                   save_pipeline)
from .scoring import (clip_patch_masks, evaluate_dataset, masks_to_images,
                      normalize_scores, score_manifest, write_scores_csv)
from .synth import config_from_dict, desk_config, gen_synthetic
from .training import (ABLATIONS, MOTION_EPOCHS, FRAME_EPOCHS, TrainConfig,
                       dataset_learning_rate, train_frame_stage, train_motion_stage)

log = logging.getLogger("flowvad")


# --------------------------------------------------------------------------
# Option resolution
# --------------------------------------------------------------------------


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    try:
        text = p.read_text()
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {p} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


class Options:
    """Flag values layered over config values layered over defaults."""

    def __init__(self, args: argparse.Namespace, config: dict[str, Any]):
        self.args = args
        self.config = config

    def get(self, name: str, default: Any = None) -> Any:
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        return self.config.get(name, default)

    def path(self, name: str, must_exist: bool = True, required: bool = True) -> Path | None:
        value = self.get(name)
        if value is None:
            if required:
                raise ConfigError(f"--{name.replace('_', '-')} is required")
            return None
        p = Path(value)
        if must_exist and not p.exists():
            raise DataError(f"--{name.replace('_', '-')}: {p} does not exist")
        return p


def _out_dir(opts: Options) -> Path:
    out = opts.get("out")
    if out is None:
        raise ConfigError("--out is required")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _motion_spec(opts: Options) -> MotionNetSpec:
    base = dict(opts.get("motion_net", {}) or {})
    for key in ("image_size", "base_channels"):
        if opts.get(key) is not None:
            base[key] = int(opts.get(key))
    if opts.get("motion_levels") is not None:
        base["levels"] = int(opts.get("motion_levels"))
    if "feature_extraction_kernels" in base:
        base["feature_extraction_kernels"] = tuple(base["feature_extraction_kernels"])
    return _make_spec(MotionNetSpec, base)


def _frame_spec(opts: Options) -> FrameNetSpec:
    base = dict(opts.get("frame_net", {}) or {})
    for key in ("image_size", "base_channels"):
        if opts.get(key) is not None:
            base[key] = int(opts.get(key))
    if opts.get("frame_levels") is not None:
        base["levels"] = int(opts.get("frame_levels"))
    for key in ("feature_extraction_kernels", "input_order"):
        if key in base:
            base[key] = tuple(base[key])
    return _make_spec(FrameNetSpec, base)


def _make_spec(cls, values: dict):
    try:
        spec = cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad network options: {exc}") from exc
    spec.validate()
    return spec


def _train_config(opts: Options, stage: str, **flags) -> TrainConfig:
    dataset_name = opts.get("dataset_name", "")
    if stage == "motion":
        default_epochs = MOTION_EPOCHS.get(str(dataset_name).lower(), 20)
    else:
        default_epochs = FRAME_EPOCHS
    values = {
        "stage": stage,
        "learning_rate": float(opts.get("learning_rate", dataset_learning_rate(str(dataset_name), stage))),
        "adam_beta1": float(opts.get("adam_beta1", 0.9)),
        "adam_beta2": float(opts.get("adam_beta2", 0.999)),
        "batch_size": int(opts.get("batch_size", 16)),
        "epochs": opts.get(f"{stage}_epochs", opts.get("epochs", default_epochs)),
        "alpha": float(opts.get("alpha", 0.2)),
        "lambda_": float(opts.get("lambda_", opts.config.get("lambda", 0.004))),
        "seed": int(opts.get("seed", 0)),
        "norm": opts.get("norm", "rms"),
    }
    values.update(flags)
    values["epochs"] = int(values["epochs"])
    return TrainConfig(**values)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_gen_synthetic(opts: Options) -> int:
    out = _out_dir(opts)
    scene = dict(opts.get("scene", {}) or {})
    for key in ("train_clips", "test_clips", "clip_length", "canvas"):
        if opts.get(key) is not None:
            scene[key] = int(opts.get(key))
    seed = int(opts.get("seed", 0))
    if opts.get("preset", "full") == "desk":
        cfg = desk_config(seed, **scene)
    else:
        cfg = config_from_dict({**scene, "seed": seed})
    meta = gen_synthetic(cfg, out)
    log.info("wrote %d clips to %s", len(meta["clips"]), out)
    return 0


def _precompute_split(root: Path, split: str, flow_root: Path, block: int, radius: int,
                      import_dir: Path | None) -> int:
    manifest = build_manifest(root, split)
    written = 0
    for clip in manifest.clips:
        target = flow_root / clip.video_id
        target.mkdir(parents=True, exist_ok=True)
        frames = None
        for t in range(clip.frame_count - 1):
            stem = clip.frame_paths[t].stem
            dest = target / f"{stem}.flo"
            if import_dir is not None:
                src = import_dir / clip.video_id / f"{stem}.flo"
                if not src.exists():
                    raise DataError(f"missing imported flow file {src}")
                flow = load_flo(src)
            else:
                if frames is None:
                    frames = [load_native_frame(p) for p in clip.frame_paths]
                flow = block_match_flow(frames[t], frames[t + 1], block=block, radius=radius)
            save_flo(dest, flow)
            written += 1
    return written


def cmd_precompute_flow(opts: Options) -> int:
    root = opts.path("dataset")
    import_dir = opts.path("import_dir", required=False)
    flow_root = Path(opts.get("out") or root / "flow")
    splits = ("train", "test") if opts.get("split", "train") == "all" else (opts.get("split", "train"),)
    block, radius = int(opts.get("block", 8)), int(opts.get("radius", 4))
    total = sum(_precompute_split(root, s, flow_root, block, radius, import_dir) for s in splits)
    log.info("wrote %d flow files under %s", total, flow_root)
    return 0


def cmd_train_motion(opts: Options) -> int:
    root = opts.path("dataset")
    flow_root = opts.path("flow_root", required=False)
    out = _out_dir(opts)
    spec = _motion_spec(opts)
    config = _train_config(opts, "motion")
    manifest = build_manifest(root, "train", "frames_plus_flow", flow_root=flow_root)
    result = train_motion_stage(config, manifest, spec, out / "checkpoints", out / "metrics.jsonl")
    path = save_checkpoint(out / "motion.pt", result.model,
                           {"stage": "motion", "best_epoch": result.best_epoch, "seed": config.seed,
                            "config": config.to_dict(), "epoch_losses": result.epoch_losses})
    _write_json(out / "train_config.json", {"stage": "motion", "config": config.to_dict(),
                                             "best_epoch": result.best_epoch})
    log.info("motion net saved to %s (best epoch %d)", path, result.best_epoch)
    return 0


def _train_frame(opts: Options, out: Path, root: Path, motion, use_flow: bool, use_margin: bool,
                 spec: FrameNetSpec, motion_ckpt: Path | None):
    config = _train_config(opts, "frame", use_flow_guidance=use_flow, use_margin_loss=use_margin)
    manifest = build_manifest(root, "train")
    result = train_frame_stage(config, motion if use_flow else None, manifest, spec,
                               out / "checkpoints", out / "metrics.jsonl")
    frame_ckpt = save_checkpoint(out / "frame.pt", result.model,
                                 {"stage": "frame", "seed": config.seed, "config": config.to_dict(),
                                  "epoch_losses": result.epoch_losses})
    save_pipeline(out, motion_ckpt if use_flow else None, frame_ckpt, use_flow)
    _write_json(out / "train_config.json", {"stage": "frame", "config": config.to_dict(),
                                             "flow_evaluations": result.flow_evaluations})
    return result


def cmd_train_frame(opts: Options) -> int:
    root = opts.path("dataset")
    use_flow = not opts.get("no_flow_guidance", False)
    use_margin = not opts.get("no_margin_loss", False)
    motion_ckpt = opts.path("motion", required=use_flow)
    out = _out_dir(opts)
    motion = load_checkpoint(motion_ckpt, kind="motion")[0] if motion_ckpt is not None else None
    spec = _frame_spec(opts)
    _train_frame(opts, out, root, motion, use_flow, use_margin, spec, motion_ckpt)
    log.info("frame net and pipeline saved to %s", out)
    return 0


def _predictor(opts: Options) -> FlowGuidedPredictor:
    if opts.get("untrained", False):
        seed = int(opts.get("seed", 0))
        frame_spec = _frame_spec(opts)
        motion = build_motion_net(_motion_spec(opts), seed)
        return FlowGuidedPredictor(motion, build_frame_net(frame_spec, seed), True)
    return load_pipeline(opts.path("model"))


def cmd_score(opts: Options) -> int:
    root = opts.path("dataset")
    split = opts.get("split", "test")
    predictor = _predictor(opts)
    out = _out_dir(opts)
    manifest = build_manifest(root, split)
    series = score_manifest(predictor, manifest, predictor.image_size)
    write_scores_csv(out / "scores.csv", series)
    log.info("scored %d clips into %s", len(series), out / "scores.csv")
    return 0


def cmd_evaluate(opts: Options) -> int:
    root = opts.path("dataset")
    predictor = _predictor(opts)
    out = _out_dir(opts)
    manifest = build_manifest(root, "test")
    report = evaluate_dataset(predictor, manifest, predictor.image_size, out)
    if opts.get("masks", False):
        _write_masks(predictor, manifest.clips, out / "masks", int(opts.get("patch", 64)))
    sys.stdout.write(report.summary())
    return 0


def cmd_ablate(opts: Options) -> int:
    root = opts.path("dataset")
    motion_ckpt = opts.path("motion", required=False)
    out = _out_dir(opts)
    frame_spec = _frame_spec(opts)
    if motion_ckpt is None:
        motion_spec = _motion_spec(opts)
        config = _train_config(opts, "motion")
        manifest = build_manifest(root, "train", "frames_plus_flow", flow_root=opts.path("flow_root", required=False))
        result = train_motion_stage(config, manifest, motion_spec, None, out / "motion-metrics.jsonl")
        motion_ckpt = save_checkpoint(out / "motion.pt", result.model,
                                      {"stage": "motion", "best_epoch": result.best_epoch, "seed": config.seed})
        motion = result.model
    else:
        motion = load_checkpoint(motion_ckpt, kind="motion")[0]
    test = build_manifest(root, "test")
    rows = []
    for name, flags in ABLATIONS.items():
        cell = out / name
        result = _train_frame(opts, cell, root, motion, flags["use_flow_guidance"], flags["use_margin_loss"],
                              frame_spec, motion_ckpt)
        predictor = FlowGuidedPredictor(motion if flags["use_flow_guidance"] else None, result.model,
                                        flags["use_flow_guidance"])
        report = evaluate_dataset(predictor, test, frame_spec.image_size, cell)
        rows.append((name, flags["use_margin_loss"], flags["use_flow_guidance"], report.auc))
        log.info("%s auc %.4f", name, report.auc)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("experiment", "margin_loss", "flow_guidance", "auc"))
        for name, margin, flow, auc in rows:
            writer.writerow((name, int(margin), int(flow), f"{auc:.6f}"))
    sys.stdout.write(format_ablation(rows))
    return 0


def format_ablation(rows) -> str:
    lines = [f"{'experiment':<10} {'margin':>6} {'flow':>6} {'auc':>8}"]
    for name, margin, flow, auc in rows:
        lines.append(f"{name:<10} {'yes' if margin else 'no':>6} {'yes' if flow else 'no':>6} {auc:>8.4f}")
    return "\n".join(lines) + "\n"


def cmd_bench(opts: Options) -> int:
    """Frames per second for prediction alone and for prediction plus scoring, batch size 1."""
    root = opts.path("dataset")
    predictor = _predictor(opts)
    out = _out_dir(opts)
    limit = int(opts.get("frames", 50))
    manifest = build_manifest(root, "test")
    size = predictor.image_size
    clips = [load_clip(c, size) for c in manifest.clips]
    pairs = [(clip[t], clip[t + 1]) for clip in clips for t in range(len(clip) - 1)][:limit]
    if not pairs:
        raise DataError("no frame pairs to time")
    predictor.batch_size = 1

    start = time.perf_counter()
    for current, _ in pairs:
        predictor(current[None])
    prediction_s = time.perf_counter() - start

    start = time.perf_counter()
    values = []
    for current, nxt in pairs:
        values.append(psnr(nxt, predictor(current[None])[0], PSNR_CAP))
    normalize_scores(values)
    detection_s = time.perf_counter() - start

    result = {"frames": len(pairs), "batch_size": 1, "image_size": size,
              "prediction_fps": len(pairs) / prediction_s, "detection_fps": len(pairs) / detection_s}
    _write_json(out / "bench.json", result)
    sys.stdout.write(f"prediction: {result['prediction_fps']:.2f} fps\n"
                     f"detection:  {result['detection_fps']:.2f} fps\n")
    return 0


def _write_masks(predictor, clips, out: Path, patch: int) -> None:
    for clip in clips:
        frames = load_clip(clip, predictor.image_size)
        masks = clip_patch_masks(predictor, frames, patch)
        images = masks_to_images(masks, patch)
        target = out / clip.video_id
        for t, img in enumerate(images, start=1):
            save_frame(target / f"{t:04d}.png", np.repeat(img[..., None], 3, axis=2))


def cmd_mask(opts: Options) -> int:
    root = opts.path("dataset")
    predictor = _predictor(opts)
    out = _out_dir(opts)
    split = opts.get("split", "test")
    manifest = build_manifest(root, split)
    clips = manifest.clips
    video = opts.get("video")
    if video is not None:
        clips = [c for c in clips if c.video_id == video]
        if not clips:
            raise DataError(f"no clip {video!r} in the {split} split")
    _write_masks(predictor, clips, out, int(opts.get("patch", 64)))
    log.info("wrote patch-PSNR masks for %d clips to %s", len(clips), out)
    return 0


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--config", help="YAML or JSON file of option values")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--image-size", type=int, help="square input size in pixels (default 256)")
    p.add_argument("--base-channels", type=int, help="channels after feature extraction (default 64)")
    p.add_argument("--motion-levels", type=int, help="motion U-net levels (default 5)")
    p.add_argument("--frame-levels", type=int, help="frame U-net levels (default 4)")


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--motion-epochs", type=int)
    p.add_argument("--frame-epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--alpha", type=float, help="margin of the hinge term (default 0.2)")
    p.add_argument("--lambda", dest="lambda_", type=float, help="weight of the hinge term (default 0.004)")
    p.add_argument("--norm", choices=("rms", "l2", "mse"))
    p.add_argument("--dataset-name", help="ped2, avenue or shanghaitech: selects published epochs and rates")


def _predictor_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="directory holding pipeline.json")
    p.add_argument("--untrained", action="store_true", default=None,
                   help="use randomly initialised networks seeded by --seed")
    _model_args(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowvad", description="Flow-guided frame prediction for video anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-synthetic", help="write a synthetic moving-sprite dataset")
    _common(p)
    p.add_argument("--preset", choices=("full", "desk"), help="full: 256px canvas; desk: 64px for CPU runs")
    p.add_argument("--train-clips", type=int)
    p.add_argument("--test-clips", type=int)
    p.add_argument("--clip-length", type=int)
    p.add_argument("--canvas", type=int)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("precompute-flow", help="estimate flow by block matching or import .flo files")
    _common(p)
    p.add_argument("--dataset", help="dataset root")
    p.add_argument("--split", choices=("train", "test", "all"))
    p.add_argument("--block", type=int, help="block size (default 8)")
    p.add_argument("--radius", type=int, help="search radius (default 4)")
    p.add_argument("--import-dir", help="copy <dir>/<video>/<frame>.flo instead of estimating")
    p.set_defaults(func=cmd_precompute_flow)

    p = sub.add_parser("train-motion", help="fit the motion net to flow RGB")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--flow-root", help="flow tree (default <dataset>/flow)")
    _model_args(p)
    _train_args(p)
    p.set_defaults(func=cmd_train_motion)

    p = sub.add_parser("train-frame", help="fit the frame net with the motion net frozen")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--motion", help="motion checkpoint (.pt)")
    p.add_argument("--no-flow-guidance", action="store_true", default=None)
    p.add_argument("--no-margin-loss", action="store_true", default=None)
    _model_args(p)
    _train_args(p)
    p.set_defaults(func=cmd_train_frame)

    p = sub.add_parser("score", help="write per-frame PSNR and anomaly scores")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=("train", "test"))
    _predictor_args(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="score the test split and report frame-level AUC")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--masks", action="store_true", default=None, help="also write patch-PSNR masks")
    p.add_argument("--patch", type=int)
    _predictor_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and evaluate the four margin/flow combinations")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--motion", help="reuse a trained motion checkpoint")
    p.add_argument("--flow-root")
    _model_args(p)
    _train_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="time prediction and detection at batch size 1")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--frames", type=int, help="number of frames to time (default 50)")
    _predictor_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("mask", help="write patch-PSNR masks as grayscale images")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--video", help="only this clip")
    p.add_argument("--patch", type=int, help="patch size (default 64)")
    _predictor_args(p)
    p.set_defaults(func=cmd_mask)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        opts = Options(args, load_config(args.config))
        return args.func(opts)
    except FlowVADError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
