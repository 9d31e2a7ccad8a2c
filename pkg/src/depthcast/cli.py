"""Operator surface: gen-data, train, eval, infer / render-depth.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    echo,
    load_config,
    network_config_from,
    train_config_from,
)
from .data.dataset import ClipDataset, DatasetError, generate_dataset
from .data.formats import FormatError, read_ppm, write_pfm, write_pgm
from .data.scene import DatasetParams
from .evaluate import evaluate, model_predictor, write_metrics_csv
from .geometry import CameraIntrinsics
from .network import build_model
from .train import TrainingError, load_training_checkpoint, train


class UsageError(ValueError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthcast",
        description="Self-supervised depth-sequence forecasting on synthetic scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="render a synthetic clip dataset")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--clips", type=int, required=True, help="number of clips")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--moving-objects", default="false", choices=("true", "false"),
                     help="give boxes independent motion")
    gen.add_argument("--width", type=int, default=96)
    gen.add_argument("--height", type=int, default=64)

    tr = sub.add_parser("train", help="train from a JSON config")
    tr.add_argument("--config", required=True, help="JSON config file")
    tr.add_argument("--override", action="append", default=[], metavar="KEY.PATH=VALUE",
                    help="dotted-path config override (repeatable)")
    tr.add_argument("--resume", default="", help="checkpoint to resume from")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--config", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--override", action="append", default=[], metavar="KEY.PATH=VALUE")
    ev.add_argument("--out", default="", help="metrics CSV path (default from config)")

    for name in ("infer", "render-depth"):
        inf = sub.add_parser(name, help="predict the depth sequence for one clip")
        inf.add_argument("--checkpoint", required=True)
        inf.add_argument("--clip", required=True, help="clip directory with frame_<k>.ppm")
        inf.add_argument("--out", required=True, help="output directory")
        inf.add_argument("--config", default=None, help="config whose model section to use "
                                                        "(default: desk preset)")
    return parser


def _cmd_gen_data(args) -> int:
    if args.clips <= 0:
        raise UsageError(f"--clips must be positive, got {args.clips}")
    params = DatasetParams(width=args.width, height=args.height,
                           moving_objects=args.moving_objects == "true")
    print(json.dumps({"command": "gen-data", "out": args.out, "clips": args.clips,
                      "seed": args.seed, "moving_objects": params.moving_objects,
                      "width": params.width, "height": params.height}, indent=1))
    manifest = generate_dataset(args.out, args.clips, args.seed, params)
    print(f"wrote {manifest}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    print(echo(cfg))
    net_cfg = network_config_from(cfg)
    tc = train_config_from(cfg)
    if args.resume:
        tc.resume = args.resume
    out_dir = Path(tc.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as f:
        f.write(echo(cfg))
    final = train(tc, net_cfg)
    print(str(final))
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config, args.override)
    print(echo(cfg))
    if not cfg["eval"]["dataset"]:
        raise ConfigError("missing required key: eval.dataset")
    net_cfg = network_config_from(cfg)
    model = build_model(net_cfg, seed=0)
    load_training_checkpoint(args.checkpoint, model)
    dataset = ClipDataset(cfg["eval"]["dataset"])
    tc = cfg["train"]
    predictor = model_predictor(model, d_min=tc["d_min"], d_max=tc["d_max"])
    records = evaluate(dataset.clips, predictor, d_max=tc["d_max"])
    out_csv = args.out or cfg["eval"]["out_csv"]
    write_metrics_csv(out_csv, records)
    for rec in records:
        print(f"t+{rec.horizon}: abs_rel {rec.abs_rel:.4f} sq_rel {rec.sq_rel:.4f} "
              f"rmse {rec.rmse:.4f} rmse_log {rec.rmse_log:.4f} "
              f"d1 {rec.d1:.4f} d2 {rec.d2:.4f} d3 {rec.d3:.4f}")
    print(f"wrote {out_csv}")
    return 0


def _cmd_infer(args) -> int:
    cfg = load_config(args.config) if args.config else load_config()
    print(echo(cfg))
    net_cfg = network_config_from(cfg)
    model = build_model(net_cfg, seed=0)
    load_training_checkpoint(args.checkpoint, model)

    clip_dir = Path(args.clip)
    frames = []
    for i in range(net_cfg.context_length):
        path = clip_dir / f"frame_{i}.ppm"
        if not path.exists():
            raise UsageError(f"clip needs {net_cfg.context_length} context frames; "
                             f"missing {path}")
        frames.append(read_ppm(path))
    context = np.stack(frames)[None]

    d_min, d_max = cfg["train"]["d_min"], cfg["train"]["d_max"]
    predictor = model_predictor(model, d_min=d_min, d_max=d_max)
    from .data.scene import ClipSample
    clip = ClipSample(images=context[0], depths={}, cam_poses=[],
                      intrinsics=CameraIntrinsics(1, 1, 0.5, 0.5), clip_id=clip_dir.name)
    preds = predictor(clip)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for horizon, depth in sorted(preds.items()):
        write_pfm(out_dir / f"depth_{horizon}.pfm", depth.astype(np.float32))
        disp = 1.0 / np.maximum(depth, 1e-6)
        lo, hi = disp.min(), disp.max()
        scaled = np.zeros_like(disp) if hi == lo else (disp - lo) / (hi - lo)
        write_pgm(out_dir / f"depth_{horizon}.pgm",
                  np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8))
    print(f"wrote {len(preds)} depth maps to {out_dir}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "render-depth": _cmd_infer,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DatasetError, FormatError, TrainingError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
