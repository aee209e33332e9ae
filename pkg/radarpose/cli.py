#!/usr/bin/env python3
"""
radarpose command line: simulate, preprocess, bench-heatmap, train, eval,
infer, gradcheck, ablate and serve.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""

import argparse
import asyncio
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from .config import PRESETS, ModelConfig, load_config, preset, save_config
from .dsp import bench_heatmaps, heatmaps_batch
from .errors import FormatError
from .formats import (
    decode_cube,
    encode_cube,
    encode_heatmap,
    read_json,
    read_stream,
    write_json,
    write_stream,
)
from .objective import OksParams, evaluate_ap
from .pipeline import ablate, build_dataset, evaluate, gradient_suite, infer, Model, split_windows, train
from .poses import PoseFile
from .radar_sim import RadarCube

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _with(config: ModelConfig, **overrides) -> ModelConfig:
    values = {k: v for k, v in overrides.items() if v is not None}
    if not values:
        return config
    return ModelConfig(**{**config.model_dump(), **values})


def resolve_config(args: argparse.Namespace) -> ModelConfig:
    config = preset(args.preset)
    if args.config:
        config = load_config(args.config, base=config)
    return _with(config, seed=args.seed)


def read_cube_stream(path: Path) -> List[Dict[str, RadarCube]]:
    """Group an MMRC stream by frame; frames come back in frame order."""
    frames: Dict[int, Dict[str, RadarCube]] = defaultdict(dict)
    for record in read_stream(path):
        samples, frame_index, view = decode_cube(record)
        frames[frame_index][view] = RadarCube(samples, frame_index, view)
    return [frames[i] for i in sorted(frames)]


def match_frames(truth: PoseFile, predictions: PoseFile) -> PoseFile:
    """Ground truth restricted to the predicted frame ids, in prediction order."""
    by_frame = {f.frame: f for f in truth.frames}
    missing = [f.frame for f in predictions.frames if f.frame not in by_frame]
    if missing:
        raise ValueError(f"ground truth has no frames {missing[:5]}")
    frames = [by_frame[f.frame] for f in predictions.frames]
    return truth.model_copy(update={"frames": frames})


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _with(resolve_config(args), frames=args.frames)
    out = Path(args.out or "simulation")
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(config)
    script = dataset.script
    records = []
    for frame in range(script.frame_count):
        for view, cube in dataset.frame(frame).items():
            records.append(encode_cube(cube.samples, cube.frame_index, view))
    write_stream(out / "cubes.mmrc", records)
    write_json(out / "scene.json", script.model_dump())
    truth = PoseFile.from_window(script.poses(), script.image_width, script.image_height)
    write_json(out / "poses.json", truth.model_dump())
    save_config(config, out / "config.txt")
    print(json.dumps({"frames": script.frame_count, "views": list(dataset.views), "windows": len(dataset), "out": str(out)}))
    return 0


def cmd_preprocess(args: argparse.Namespace) -> int:
    config = _with(
        resolve_config(args),
        chirp_target=args.chirp_target,
        angle_pad=args.angle_pad,
        window=args.window,
        input_representation={"3d": "fft3d", "4d": "fft4d", None: None}[args.mode],
        workers=args.workers,
    )
    cubes = [cube for frame in read_cube_stream(Path(args.input)) for cube in frame.values()]
    heatmaps = heatmaps_batch(cubes, config, config.workers)
    out = Path(args.out or "heatmaps.mmh3")
    write_stream(out, [encode_heatmap(h.values) for h in heatmaps])
    shape = heatmaps[0].shape if heatmaps else None
    print(json.dumps({"heatmaps": len(heatmaps), "shape": shape, "out": str(out)}))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    report = bench_heatmaps(args.frames, args.runs, resolve_config(args), seed=args.seed or 0)
    payload = report.model_dump()
    if args.out:
        write_json(args.out, payload)
    print(json.dumps(payload, indent=2))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _with(resolve_config(args), steps=args.steps)
    result = train(config, out_dir=args.out or "run")
    last = result.records[-1] if result.records else None
    print(
        json.dumps(
            {
                "steps": len(result.records),
                "final_loss": last.total if last else None,
                "params": result.model.parameter_counts(),
                "n_tok": result.model.n_tokens(),
                "checkpoints": [str(p) for p in result.checkpoints],
            }
        )
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.predictions:
        if not args.ground_truth:
            raise ValueError("--predictions needs --ground-truth")
        pred_file = PoseFile.model_validate(read_json(args.predictions))
        preds = pred_file.to_window()
        truth = match_frames(PoseFile.model_validate(read_json(args.ground_truth)), pred_file).to_window()
        report = evaluate_ap(preds.coords, truth, OksParams.from_config(_with(config, joints=truth.joints)))
    elif args.checkpoint:
        model = Model(config)
        model.load(args.checkpoint)
        dataset = build_dataset(config)
        train_ids, test_ids = split_windows(len(dataset), config.train_fraction)
        report = evaluate(model, dataset, test_ids or train_ids)
    else:
        raise ValueError("eval needs --predictions/--ground-truth or --checkpoint")
    pct = report.percent()
    print(f"AP = {pct['AP']:.1f}  AP50 = {pct['AP50']:.1f}  AP75 = {pct['AP75']:.1f}")
    if report.per_group:
        print(report.joint_table().round(1).to_string(index=False))
    if args.out:
        write_json(args.out, report.model_dump())
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    frames = read_cube_stream(Path(args.input))
    result = infer(config, args.checkpoint, frames)
    out = Path(args.out or "predictions.json")
    write_json(out, result.poses.model_dump())
    print(json.dumps({"poses": len(result.poses.frames), "skipped": result.skipped, "out": str(out)}))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    reports = gradient_suite(seed=args.seed or 0)
    for name, report in reports.items():
        status = "ok" if report.passed else "FAILED"
        print(f"{name:<14} max_rel_error={report.max_rel_error:.3e} tol={report.tol:g} {status}")
    return 0 if all(r.passed for r in reports.values()) else 2


def cmd_ablate(args: argparse.Namespace) -> int:
    config = _with(resolve_config(args), steps=args.steps)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValueError("--values needs at least one value")
    table = ablate(config, args.axis, values, args.out)
    print(table.round(1).to_string(index=False))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .server import main as serve_main

    asyncio.run(serve_main())
    return 0


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file applied on top of the preset")
    common.add_argument("--preset", choices=sorted(PRESETS), default="full", help="Base configuration (default: full)")
    common.add_argument("--seed", type=int, help="Override the config seed")
    common.add_argument("--out", help="Output file or directory")
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Log level (default: INFO)",
    )

    parser = ArgumentParser(prog="radarpose", description="Radar heatmaps to multi-frame 2D human pose")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Write a synthetic scene, cubes and ground truth")
    p.add_argument("--frames", type=int, help="Override the number of frames")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", parents=[common], help="Cubes (MMRC stream) to heatmaps (MMH3 stream)")
    p.add_argument("--input", required=True, help="MMRC stream written by simulate")
    p.add_argument("--chirp-target", type=int, help="Chirps kept after subsampling")
    p.add_argument("--angle-pad", type=int, help="Angle FFT size")
    p.add_argument("--window", choices=["rect", "hann"], help="Window before the FFTs")
    p.add_argument("--mode", choices=["3d", "4d"], help="Heatmap type")
    p.add_argument("--workers", type=int, help="Preprocessing threads")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("bench-heatmap", parents=[common], help="3D vs 4D preprocessing benchmark")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", parents=[common], help="Train on a synthetic scene")
    p.add_argument("--steps", type=int, help="Override the step budget")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="OKS-AP of predictions or of a checkpoint")
    p.add_argument("--predictions", help="Pose JSON with predictions")
    p.add_argument("--ground-truth", help="Pose JSON with ground truth")
    p.add_argument("--checkpoint", help="MMCK checkpoint evaluated on the synthetic test split")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="Center-frame poses for a cube stream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="MMRC stream")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", parents=[common], help="Sweep one config axis")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True, help="Comma separated values")
    p.add_argument("--steps", type=int, help="Override the step budget per run")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", parents=[common], help="Run the MCP tool server on stdio")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, ValidationError, FormatError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=args.log_level == "DEBUG")
        return 2


if __name__ == "__main__":
    sys.exit(main())
