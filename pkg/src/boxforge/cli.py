"""Command-line entry point.

Exit codes: 0 success, 2 validation error (bad config, bad inputs), 3 runtime
failure. Logs go to stderr; machine-readable results are written to files
under each command's output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analog_bits import ClassValueError
from .config import ConfigError, RunConfig
from .dataset import DatasetError, boxes_from_json
from .geometry import BoxValidationError, compute_maps_fast
from .pipeline import cmd_downstream, cmd_evaluate, cmd_sample, cmd_toygen, cmd_train

VALIDATION_ERRORS = (ConfigError, DatasetError, BoxValidationError, ClassValueError, ValueError)

_COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "downstream": cmd_downstream,
    "toygen": cmd_toygen,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxforge",
        description="Box-conditioned diffusion for paired defect image/mask synthesis.",
    )
    parser.add_argument("--version", action="version", version=f"boxforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    descriptions = {
        "train": "train the denoiser on a manifest's diffusion_train split",
        "sample": "synthesize image/mask pairs from annotation boxes",
        "evaluate": "recompute alignment metrics over a manifest",
        "downstream": "train real/synth/real+synth segmenters and compare F1",
        "toygen": "generate the procedural toy dataset with splits",
    }
    for name, help_text in descriptions.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON run config")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            dest="overrides",
            metavar="KEY=VALUE",
            help="override a config field (value parsed as JSON when possible)",
        )

    maps = sub.add_parser("maps", help="conditioning-map debug utilities")
    maps_sub = maps.add_subparsers(dest="maps_command", required=True)
    dump = maps_sub.add_parser("dump", help="write raw distance/class grids for a layout")
    dump.add_argument("--height", type=int, required=True)
    dump.add_argument("--width", type=int, required=True)
    dump.add_argument(
        "--boxes",
        required=True,
        help="JSON list of boxes, or @FILE to read the list from a file",
    )
    dump.add_argument("--out", required=True, help="output directory")
    return parser


def _maps_dump(args) -> int:
    raw = args.boxes
    if raw.startswith("@"):
        box_path = Path(raw[1:])
        if not box_path.exists():
            raise ConfigError(f"box file not found: {box_path}")
        raw = box_path.read_text()
    try:
        items = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"--boxes is not valid JSON: {e}") from e
    boxes = boxes_from_json(items)
    for b in boxes:
        b.validate(args.height, args.width)
    maps = compute_maps_fast(boxes, args.height, args.width)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "distance_f32.raw").write_bytes(maps.distance.astype(np.float32).tobytes())
    (out / "classes_u8.raw").write_bytes(maps.class_map.astype(np.uint8).tobytes())
    header = {"height": args.height, "width": args.width, "d_max": max(args.height, args.width)}
    (out / "header.json").write_text(json.dumps(header, indent=2) + "\n")
    print(f"maps written to {out}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        if args.command == "maps":
            return _maps_dump(args)
        config = RunConfig.load(Path(args.config)).apply_overrides(args.overrides)
        _COMMANDS[args.command](config)
        return 0
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures: training/sampling/IO/checkpoint
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
