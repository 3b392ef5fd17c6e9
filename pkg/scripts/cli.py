"""Command-line entry points: ``gen-toy``, ``train``, ``sample``, ``eval``, ``render``.

Exit codes: 0 success, 2 configuration or validation error, 3 data error,
4 numeric failure, 1 anything else. Progress goes to standard error; command
results (summaries, reports) are printed to standard output as JSON.

``EEGAN_NUM_THREADS`` sets the number of prefetch threads for training; batch
order and therefore results do not depend on it.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from scripts.data_processing.record_store import DatasetManifest
from scripts.data_processing.toy_generator import make_toy_dataset, toy_config_from_dict
from scripts.rendering.montage import load_render_spec, render_montage
from scripts.training.config import SeedConfig, load_train_config
from scripts.training.evaluation import evaluate
from scripts.training.sampling import sample_sequences
from scripts.training.trainer import train
from src.utils.common.config import ConfigManager
from src.utils.common.exceptions import EventGanError
from src.utils.common.logging import get_logger, setup_logging

logger = get_logger(__name__)

TRAIN_LOG_NAME = "train.log"


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _manifest_summary(manifest: DatasetManifest) -> Dict[str, Any]:
    return {
        "root": str(manifest.root),
        "records": len(manifest.records),
        "windows": manifest.record_count,
        "frames": manifest.frame_count,
        "shapes": {
            "T": manifest.window_T,
            "C": manifest.channels,
            "K": manifest.mask_channels,
            "H": manifest.height,
            "W": manifest.width,
        },
        "mean": manifest.mean,
        "std": manifest.std,
    }


def cmd_gen_toy(args: argparse.Namespace) -> int:
    config = ConfigManager(args.config).load(toy_config_from_dict)
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if overrides:
        config = dataclasses.replace(config, **overrides)
    _emit(_manifest_summary(make_toy_dataset(config)))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_train_config(args.config)
    if args.seed is not None:
        config.seeds = SeedConfig(init=args.seed, shuffle=args.seed + 1, noise=args.seed + 2)
    run_overrides: Dict[str, Any] = {}
    if args.out is not None:
        run_overrides["output_dir"] = args.out
    if args.resume is not None:
        run_overrides["resume_from"] = args.resume
    if args.epochs is not None:
        run_overrides["epochs"] = args.epochs
    config.run = dataclasses.replace(config.run, **run_overrides)

    out = Path(config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup_logging(config.log_level, log_file=str(out / TRAIN_LOG_NAME), structured=True)

    result = train(config)
    _emit(
        {
            "final_checkpoint": str(result.final_checkpoint),
            "epoch": result.record.epoch,
            "step": result.record.step,
            "metrics": str(result.metrics.path),
        }
    )
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    expected = load_train_config(args.config) if args.config else None
    manifest = sample_sequences(
        checkpoint=args.checkpoint,
        mask_source=args.masks,
        count=args.count,
        seed=args.seed if args.seed is not None else 0,
        output_dir=args.out,
        expected_config=expected,
    )
    _emit(_manifest_summary(manifest))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    report = evaluate(
        args.checkpoint,
        args.dataset,
        args.n_samples,
        seed=args.seed if args.seed is not None else 0,
    ).to_dict()
    if args.out is not None:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    _emit(report)
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    spec = load_render_spec(args.config)
    if args.out is not None:
        spec.output = args.out
    written = render_montage(spec)
    _emit({"written": [str(p) for p in written]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegan", description="Extreme-event conditional COT-GAN at desk scale"
    )
    parser.add_argument("--log-level", default="INFO", help="Console log level")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="YAML or JSON config file")
        p.add_argument("--seed", type=int, default=None, help="Override the configured seed")
        p.add_argument("--out", default=None, help="Override the output path")

    p = sub.add_parser("gen-toy", help="Generate the synthetic moving-blob dataset")
    common(p)
    p.set_defaults(handler=cmd_gen_toy)

    p = sub.add_parser("train", help="Train a model")
    common(p)
    p.add_argument("--resume", default=None, help="Checkpoint to resume from")
    p.add_argument("--epochs", type=int, default=None, help="Override run.epochs")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sample", help="Generate sequences conditioned on stored masks")
    common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--masks", required=True, help="Dataset directory providing masks")
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on held-out data")
    common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="Held-out dataset directory")
    p.add_argument("--n-samples", type=int, default=64)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("render", help="Render a mask/real/generated montage")
    common(p)
    p.set_defaults(handler=cmd_render)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    if args.command == "sample" and args.out is None:
        parser.error("sample needs --out")

    try:
        return int(args.handler(args))
    except EventGanError as exc:
        logger.error("%s failed: %s", args.command, exc.message)
        print(json.dumps(exc.to_dict(), default=str), file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        logger.exception("%s failed unexpectedly: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
