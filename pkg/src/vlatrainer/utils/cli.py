import argparse
from pathlib import Path
from typing import Any, Optional

from vlatrainer.services.export_service import ExportKind
from vlatrainer.utils.validation.cli_validator import (
    config_override,
    non_negative_float,
    non_negative_int,
    positive_float,
    positive_int,
)

COMMANDS = ("gen-demos", "sft", "label", "train-rprm", "train", "eval", "export")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="Flat JSON run configuration")
    common.add_argument("--run-dir", type=Path, default=None, help="Run directory (default: <output_dir>/<seed>)")
    common.add_argument("--seed", type=int, default=None, help="Master seed (overrides the config)")
    common.add_argument(
        "--set",
        dest="overrides",
        type=config_override,
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key, e.g. --set ppo.lr=2e-5 (repeatable)",
    )
    return common


def parse_args(args: Optional[list[str]] = None) -> argparse.Namespace:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="vla-trainer",
        description="Desk-scale imitation, process-reward and PPO training for token-action policies",
        epilog="Example: vla-trainer gen-demos --seed 0 && vla-trainer sft --seed 0 && vla-trainer train --seed 0",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-demos", parents=[common], help="Roll out the scripted expert")
    gen.add_argument("--episodes-per-task", type=non_negative_int, default=None)

    commands.add_parser("sft", parents=[common], help="Behavior cloning on the demonstrations")

    label = commands.add_parser("label", parents=[common], help="Pseudo-label trajectories for the reward model")
    label.add_argument("trajectories", nargs="*", type=Path, help="Trajectory files (default: the run's demonstrations)")

    commands.add_parser("train-rprm", parents=[common], help="Train the process reward model")

    train = commands.add_parser("train", parents=[common], help="PPO fine-tuning of the behavior-cloned policy")
    train.add_argument("--no-rprm", action="store_true", help="Sparse reward only (rprm.beta=0)")
    train.add_argument("--no-curriculum", action="store_true", help="Uniform task sampling")
    train.add_argument("--warmup-iters", type=non_negative_int, default=None)
    train.add_argument("--temperature", type=non_negative_float, default=None)
    train.add_argument("--lr", type=positive_float, default=None)
    train.add_argument("--resume", type=Path, default=None, help="Trainer checkpoint to continue from")

    evaluate = commands.add_parser("eval", parents=[common], help="Greedy success-rate evaluation")
    source = evaluate.add_mutually_exclusive_group()
    source.add_argument("--checkpoint", type=Path, default=None, help="Policy checkpoint (default: latest of the run)")
    source.add_argument("--expert", action="store_true", help="Evaluate the scripted expert")
    evaluate.add_argument("--episodes-per-task", type=positive_int, default=None)
    evaluate.add_argument("--save-trajectories", action="store_true", help="Write successful episodes as a trajectory file")

    export = commands.add_parser("export", parents=[common], help="Reformat training logs as CSV")
    export.add_argument("kind", type=ExportKind, choices=list(ExportKind))
    export.add_argument("--tag", default=None, help="Training run tag (default: derived from the config)")

    return parser.parse_args(args)


def config_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Flat overrides in precedence order: --set, then --seed, then the dedicated flags."""
    overrides: dict[str, Any] = dict(args.overrides)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "no_rprm", False):
        overrides["rprm.beta"] = 0.0
    if getattr(args, "no_curriculum", False):
        overrides["curriculum.uniform"] = True
    for flag, key in (("warmup_iters", "ppo.warmup_iters"), ("temperature", "ppo.temperature"), ("lr", "ppo.lr")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return overrides
