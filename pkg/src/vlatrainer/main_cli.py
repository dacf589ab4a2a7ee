import argparse
import asyncio
import sys
from pathlib import Path

from pydantic import ValidationError

from vlatrainer.app import VlaTrainerApp
from vlatrainer.clients.run_store import RunStore
from vlatrainer.errors import CheckpointError, ConfigError, GraphError, NumericError
from vlatrainer.utils.cli import config_overrides, parse_args
from vlatrainer.utils.config import RunConfig, Settings, get_settings, load_run_config
from vlatrainer.utils.formatters import (
    format_demo_manifest,
    format_eval_text,
    format_label_manifest,
    format_rprm_report,
    format_sft_curve,
    format_train_summary,
)
from vlatrainer.utils.logging_config import setup_logging

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
EXIT_INTERRUPTED = 130


def resolve_run_dir(args: argparse.Namespace, settings: Settings, config: RunConfig) -> Path:
    if args.run_dir is not None:
        return Path(args.run_dir)
    if settings.run_dir:
        return Path(settings.run_dir)
    return Path(config.output_dir) / str(config.seed)


async def dispatch(args: argparse.Namespace, app: VlaTrainerApp) -> str:
    command = args.command
    if command == "gen-demos":
        return format_demo_manifest(await app.gen_demos(args.episodes_per_task))
    if command == "sft":
        return format_sft_curve(await app.sft())
    if command == "label":
        return format_label_manifest(await app.label(args.trajectories))
    if command == "train-rprm":
        return format_rprm_report(await app.train_rprm())
    if command == "train":
        return format_train_summary(await app.train(args.resume))
    if command == "eval":
        report = await app.evaluate(args.checkpoint, args.expert, args.episodes_per_task, args.save_trajectories)
        return format_eval_text(report)
    if command == "export":
        return str(await app.export(args.kind, args.tag))
    raise ConfigError(f"Unknown command: {command}")


async def run_cli(args: argparse.Namespace, settings: Settings) -> str:
    config = load_run_config(args.config, config_overrides(args))
    async with RunStore(resolve_run_dir(args, settings, config)) as store:
        store.echo_config(config)
        app = VlaTrainerApp(config, store, settings)
        return await dispatch(args, app)


def exit_code(error: BaseException) -> int:
    """Invalid input of any kind maps to the config code; graph errors are internal faults."""
    if isinstance(error, (ConfigError, ValidationError)):
        return EXIT_CONFIG
    if isinstance(error, ValueError) and not isinstance(error, GraphError):
        return EXIT_CONFIG
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (CheckpointError, OSError)):
        return EXIT_IO
    return EXIT_FAILURE


def main() -> None:
    args = parse_args()
    settings = get_settings()

    try:
        setup_logging(settings.log_level)
        result = asyncio.run(run_cli(args, settings))
        print(result)
        sys.exit(EXIT_OK)

    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        sys.exit(EXIT_INTERRUPTED)

    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(exit_code(e))


if __name__ == "__main__":
    main()
