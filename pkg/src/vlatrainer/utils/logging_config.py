import logging
import sys

from vlatrainer.errors import ConfigError

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
# Shard workers run on threads; at DEBUG each line names its thread.
DEBUG_FORMAT = "%(asctime)s - %(name)s [%(threadName)s] - %(levelname)s - %(message)s"


def setup_logging(log_level: str = "INFO") -> None:
    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        raise ConfigError(f"Unknown log level: {log_level}")

    logging.basicConfig(
        level=level,
        format=DEBUG_FORMAT if level <= logging.DEBUG else LOG_FORMAT,
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=[logging.StreamHandler(sys.stderr)],
        force=True,
    )
    # numpy overflow and invalid-value warnings land in the log, not bare on stderr
    logging.captureWarnings(True)
    logging.getLogger("asyncio").setLevel(logging.WARNING)
