from typing import Any

from vlatrainer.utils.config import parse_override


def config_override(value: str) -> tuple[str, Any]:
    return parse_override(value)


def non_negative_float(value: str) -> float:
    number = float(value)
    if not number >= 0.0:
        raise ValueError(f"Expected a non-negative number: {value}")
    return number


def positive_float(value: str) -> float:
    number = float(value)
    if not number > 0.0:
        raise ValueError(f"Expected a positive number: {value}")
    return number


def non_negative_int(value: str) -> int:
    number = int(value)
    if number < 0:
        raise ValueError(f"Expected a non-negative integer: {value}")
    return number


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise ValueError(f"Expected a positive integer: {value}")
    return number
