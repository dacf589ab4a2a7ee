from enum import IntEnum
from typing import Any

import numpy as np


class StreamPurpose(IntEnum):
    ENV = 0
    DECODE = 1
    LEARNER = 2
    INIT = 3
    DATA = 4


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """
    Counter-based (Philox) generator keyed by `(master_seed, *key)`.

    Streams depend only on the key, never on which thread or shard draws from them.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([master_seed, *key])))


def env_stream(master_seed: int, env_id: int, purpose: StreamPurpose) -> np.random.Generator:
    return stream(master_seed, int(purpose), env_id)


def derive_seed(master_seed: int, *key: int) -> int:
    """Deterministic 31-bit seed for (master_seed, *key)."""
    return int(np.random.SeedSequence([master_seed, *key]).generate_state(1)[0] & 0x7FFFFFFF)


def _to_json(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, dict):
        return {k: _to_json(v) for k, v in value.items()}
    if isinstance(value, np.integer):
        return int(value)
    return value


def _from_json(value: Any) -> Any:
    if isinstance(value, dict):
        if "__ndarray__" in value:
            return np.asarray(value["__ndarray__"], dtype=value["dtype"])
        return {k: _from_json(v) for k, v in value.items()}
    return value


def generator_state(rng: np.random.Generator) -> dict[str, Any]:
    """JSON-serializable snapshot of a generator's bit-generator state."""
    state: dict[str, Any] = _to_json(rng.bit_generator.state)
    return state


def restore_generator(state: dict[str, Any]) -> np.random.Generator:
    raw = _from_json(state)
    bit_generator = getattr(np.random, raw["bit_generator"])()
    bit_generator.state = raw
    return np.random.Generator(bit_generator)
