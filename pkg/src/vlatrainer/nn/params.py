from collections.abc import Iterable, Iterator, Mapping
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

TensorBuffer = NDArray[np.float64]


def as_tensor(data: ArrayLike, shape: Optional[tuple[int, ...]] = None) -> TensorBuffer:
    """
    Convert array-like data into a row-major 64-bit float buffer.

    Args:
        data: Nested sequence or array
        shape: Expected shape, checked when given

    Returns:
        Contiguous float64 array

    Raises:
        ValueError: On shape mismatch or non-finite entries
    """
    tensor = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None and tensor.shape != shape:
        raise ValueError(f"Expected shape {shape}, got {tensor.shape}")
    if not np.isfinite(tensor).all():
        raise ValueError("Tensor contains non-finite entries")
    return tensor


class ParamStore(Mapping[str, TensorBuffer]):
    """
    Ordered named parameters with adaptive-moment accumulators.

    Entries are replaced (never mutated in place) by the optimizer, so arrays handed
    out by an earlier lookup keep their values.
    """

    def __init__(self, entries: Optional[Mapping[str, ArrayLike]] = None):
        self._entries: dict[str, TensorBuffer] = {}
        self.first_moment: dict[str, TensorBuffer] = {}
        self.second_moment: dict[str, TensorBuffer] = {}
        self.step_count = 0
        for name, value in (entries or {}).items():
            self.add(name, value)

    def add(self, name: str, value: ArrayLike) -> None:
        if name in self._entries:
            raise ValueError(f"Duplicate parameter name: {name}")
        tensor = as_tensor(value)
        self._entries[name] = tensor
        self.first_moment[name] = np.zeros_like(tensor)
        self.second_moment[name] = np.zeros_like(tensor)

    def set(self, name: str, value: TensorBuffer) -> None:
        current = self._entries[name]
        if value.shape != current.shape:
            raise ValueError(f"Shape change for {name}: {current.shape} -> {value.shape}")
        self._entries[name] = value

    def __getitem__(self, name: str) -> TensorBuffer:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self, prefix: str = "") -> list[str]:
        return [name for name in self._entries if name.startswith(prefix)]

    def reset_moments(self) -> None:
        for name, tensor in self._entries.items():
            self.first_moment[name] = np.zeros_like(tensor)
            self.second_moment[name] = np.zeros_like(tensor)
        self.step_count = 0

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, tensor in self._entries.items():
            clone._entries[name] = tensor.copy()
            clone.first_moment[name] = self.first_moment[name].copy()
            clone.second_moment[name] = self.second_moment[name].copy()
        clone.step_count = self.step_count
        return clone

    def frozen_copy(self) -> "ParamStore":
        """Deep copy whose arrays are read-only; safe to share across threads."""
        clone = self.copy()
        for store in (clone._entries, clone.first_moment, clone.second_moment):
            for tensor in store.values():
                tensor.setflags(write=False)
        return clone

    def equal(self, other: "ParamStore", names: Optional[Iterable[str]] = None) -> bool:
        selected = list(names) if names is not None else list(self._entries)
        return all(np.array_equal(self._entries[n], other[n]) for n in selected)

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self._entries.values()))
