import hashlib
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from vlatrainer.model.checkpoint import CheckpointHeader
from vlatrainer.model.dataset import EpisodeRecord

TRAJECTORY_KIND = "trajectories"

_STEP_FIELDS = ("features", "instruction", "actions", "tokens", "gripper_open", "gripper_pos", "sparse_reward", "done")


@dataclass
class Episode:
    """Time-ordered log of one episode; row t holds the state before action t."""

    task_id: int
    seed: int
    success: bool
    features: NDArray[np.float64]
    instruction: NDArray[np.int64]
    actions: NDArray[np.float64]
    tokens: NDArray[np.int64]
    gripper_open: NDArray[np.float64]
    gripper_pos: NDArray[np.float64]
    sparse_reward: NDArray[np.float64]
    done: NDArray[np.bool_]
    suite_id: str = ""

    def __len__(self) -> int:
        return int(self.features.shape[0])


@dataclass
class TrajectoryDataset:
    """Episodes stored in the binary container; demos and saved eval rollouts share it."""

    episodes: list[Episode] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def num_steps(self) -> int:
        return sum(len(episode) for episode in self.episodes)

    def to_container(self) -> tuple[dict[str, NDArray[np.float64]], CheckpointHeader]:
        records = []
        start = 0
        for episode in self.episodes:
            records.append(EpisodeRecord(
                task_id=episode.task_id, seed=episode.seed, success=episode.success,
                start=start, length=len(episode), suite_id=episode.suite_id,
            ))
            start += len(episode)
        tensors: dict[str, NDArray[np.float64]] = {}
        for name in _STEP_FIELDS:
            parts = [np.asarray(getattr(e, name), dtype=np.float64) for e in self.episodes]
            if name == "instruction":
                parts = [np.tile(part, (len(e), 1)) for part, e in zip(parts, self.episodes)]
            tensors[name] = np.concatenate(parts) if parts else np.zeros((0,))
        header = CheckpointHeader(
            kind=TRAJECTORY_KIND,
            extra={"episodes": [r.model_dump() for r in records]},
        )
        return tensors, header

    @classmethod
    def from_container(cls, tensors: dict[str, NDArray[np.float64]], header: CheckpointHeader) -> "TrajectoryDataset":
        episodes = []
        for raw in header.extra.get("episodes", []):
            record = EpisodeRecord.model_validate(raw)
            rows = slice(record.start, record.start + record.length)
            episodes.append(Episode(
                task_id=record.task_id,
                seed=record.seed,
                success=record.success,
                suite_id=record.suite_id,
                features=tensors["features"][rows].copy(),
                instruction=tensors["instruction"][record.start].astype(np.int64),
                actions=tensors["actions"][rows].copy(),
                tokens=tensors["tokens"][rows].astype(np.int64),
                gripper_open=tensors["gripper_open"][rows].copy(),
                gripper_pos=tensors["gripper_pos"][rows].copy(),
                sparse_reward=tensors["sparse_reward"][rows].copy(),
                done=tensors["done"][rows].astype(bool),
            ))
        return cls(episodes)

    def digest(self) -> str:
        sha = hashlib.sha256()
        for episode in self.episodes:
            sha.update(f"{episode.task_id}:{episode.seed}:{int(episode.success)}:{len(episode)};".encode())
            for name in _STEP_FIELDS:
                sha.update(np.ascontiguousarray(getattr(episode, name), dtype="<f8").tobytes())
        return sha.hexdigest()

    def stacked(self, episodes: Sequence[Episode] | None = None) -> dict[str, NDArray[np.float64]]:
        """All steps of `episodes` (default: every episode) concatenated per field."""
        chosen = self.episodes if episodes is None else list(episodes)
        return {
            "features": np.concatenate([e.features for e in chosen]),
            "instruction": np.concatenate([np.tile(e.instruction, (len(e), 1)) for e in chosen]),
            "tokens": np.concatenate([e.tokens for e in chosen]),
        }
