import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlatrainer.env.sim import Observation, StepResult
from vlatrainer.env.vec_env import EpisodeAccumulator, TaskSampler, VecEnv
from vlatrainer.errors import OrchestratorError
from vlatrainer.model.task import TaskSpec
from vlatrainer.policy.tokenizer import Vocabulary
from vlatrainer.utils.config import SimConfig
from vlatrainer.utils.constants import ACTION_DIMS
from vlatrainer.utils.throttling import Throttling

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceBatch:
    """Observations of every live environment, ordered by global env id."""

    env_ids: list[int]
    observations: list[Observation]
    epoch: int

    def __len__(self) -> int:
        return len(self.env_ids)


class WorkerShard:
    """A contiguous block of environments stepped together on one worker thread."""

    def __init__(self, shard_id: int, envs: VecEnv):
        self.shard_id = shard_id
        self.envs = envs
        self.epoch = 0
        self.crashed: set[int] = set()

    @property
    def env_ids(self) -> list[int]:
        return self.envs.env_ids

    def observations(self) -> list[tuple[int, Observation]]:
        return [
            (env_id, env.observation)
            for env_id, env in zip(self.env_ids, self.envs.envs)
            if env_id not in self.crashed
        ]

    def step(self, actions: NDArray[np.float64]) -> list[tuple[int, StepResult]]:
        results = []
        for index, env_id in enumerate(self.env_ids):
            try:
                results.append((env_id, self.envs.step_one(index, actions[index])))
            except Exception as e:
                self.crashed.add(env_id)
                raise OrchestratorError(f"step failed on shard {self.shard_id}: {e}", env_id) from e
        self.epoch += 1
        return results


class ShardPool:
    """
    Environment shards with gather/scatter barriers.

    Observations are gathered in env id order and actions are scattered to all shards
    at once; no shard starts step t+1 before every shard finished step t.
    """

    def __init__(self, shards: Sequence[WorkerShard], throttling: Throttling):
        self.shards = list(shards)
        self.throttling = throttling
        self.num_envs = sum(len(shard.env_ids) for shard in self.shards)

    @classmethod
    def build(
        cls,
        sim: SimConfig,
        vocab: Vocabulary,
        num_envs: int,
        num_shards: int,
        master_seed: int,
        max_worker_threads: int,
        task_sampler: Optional[TaskSampler] = None,
    ) -> "ShardPool":
        if not 1 <= num_shards <= num_envs:
            raise ValueError(f"Need between 1 and {num_envs} shards, got {num_shards}")
        blocks = np.array_split(np.arange(num_envs), num_shards)
        shards = [
            WorkerShard(shard_id, VecEnv(sim, vocab, [int(i) for i in block], master_seed, task_sampler))
            for shard_id, block in enumerate(blocks)
        ]
        logger.info(f"Built {num_shards} shards over {num_envs} environments")
        return cls(shards, Throttling(max_worker_threads))

    def accumulators(self) -> list[EpisodeAccumulator]:
        """Per-env running episode totals in env id order."""
        pairs = [pair for shard in self.shards for pair in zip(shard.env_ids, shard.envs.accumulators)]
        return [acc for _, acc in sorted(pairs, key=lambda p: p[0])]

    def set_task_sampler(self, sampler: TaskSampler) -> None:
        for shard in self.shards:
            shard.envs.set_task_sampler(sampler)

    def vec_reset(self, tasks: Optional[Sequence[TaskSpec]] = None, seeds: Optional[Sequence[int]] = None) -> InferenceBatch:
        for shard in self.shards:
            ids = shard.env_ids
            shard.envs.vec_reset(
                [tasks[i] for i in ids] if tasks is not None else None,
                [seeds[i] for i in ids] if seeds is not None else None,
            )
            shard.epoch = 0
            shard.crashed.clear()
        return self.gather_observations()

    def gather_observations(self) -> InferenceBatch:
        """
        Raises:
            OrchestratorError: Naming the env id when an env crashed or is missing, else on an epoch mismatch
        """
        entries = sorted((pair for shard in self.shards for pair in shard.observations()), key=lambda p: p[0])
        present = {env_id for env_id, _ in entries}
        for env_id in range(self.num_envs):
            if env_id not in present:
                raise OrchestratorError("missing from observation gather", env_id)
        epochs = {shard.epoch for shard in self.shards}
        if len(epochs) != 1:
            raise OrchestratorError(f"Shards are at different step epochs: {sorted(epochs)}")
        return InferenceBatch(
            env_ids=[env_id for env_id, _ in entries],
            observations=[obs for _, obs in entries],
            epoch=epochs.pop(),
        )

    async def scatter_actions(self, actions: ArrayLike) -> list[StepResult]:
        """Step every shard concurrently and return the results in env id order."""
        batch = np.asarray(actions, dtype=np.float64)
        if batch.size == 0:
            return []
        if batch.shape != (self.num_envs, ACTION_DIMS):
            raise OrchestratorError(f"Got actions of shape {batch.shape} for {self.num_envs} environments")

        def run(shard: WorkerShard) -> list[tuple[int, StepResult]]:
            return shard.step(batch[shard.env_ids])

        per_shard = await self.throttling.submit(self.shards, run)
        return [result for _, result in sorted((pair for results in per_shard for pair in results), key=lambda p: p[0])]

    def state_dict(self) -> dict[str, Any]:
        return {"shards": [shard.envs.state_dict() for shard in self.shards], "epoch": self.shards[0].epoch}

    def load_state_dict(self, state: dict[str, Any], tasks_by_id: dict[int, TaskSpec]) -> None:
        """Restore env states; the saved layout may use a different shard count."""
        by_env: dict[int, tuple[dict[str, Any], int]] = {}
        for shard_state in state["shards"]:
            for index, env_id in enumerate(shard_state["env_ids"]):
                by_env[int(env_id)] = (shard_state, index)
        for shard in self.shards:
            picked = [by_env[env_id] for env_id in shard.env_ids]
            shard.envs.load_state_dict(
                {
                    "env_ids": shard.env_ids,
                    **{key: [s[key][i] for s, i in picked] for key in ("tasks", "states", "rngs", "accumulators")},
                },
                tasks_by_id,
            )
            shard.epoch = int(state["epoch"])
            shard.crashed.clear()
