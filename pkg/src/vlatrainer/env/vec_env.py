import logging
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass
from typing import Any, Optional

import numpy as np
from numpy.typing import ArrayLike

from vlatrainer.env.sim import Observation, SimEnv, StepResult, WorldState
from vlatrainer.model.task import TaskSpec
from vlatrainer.policy.tokenizer import Vocabulary
from vlatrainer.utils.config import SimConfig
from vlatrainer.utils.rng import StreamPurpose, env_stream, generator_state, restore_generator

logger = logging.getLogger(__name__)

TaskSampler = Callable[[np.random.Generator], TaskSpec]


@dataclass
class EpisodeAccumulator:
    """Running totals of the episode in progress on one environment."""

    episode_return: float = 0.0
    length: int = 0
    entropy: float = 0.0


class VecEnv:
    """
    A batch of independent environments with automatic reset.

    Every environment draws its reset tasks and seeds from its own stream keyed by
    the global env id, so results do not depend on how environments are grouped.
    When an episode ends, the returned observation is already the first one of the
    next episode and the `done` flag marks the boundary.
    """

    def __init__(
        self,
        sim: SimConfig,
        vocab: Vocabulary,
        env_ids: Sequence[int],
        master_seed: int,
        task_sampler: Optional[TaskSampler] = None,
    ):
        self.sim = sim
        self.env_ids = list(env_ids)
        self.envs = [SimEnv(sim, vocab) for _ in self.env_ids]
        self.rngs = [env_stream(master_seed, env_id, StreamPurpose.ENV) for env_id in self.env_ids]
        self.task_sampler = task_sampler
        self.accumulators = [EpisodeAccumulator() for _ in self.env_ids]

    def __len__(self) -> int:
        return len(self.envs)

    def set_task_sampler(self, sampler: TaskSampler) -> None:
        self.task_sampler = sampler

    def _sample(self, index: int) -> tuple[TaskSpec, int]:
        if self.task_sampler is None:
            raise RuntimeError("No task sampler installed for auto-reset")
        rng = self.rngs[index]
        task = self.task_sampler(rng)
        return task, int(rng.integers(0, 2**31 - 1))

    def vec_reset(
        self,
        tasks: Optional[Sequence[TaskSpec]] = None,
        seeds: Optional[Sequence[int]] = None,
    ) -> list[Observation]:
        """Reset every environment; tasks and seeds default to draws from the per-env streams."""
        if tasks is not None and len(tasks) != len(self.envs):
            raise ValueError(f"Expected {len(self.envs)} tasks, got {len(tasks)}")
        if seeds is not None and len(seeds) != len(self.envs):
            raise ValueError(f"Expected {len(self.envs)} seeds, got {len(seeds)}")
        observations = []
        for index, env in enumerate(self.envs):
            if tasks is not None and seeds is not None:
                task, seed = tasks[index], seeds[index]
            else:
                sampled_task, sampled_seed = self._sample(index)
                task = tasks[index] if tasks is not None else sampled_task
                seed = seeds[index] if seeds is not None else sampled_seed
            observations.append(env.reset(task, seed))
            self.accumulators[index] = EpisodeAccumulator()
        return observations

    def vec_step(self, actions: ArrayLike) -> list[StepResult]:
        batch = np.asarray(actions, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[0] != len(self.envs):
            raise ValueError(f"Expected {len(self.envs)} actions, got shape {batch.shape}")
        return [self.step_one(index, batch[index]) for index in range(len(self.envs))]

    def step_one(self, index: int, action: ArrayLike) -> StepResult:
        env = self.envs[index]
        result = env.step(action)
        if not result.done:
            return result
        task, seed = self._sample(index)
        reset_obs = env.reset(task, seed)
        return StepResult(next_obs=reset_obs, sparse_reward=result.sparse_reward, done=True, info=result.info)

    def observations(self) -> list[Observation]:
        return [env.observation for env in self.envs]

    def state_dict(self) -> dict[str, Any]:
        return {
            "env_ids": self.env_ids,
            "tasks": [env.task.task_id for env in self.envs],
            "states": [env.state.to_dict() for env in self.envs],
            "rngs": [generator_state(rng) for rng in self.rngs],
            "accumulators": [asdict(acc) for acc in self.accumulators],
        }

    def load_state_dict(self, state: dict[str, Any], tasks_by_id: dict[int, TaskSpec]) -> None:
        if list(state["env_ids"]) != self.env_ids:
            raise ValueError(f"State covers envs {state['env_ids']}, this batch holds {self.env_ids}")
        for index, env in enumerate(self.envs):
            env.restore(tasks_by_id[int(state["tasks"][index])], WorldState.from_dict(state["states"][index]))
            self.rngs[index] = restore_generator(state["rngs"][index])
            self.accumulators[index] = EpisodeAccumulator(**state["accumulators"][index])
