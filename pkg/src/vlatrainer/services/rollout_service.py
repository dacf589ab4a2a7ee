"""
Rollout phase: step every environment M times under a pinned weight snapshot.

Each step gathers observations in env id order, decodes all of them in one batch
(row i drawing only from env i's decode stream), scatters the actions to the shards,
scores (o_t, a_t) with the frozen reward model and records the densified reward.
"""
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from numpy.typing import NDArray

from vlatrainer.env.sim import StepResult
from vlatrainer.errors import NumericError
from vlatrainer.model.metrics import CoverageRecord, WallTimes
from vlatrainer.orchestrator.inference import InferenceEngine
from vlatrainer.orchestrator.shards import InferenceBatch, ShardPool
from vlatrainer.policy.network import ObservationBatch
from vlatrainer.policy.tokenizer import bins_to_action
from vlatrainer.services.curriculum_service import CurriculumService
from vlatrainer.services.rprm_service import RewardScorer
from vlatrainer.utils.rng import StreamPurpose, env_stream, generator_state, restore_generator

logger = logging.getLogger(__name__)

SOURCE_SFT = "sft"
SOURCE_RL = "rl"


@dataclass(frozen=True)
class EpisodeStat:
    task_id: int
    success: bool
    length: int
    episode_return: float
    entropy: float


@dataclass
class RolloutBuffer:
    """
    Rectangular M x N rollout; `dones[t, n]` marks that obs_t of env n opened a new episode.

    `next_done` and `bootstrap_values` describe the observation after the last step.
    """

    features: NDArray[np.float64]
    instruction: NDArray[np.int64]
    bins: NDArray[np.int64]
    actions: NDArray[np.float64]
    log_probs: NDArray[np.float64]
    values: NDArray[np.float64]
    rewards: NDArray[np.float64]
    sparse_rewards: NDArray[np.float64]
    dones: NDArray[np.bool_]
    entropy: NDArray[np.float64]
    next_done: NDArray[np.bool_]
    bootstrap_values: NDArray[np.float64]
    episodes: list[EpisodeStat] = field(default_factory=list)
    coverage: list[CoverageRecord] = field(default_factory=list)
    wall_times: WallTimes = field(default_factory=WallTimes)

    @classmethod
    def empty(cls, num_steps: int, num_envs: int, feature_dim: int, instruction_length: int, action_steps: int) -> "RolloutBuffer":
        shape = (num_steps, num_envs)
        return cls(
            features=np.zeros((*shape, feature_dim)),
            instruction=np.zeros((*shape, instruction_length), dtype=np.int64),
            bins=np.zeros((*shape, action_steps), dtype=np.int64),
            actions=np.zeros((*shape, action_steps)),
            log_probs=np.zeros(shape),
            values=np.zeros(shape),
            rewards=np.zeros(shape),
            sparse_rewards=np.zeros(shape),
            dones=np.zeros(shape, dtype=bool),
            entropy=np.zeros(shape),
            next_done=np.zeros(num_envs, dtype=bool),
            bootstrap_values=np.zeros(num_envs),
        )

    @property
    def num_steps(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def num_envs(self) -> int:
        return int(self.rewards.shape[1])

    def __len__(self) -> int:
        return self.num_steps * self.num_envs

    def flat(self, name: str) -> NDArray[Any]:
        """Field `name` with the step and env axes merged, row index t * N + n."""
        array: NDArray[Any] = getattr(self, name)
        return array.reshape(len(self), *array.shape[2:])

    def same_as(self, other: "RolloutBuffer") -> bool:
        """Bitwise equality of every recorded array and episode."""
        names = ("features", "instruction", "bins", "actions", "log_probs", "values", "rewards",
                 "sparse_rewards", "dones", "entropy", "next_done", "bootstrap_values")
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names) and self.episodes == other.episodes

    def outcomes(self) -> list[tuple[int, bool]]:
        return [(episode.task_id, episode.success) for episode in self.episodes]


class RolloutCollector:
    """
    Drives the shard pool through rollout phases.

    Between phases the collector keeps the per-env decode streams, the pending
    done flags and the coverage counter; `state_dict` captures all of it.
    """

    def __init__(
        self,
        pool: ShardPool,
        engine: InferenceEngine,
        master_seed: int,
        scorer: Optional[RewardScorer] = None,
        curriculum: Optional[CurriculumService] = None,
        coverage_stride: int = 8,
        dump_path: Optional[Path] = None,
    ):
        self.pool = pool
        self.engine = engine
        self.scorer = scorer
        self.curriculum = curriculum
        self.coverage_stride = coverage_stride
        self.dump_path = dump_path
        self.decode_rngs = [env_stream(master_seed, env_id, StreamPurpose.DECODE) for env_id in range(pool.num_envs)]
        self.next_done = np.zeros(pool.num_envs, dtype=bool)
        self.transitions_seen = 0

    def _install_sampler(self) -> None:
        if self.curriculum is not None:
            self.pool.set_task_sampler(self.curriculum.snapshot_sampler())

    def reset(self) -> InferenceBatch:
        """Start fresh episodes everywhere, drawing tasks from the curriculum."""
        self._install_sampler()
        self.next_done = np.zeros(self.pool.num_envs, dtype=bool)
        return self.pool.vec_reset()

    def _abort(self, step: int, rows: NDArray[np.int64], what: str) -> None:
        message = f"Non-finite {what} at rollout step {step} for envs {rows.tolist()}"
        logger.error(message)
        if self.dump_path is not None:
            self.dump_path.parent.mkdir(parents=True, exist_ok=True)
            payload = {"step": step, "envs": rows.tolist(), "what": what, "pool": self.pool.state_dict()}
            self.dump_path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
            logger.error(f"Wrote rollout state dump to {self.dump_path}")
        raise NumericError(message)

    def _scores(self, batch: InferenceBatch, bins: NDArray[np.int64]) -> NDArray[np.float64]:
        if self.scorer is None:
            return np.zeros(len(batch))
        observations = ObservationBatch.stack(batch.observations, self.scorer.network.shape)
        return self.scorer.scores(observations, bins)

    def _densify(self, sparse: NDArray[np.float64], scores: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.scorer is None:
            return sparse.copy()
        return self.scorer.densify(sparse, scores)

    async def collect(self, num_steps: int, temperature: float, iteration: int, source: str = SOURCE_RL) -> RolloutBuffer:
        """
        Collect `num_steps` transitions from every environment with the current snapshot.

        Finished episodes are handed to the curriculum only after the phase, in
        (step, env) order, so the task sampler stays fixed while the phase runs.

        Raises:
            NumericError: On a non-finite log-prob, value or reward
        """
        if num_steps < 1:
            raise ValueError(f"Need at least one rollout step, got {num_steps}")
        self._install_sampler()
        network = self.engine.network
        shape = network.shape
        buffer = RolloutBuffer.empty(num_steps, self.pool.num_envs, shape.feature_dim, shape.instruction_length, shape.action_steps)
        env_time = inference_time = 0.0

        with self.engine.rollout_phase() as snapshot:
            for step in range(num_steps):
                batch = self.pool.gather_observations()
                started = time.perf_counter()
                decoded = self.engine.batched_decode(batch, temperature, self.decode_rngs, snapshot)
                inference_time += time.perf_counter() - started
                bad = np.flatnonzero(~np.isfinite(decoded.log_probs).all(axis=1) | ~np.isfinite(decoded.values))
                if bad.size:
                    self._abort(step, bad, "log-prob or value")

                actions = bins_to_action(decoded.bins)
                started = time.perf_counter()
                results = await self.pool.scatter_actions(actions)
                env_time += time.perf_counter() - started

                started = time.perf_counter()
                scores = self._scores(batch, decoded.bins)
                inference_time += time.perf_counter() - started
                sparse = np.array([result.sparse_reward for result in results], dtype=np.float64)
                rewards = self._densify(sparse, scores)
                bad = np.flatnonzero(~np.isfinite(rewards))
                if bad.size:
                    self._abort(step, bad, "reward")

                buffer.features[step] = np.stack([obs.features for obs in batch.observations])
                buffer.instruction[step] = np.stack([obs.instruction_tokens for obs in batch.observations])
                buffer.bins[step] = decoded.bins
                buffer.actions[step] = actions
                buffer.log_probs[step] = decoded.log_probs.sum(axis=1)
                buffer.values[step] = decoded.values
                buffer.rewards[step] = rewards
                buffer.sparse_rewards[step] = sparse
                buffer.dones[step] = self.next_done
                buffer.entropy[step] = decoded.entropy
                self._record(buffer, step, results, iteration, source)

            batch = self.pool.gather_observations()
            started = time.perf_counter()
            buffer.bootstrap_values = self.engine.values(batch, snapshot)
            inference_time += time.perf_counter() - started
            buffer.next_done = self.next_done.copy()

        if self.curriculum is not None:
            self.curriculum.apply(buffer.outcomes())
        buffer.wall_times = WallTimes(env=env_time, inference=inference_time)
        logger.debug(f"Collected {len(buffer)} transitions, {len(buffer.episodes)} finished episodes")
        return buffer

    def _record(self, buffer: RolloutBuffer, step: int, results: list[StepResult], iteration: int, source: str) -> None:
        accumulators = self.pool.accumulators()
        for env_id, result in enumerate(results):
            acc = accumulators[env_id]
            acc.episode_return += float(buffer.rewards[step, env_id])
            acc.length += 1
            acc.entropy += float(buffer.entropy[step, env_id])
            if self.transitions_seen % self.coverage_stride == 0:
                buffer.coverage.append(CoverageRecord(
                    source=source,
                    iter=iteration,
                    dx=float(buffer.actions[step, env_id, 0]),
                    dy=float(buffer.actions[step, env_id, 1]),
                ))
            self.transitions_seen += 1
            self.next_done[env_id] = result.done
            if result.done:
                buffer.episodes.append(EpisodeStat(
                    task_id=int(result.info["task_id"]),
                    success=bool(result.info["success"]),
                    length=acc.length,
                    episode_return=acc.episode_return,
                    entropy=acc.entropy / acc.length,
                ))
                acc.episode_return, acc.length, acc.entropy = 0.0, 0, 0.0

    def state_dict(self) -> dict[str, Any]:
        return {
            "decode_rngs": [generator_state(rng) for rng in self.decode_rngs],
            "next_done": [bool(flag) for flag in self.next_done],
            "transitions_seen": self.transitions_seen,
        }

    def load_state_dict(self, state: dict[str, Any]) -> None:
        if len(state["decode_rngs"]) != self.pool.num_envs:
            raise ValueError(f"State holds {len(state['decode_rngs'])} decode streams for {self.pool.num_envs} envs")
        self.decode_rngs = [restore_generator(raw) for raw in state["decode_rngs"]]
        self.next_done = np.asarray(state["next_done"], dtype=bool)
        self.transitions_seen = int(state["transitions_seen"])

