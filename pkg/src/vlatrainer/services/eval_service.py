"""
Success-rate evaluation with greedy decoding.

Episodes of a suite are run in lockstep batches: every step, the observations of
the still-running episodes are decoded in one pass and the environments are stepped
on worker threads.
"""
import hashlib
import json
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from vlatrainer.env.expert import expert_action
from vlatrainer.env.sim import SimEnv, StepResult
from vlatrainer.model.report import EvalReport, SuccessStat, TaskResult
from vlatrainer.model.task import Suite, TaskSpec
from vlatrainer.model.trajectory import Episode, TrajectoryDataset
from vlatrainer.nn.params import ParamStore
from vlatrainer.policy.network import PolicyNetwork
from vlatrainer.policy.tokenizer import Vocabulary, bins_to_action, encode_action
from vlatrainer.utils.config import SimConfig
from vlatrainer.utils.rng import derive_seed
from vlatrainer.utils.throttling import Throttling

logger = logging.getLogger(__name__)

WILSON_Z = 1.959963984540054
# Key separating evaluation seeds from demonstration seeds.
EVAL_SEED_KEY = 7

# Picks actions and action tokens for a batch of running environments.
BatchActor = Callable[[Sequence[SimEnv]], tuple[NDArray[np.float64], NDArray[np.int64]]]


def wilson_interval(successes: int, episodes: int, z: float = WILSON_Z) -> tuple[float, float]:
    """
    Wilson score interval for a binomial proportion.

    Example:
        >>> wilson_interval(0, 10)
        (0.0, 0.27753...)
    """
    if episodes <= 0:
        return 0.0, 1.0
    p = successes / episodes
    denom = 1.0 + z * z / episodes
    center = (p + z * z / (2 * episodes)) / denom
    half = z * math.sqrt(p * (1.0 - p) / episodes + z * z / (4 * episodes * episodes)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def success_stat(successes: int, episodes: int) -> SuccessStat:
    low, high = wilson_interval(successes, episodes)
    rate = successes / episodes if episodes else 0.0
    return SuccessStat(episodes=episodes, successes=successes, success_rate=rate, ci_low=low, ci_high=high)


def eval_seeds(master_seed: int, task_id: int, episodes: int) -> list[int]:
    return [derive_seed(master_seed, EVAL_SEED_KEY, task_id, index) for index in range(episodes)]


def policy_actor(network: PolicyNetwork, params: ParamStore) -> BatchActor:
    """Greedy decoding of the whole batch in one pass."""
    frozen = params.frozen_copy()
    unused = [np.random.default_rng(0)]

    def act(envs: Sequence[SimEnv]) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
        batch = network.batch([env.observation for env in envs])
        decoded = network.decode(frozen, batch, 0.0, unused * len(envs))
        return bins_to_action(decoded.bins), network.token_base + decoded.bins

    return act


def expert_batch_actor(sim: SimConfig, vocab: Vocabulary) -> BatchActor:
    def act(envs: Sequence[SimEnv]) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
        actions = np.stack([expert_action(env.state, env.task, sim) for env in envs])
        return actions, np.stack([encode_action(action, vocab) for action in actions])

    return act


@dataclass
class _EpisodeLog:
    task: TaskSpec
    seed: int
    env: SimEnv
    rows: dict[str, list[NDArray[np.float64]]]
    success: bool = False
    done: bool = False

    def to_episode(self) -> Episode:
        return Episode(
            task_id=self.task.task_id,
            seed=self.seed,
            success=self.success,
            suite_id=str(self.task.suite_id),
            features=np.stack(self.rows["features"]),
            instruction=self.env.observation.instruction_tokens.copy(),
            actions=np.stack(self.rows["actions"]),
            tokens=np.stack(self.rows["tokens"]).astype(np.int64),
            gripper_open=np.asarray(self.rows["open"]),
            gripper_pos=np.stack(self.rows["pos"]),
            sparse_reward=np.asarray(self.rows["reward"]),
            done=np.asarray(self.rows["done"], dtype=bool),
        )


class EvalService:

    def __init__(self, sim: SimConfig, vocab: Vocabulary, batch_size: int = 16, throttling: Optional[Throttling] = None):
        self.sim = sim
        self.vocab = vocab
        self.batch_size = batch_size
        self.throttling = throttling or Throttling(4)

    async def run_episodes(self, jobs: Sequence[tuple[TaskSpec, int]], actor: BatchActor) -> list[Episode]:
        """Run every (task, seed) job to termination; episodes come back in job order."""
        episodes: list[Episode] = []
        for start in range(0, len(jobs), self.batch_size):
            logs = []
            for task, seed in jobs[start:start + self.batch_size]:
                env = SimEnv(self.sim, self.vocab)
                env.reset(task, seed)
                logs.append(_EpisodeLog(task, seed, env, {k: [] for k in ("features", "actions", "tokens", "open", "pos", "reward", "done")}))
            while True:
                running = [log for log in logs if not log.done]
                if not running:
                    break
                actions, tokens = actor([log.env for log in running])
                for log, action, token_ids in zip(running, actions, tokens):
                    state = log.env.state
                    log.rows["features"].append(log.env.observation.features)
                    log.rows["actions"].append(np.asarray(action, dtype=np.float64))
                    log.rows["tokens"].append(np.asarray(token_ids))
                    log.rows["open"].append(np.float64(state.gripper_open))
                    log.rows["pos"].append(state.gripper_pos.copy())

                def step(pair: tuple[_EpisodeLog, NDArray[np.float64]]) -> StepResult:
                    return pair[0].env.step(pair[1])

                results = await self.throttling.submit(list(zip(running, actions)), step)
                for log, result in zip(running, results):
                    log.rows["reward"].append(np.float64(result.sparse_reward))
                    log.rows["done"].append(np.bool_(result.done))
                    log.done = result.done
                    log.success = bool(result.info["success"])
            episodes.extend(log.to_episode() for log in logs)
        return episodes

    async def evaluate(
        self,
        actor: BatchActor,
        suite: Suite,
        episodes_per_task: int,
        seed: int,
        policy_name: str,
        tag: str,
    ) -> tuple[EvalReport, TrajectoryDataset]:
        """
        Evaluate `actor` on every task of `suite`.

        Returns:
            (report, successful episodes) with Wilson 95% intervals per task, suite and overall
        """
        seeds = {task.task_id: eval_seeds(seed, task.task_id, episodes_per_task) for task in suite.tasks}
        jobs = [(task, episode_seed) for task in suite.tasks for episode_seed in seeds[task.task_id]]
        logger.info(f"Evaluating {policy_name} on {len(suite.tasks)} tasks x {episodes_per_task} episodes")
        episodes = await self.run_episodes(jobs, actor)

        results = []
        per_suite: dict[str, list[int]] = {}
        for task in suite.tasks:
            mine = [e for e in episodes if e.task_id == task.task_id]
            successes = [e for e in mine if e.success]
            stat = success_stat(len(successes), len(mine))
            results.append(TaskResult(
                **stat.model_dump(),
                task_id=task.task_id,
                suite_id=str(task.suite_id),
                instruction=task.instruction,
                mean_success_len=float(np.mean([len(e) for e in successes])) if successes else None,
            ))
            counts = per_suite.setdefault(str(task.suite_id), [0, 0])
            counts[0] += len(successes)
            counts[1] += len(mine)

        total_successes = sum(r.successes for r in results)
        report = EvalReport(
            policy=policy_name,
            tag=tag,
            episodes_per_task=episodes_per_task,
            seeds_digest=hashlib.sha256(json.dumps(seeds, sort_keys=True).encode("utf-8")).hexdigest(),
            tasks=results,
            suites={suite_id: success_stat(s, n) for suite_id, (s, n) in sorted(per_suite.items())},
            overall=success_stat(total_successes, len(episodes)),
        )
        logger.info(f"✓ Overall success {report.overall.success_rate:.3f} over {len(episodes)} episodes")
        return report, TrajectoryDataset([e for e in episodes if e.success])
