import logging
from collections.abc import Callable

import numpy as np

from vlatrainer.env.expert import expert_action
from vlatrainer.env.sim import Observation, SimEnv, WorldState
from vlatrainer.model.dataset import DatasetManifest
from vlatrainer.model.task import Suite, TaskSpec
from vlatrainer.model.trajectory import Episode, TrajectoryDataset
from vlatrainer.policy.tokenizer import ActionVector, Vocabulary, encode_action
from vlatrainer.utils.config import SimConfig
from vlatrainer.utils.rng import StreamPurpose, derive_seed

logger = logging.getLogger(__name__)

# Chooses the next action from the current state and observation.
Actor = Callable[[WorldState, Observation], ActionVector]


def rollout_episode(env: SimEnv, task: TaskSpec, seed: int, actor: Actor, vocab: Vocabulary) -> Episode:
    """Run one episode to termination and log every step."""
    obs = env.reset(task, seed)
    rows: dict[str, list[np.ndarray]] = {k: [] for k in ("features", "actions", "tokens", "open", "pos", "reward", "done")}
    done = False
    success = False
    while not done:
        state = env.state
        action = actor(state, obs)
        result = env.step(action)
        rows["features"].append(obs.features)
        rows["actions"].append(np.asarray(action, dtype=np.float64))
        rows["tokens"].append(encode_action(action, vocab))
        rows["open"].append(np.float64(state.gripper_open))
        rows["pos"].append(state.gripper_pos.copy())
        rows["reward"].append(np.float64(result.sparse_reward))
        rows["done"].append(np.bool_(result.done))
        obs, done, success = result.next_obs, result.done, result.info["success"]
    return Episode(
        task_id=task.task_id,
        seed=seed,
        success=success,
        suite_id=str(task.suite_id),
        features=np.stack(rows["features"]),
        instruction=env.observation.instruction_tokens.copy(),
        actions=np.stack(rows["actions"]),
        tokens=np.stack(rows["tokens"]),
        gripper_open=np.asarray(rows["open"]),
        gripper_pos=np.stack(rows["pos"]),
        sparse_reward=np.asarray(rows["reward"]),
        done=np.asarray(rows["done"], dtype=bool),
    )


def expert_actor(env: SimEnv, sim: SimConfig) -> Actor:
    return lambda state, _obs: expert_action(state, env.task, sim)


class DemoService:

    def __init__(self, sim: SimConfig, vocab: Vocabulary, failure_warning: float = 0.05):
        self.sim = sim
        self.vocab = vocab
        self.failure_warning = failure_warning

    def generate_demos(self, suite: Suite, episodes_per_task: int, seed: int) -> tuple[TrajectoryDataset, DatasetManifest]:
        """
        Roll out the scripted expert and keep only successful episodes.

        Episode seeds derive from (seed, task id, episode index), so the dataset is a
        pure function of its arguments. Tasks whose expert failure rate exceeds the
        warning threshold are listed in the manifest warnings.
        """
        env = SimEnv(self.sim, self.vocab)
        actor = expert_actor(env, self.sim)
        dataset = TrajectoryDataset()
        seeds: list[int] = []
        warnings: list[str] = []
        per_task: dict[int, float] = {}
        attempted = 0
        for task in suite.tasks:
            successes = 0
            for index in range(episodes_per_task):
                episode_seed = derive_seed(seed, int(StreamPurpose.DATA), task.task_id, index)
                episode = rollout_episode(env, task, episode_seed, actor, self.vocab)
                attempted += 1
                if episode.success:
                    successes += 1
                    dataset.episodes.append(episode)
                    seeds.append(episode_seed)
            if episodes_per_task:
                rate = successes / episodes_per_task
                per_task[task.task_id] = rate
                if 1.0 - rate > self.failure_warning:
                    message = f"task {task.task_id}: expert failed {episodes_per_task - successes}/{episodes_per_task} episodes"
                    logger.warning(message)
                    warnings.append(message)

        manifest = DatasetManifest(
            kind="demos",
            count=len(dataset),
            attempted=attempted,
            episodes_per_task=episodes_per_task,
            seeds=seeds,
            per_task_success_rate=per_task,
            digest=dataset.digest(),
            warnings=warnings,
        )
        logger.info(f"✓ Generated {len(dataset)} demonstrations ({dataset.num_steps} steps) from {attempted} attempts")
        return dataset, manifest
