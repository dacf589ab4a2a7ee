import numpy as np
import pytest

from vlatrainer.env.expert import expert_action
from vlatrainer.env.sim import FEATURE_DIM, SimEnv, WorldState, initial_state, transition
from vlatrainer.env.suite import make_suite
from vlatrainer.errors import ConfigError
from vlatrainer.model.task import SuiteId
from vlatrainer.policy.tokenizer import Vocabulary
from vlatrainer.utils.config import SuiteConfig


def _run_expert(env: SimEnv, task, seed: int, sim) -> tuple[bool, int]:
    env.reset(task, seed)
    while True:
        result = env.step(expert_action(env.state, task, sim))
        if result.done:
            return result.info["success"], result.info["episode_length"]


def test_feature_layout(suite, vocab, sim):
    env = SimEnv(sim, vocab)

    obs = env.reset(suite.tasks[0], 0)

    assert FEATURE_DIM == 28
    assert obs.features.shape == (FEATURE_DIM,)
    assert obs.instruction_tokens.shape == (vocab.instruction_length,)


def test_initial_state_is_determined_by_task_and_seed(suite, sim):
    task = suite.tasks[0]

    a = initial_state(task, 11, sim)
    b = initial_state(task, 11, sim)
    c = initial_state(task, 12, sim)

    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != c.to_dict()


def test_world_state_dict_round_trip(suite, sim):
    state = initial_state(suite.tasks[-1], 5, sim)

    assert WorldState.from_dict(state.to_dict()).to_dict() == state.to_dict()


def test_expert_solves_almost_every_episode(sim):
    suite = make_suite(SuiteConfig(tasks_per_suite=10), master_seed=1, region_radius=sim.region_radius)
    env = SimEnv(sim, Vocabulary.from_instructions(suite.instructions()))
    outcomes = []
    for seed in range(1000):
        task = suite.tasks[seed % len(suite.tasks)]
        success, length = _run_expert(env, task, seed, sim)
        outcomes.append(success)
        assert length <= sim.horizon

    assert np.mean(outcomes) >= 0.99


def test_success_gives_sparse_reward_once(suite, vocab, sim):
    env = SimEnv(sim, vocab)
    task = suite.tasks[0]
    env.reset(task, 3)
    rewards = []
    while True:
        result = env.step(expert_action(env.state, task, sim))
        rewards.append(result.sparse_reward)
        if result.done:
            break

    assert rewards[-1] == 1.0
    assert sum(rewards) == 1.0
    assert result.info["truncated"] is False


def test_idle_policy_truncates_at_horizon(suite, vocab, sim):
    env = SimEnv(sim, vocab)
    env.reset(suite.tasks[0], 0)
    result = None
    for _ in range(sim.horizon):
        result = env.step(np.array([0, 0, 0, 0, 0, 0, -1.0]))

    assert result is not None
    assert result.done
    assert result.info["truncated"]
    assert result.sparse_reward == 0.0


def test_transition_after_done_raises(suite, sim):
    task = suite.tasks[0]
    state = initial_state(task, 0, sim)
    state.done = True

    with pytest.raises(RuntimeError):
        transition(state, np.zeros(7), task, sim)


def test_transition_does_not_mutate_input(suite, sim):
    task = suite.tasks[0]
    state = initial_state(task, 0, sim)
    before = state.to_dict()

    transition(state, np.ones(7), task, sim)

    assert state.to_dict() == before


def test_gripper_stays_in_workspace(suite, sim):
    task = suite.tasks[0]
    state = initial_state(task, 0, sim)
    for _ in range(40):
        state = transition(state, np.array([1, 1, 1, 0, 0, 0, -1.0]), task, sim)

    assert np.all(np.abs(state.gripper_pos) <= sim.workspace)


def test_suite_ids_are_global_and_long_tasks_chain(sim):
    suite = make_suite(SuiteConfig(tasks_per_suite=3), master_seed=0, region_radius=sim.region_radius)

    assert [task.task_id for task in suite.tasks] == list(range(12))
    assert all(len(task.stages) == 2 for task in suite.tasks if task.suite_id == SuiteId.LONG)
    assert make_suite(SuiteConfig(tasks_per_suite=3), 0, sim.region_radius) == suite


def test_suite_too_large():
    with pytest.raises(ConfigError):
        make_suite(SuiteConfig(tasks_per_suite=10_000), master_seed=0, region_radius=0.12)
