import numpy as np
import pytest

from vlatrainer.env.expert import expert_action
from vlatrainer.env.vec_env import VecEnv


def _first_task_sampler(suite):
    return lambda rng: suite.tasks[0]


def test_reset_requires_matching_lengths(suite, vocab, sim):
    vec = VecEnv(sim, vocab, [0, 1], master_seed=0, task_sampler=_first_task_sampler(suite))

    with pytest.raises(ValueError):
        vec.vec_reset(tasks=[suite.tasks[0]])


def test_step_rejects_wrong_action_shape(suite, vocab, sim):
    vec = VecEnv(sim, vocab, [0, 1], master_seed=0, task_sampler=_first_task_sampler(suite))
    vec.vec_reset()

    with pytest.raises(ValueError):
        vec.vec_step(np.zeros((3, 7)))


def test_auto_reset_returns_fresh_observation(suite, vocab, sim):
    vec = VecEnv(sim, vocab, [0], master_seed=0, task_sampler=_first_task_sampler(suite))
    vec.vec_reset()
    task = suite.tasks[0]
    result = None
    for _ in range(sim.horizon):
        result = vec.vec_step([expert_action(vec.envs[0].state, task, sim)])[0]
        if result.done:
            break

    assert result is not None and result.done
    assert vec.envs[0].state.step_index == 0
    assert np.array_equal(result.next_obs.features, vec.observations()[0].features)
    assert result.info["episode_length"] > 0


def test_env_streams_do_not_depend_on_grouping(suite, vocab, sim):
    sampler = lambda rng: suite.tasks[int(rng.integers(len(suite.tasks)))]
    together = VecEnv(sim, vocab, [0, 1, 2], master_seed=4, task_sampler=sampler)
    alone = VecEnv(sim, vocab, [2], master_seed=4, task_sampler=sampler)

    together.vec_reset()
    alone.vec_reset()

    assert together.envs[2].state.to_dict() == alone.envs[0].state.to_dict()
    assert together.envs[2].task == alone.envs[0].task


def test_state_round_trip_replays_identically(suite, vocab, sim):
    sampler = lambda rng: suite.tasks[int(rng.integers(len(suite.tasks)))]
    vec = VecEnv(sim, vocab, [0, 1], master_seed=2, task_sampler=sampler)
    vec.vec_reset()
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, size=(30, 2, 7))
    for step in range(10):
        vec.vec_step(actions[step])
    saved = vec.state_dict()
    first = [[r.next_obs.features for r in vec.vec_step(actions[step])] for step in range(10, 30)]

    restored = VecEnv(sim, vocab, [0, 1], master_seed=99, task_sampler=sampler)
    restored.load_state_dict(saved, suite.by_id())
    second = [[r.next_obs.features for r in restored.vec_step(actions[step])] for step in range(10, 30)]

    assert all(np.array_equal(a, b) for row_a, row_b in zip(first, second) for a, b in zip(row_a, row_b))


def test_load_state_rejects_other_env_ids(suite, vocab, sim):
    vec = VecEnv(sim, vocab, [0, 1], master_seed=0, task_sampler=_first_task_sampler(suite))
    vec.vec_reset()

    with pytest.raises(ValueError):
        VecEnv(sim, vocab, [2, 3], master_seed=0).load_state_dict(vec.state_dict(), suite.by_id())
