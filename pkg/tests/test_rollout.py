import json

import numpy as np
import pytest

from tests.conftest import TEST_WIDTH, make_collector, randomize
from vlatrainer.errors import NumericError, OrchestratorError
from vlatrainer.model.curriculum import SuccessTracker
from vlatrainer.policy.network import ObservationBatch, PolicyShape
from vlatrainer.services.curriculum_service import CurriculumService
from vlatrainer.services.rollout_service import SOURCE_SFT
from vlatrainer.services.rprm_service import RewardScorer, RprmNetwork


def _params(network, seed=1):
    params = network.init_params(np.random.default_rng(0))
    randomize(params, np.random.default_rng(seed))
    return params


async def _collect(collector, params, steps=10, temperature=1.0):
    collector.reset()
    collector.engine.broadcast_weights(params)
    return await collector.collect(steps, temperature, 0)


async def test_single_env_single_step(suite, vocab, sim, network):
    collector = make_collector(suite, vocab, sim, network, num_envs=1, num_shards=1)

    buffer = await _collect(collector, _params(network), steps=1)

    assert len(buffer) == 1
    assert buffer.features.shape == (1, 1, 28)
    assert buffer.bins.shape == (1, 1, 7)
    assert not buffer.dones.any()
    assert buffer.bootstrap_values.shape == (1,)


async def test_replay_is_deterministic(suite, vocab, sim, network):
    params = _params(network)

    first = await _collect(make_collector(suite, vocab, sim, network, seed=5), params, steps=20)
    second = await _collect(make_collector(suite, vocab, sim, network, seed=5), params, steps=20)
    other = await _collect(make_collector(suite, vocab, sim, network, seed=6), params, steps=20)

    assert first.same_as(second)
    assert not first.same_as(other)


async def test_log_probs_match_teacher_forcing(suite, vocab, sim, network):
    params = _params(network)
    buffer = await _collect(make_collector(suite, vocab, sim, network), params)

    batch = ObservationBatch.from_arrays(buffer.flat("features"), buffer.flat("instruction"), network.shape)
    recomputed = network.token_log_probs(params, batch, buffer.flat("bins")).sum(axis=1)

    np.testing.assert_allclose(recomputed, buffer.flat("log_probs"), atol=1e-9)


async def test_zero_beta_rewards_equal_sparse(suite, vocab, sim, network):
    rprm = RprmNetwork(PolicyShape.for_vocab(vocab, width=TEST_WIDTH))
    scorer = RewardScorer(rprm, rprm.init_params(np.random.default_rng(0)), 0.0)
    collector = make_collector(suite, vocab, sim, network, scorer=scorer)

    buffer = await _collect(collector, _params(network), steps=sim.horizon + 2)

    assert np.array_equal(buffer.rewards, buffer.sparse_rewards)
    assert buffer.dones[sim.horizon].all()


async def test_dense_rewards_add_scaled_scores(suite, vocab, sim, network):
    rprm = RprmNetwork(PolicyShape.for_vocab(vocab, width=TEST_WIDTH))
    scorer = RewardScorer(rprm, rprm.init_params(np.random.default_rng(0)), 0.1)
    collector = make_collector(suite, vocab, sim, network, scorer=scorer)

    buffer = await _collect(collector, _params(network), steps=3)

    np.testing.assert_allclose(buffer.rewards, buffer.sparse_rewards + 0.05)


async def test_truncated_episodes_are_recorded_and_fed_to_curriculum(suite, vocab, sim, network):
    tracker = SuccessTracker.for_tasks([task.task_id for task in suite.tasks])
    curriculum = CurriculumService(tracker, suite.tasks)
    collector = make_collector(suite, vocab, sim, network, num_envs=2, curriculum=curriculum)

    buffer = await _collect(collector, network.init_params(np.random.default_rng(0)), steps=sim.horizon)

    assert len(buffer.episodes) == 2
    assert all(episode.length == sim.horizon for episode in buffer.episodes)
    assert buffer.next_done.all()
    assert sum(tracker.counts.values()) == 2


async def test_coverage_sampling_and_source(suite, vocab, sim, network):
    collector = make_collector(suite, vocab, sim, network, num_envs=4)
    collector.reset()
    collector.engine.broadcast_weights(_params(network))

    buffer = await collector.collect(4, 1.0, 0, SOURCE_SFT)

    assert len(buffer.coverage) == 4
    assert {record.source for record in buffer.coverage} == {SOURCE_SFT}
    assert collector.transitions_seen == 16


async def test_collector_state_resumes_identically(suite, vocab, sim, network):
    params = _params(network)
    collector = make_collector(suite, vocab, sim, network, seed=2)
    await _collect(collector, params, steps=7)
    saved = (collector.state_dict(), collector.pool.state_dict())
    expected = await collector.collect(9, 1.0, 1)

    fresh = make_collector(suite, vocab, sim, network, seed=2)
    fresh.pool.load_state_dict(saved[1], suite.by_id())
    fresh.load_state_dict(json.loads(json.dumps(saved[0])))
    fresh.engine.broadcast_weights(params)

    assert (await fresh.collect(9, 1.0, 1)).same_as(expected)


async def test_non_finite_reward_aborts_with_dump(suite, vocab, sim, network, tmp_path, mocker):
    rprm = RprmNetwork(PolicyShape.for_vocab(vocab, width=TEST_WIDTH))
    scorer = RewardScorer(rprm, rprm.init_params(np.random.default_rng(0)), 0.1)
    mocker.patch.object(scorer, "scores", return_value=np.array([0.0, np.nan, 0.0, 0.0]))
    collector = make_collector(suite, vocab, sim, network, scorer=scorer)
    collector.dump_path = tmp_path / "dump.json"

    with pytest.raises(NumericError):
        await _collect(collector, _params(network), steps=2)

    assert json.loads(collector.dump_path.read_text())["envs"] == [1]
    with collector.engine.rollout_phase():
        pass


async def test_collect_needs_weights(suite, vocab, sim, network):
    collector = make_collector(suite, vocab, sim, network)
    collector.reset()

    with pytest.raises(OrchestratorError):
        await collector.collect(1, 1.0, 0)
