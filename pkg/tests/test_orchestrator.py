import numpy as np
import pytest

from tests.conftest import make_collector, randomize
from vlatrainer.errors import OrchestratorError
from vlatrainer.orchestrator.inference import InferenceEngine
from vlatrainer.orchestrator.shards import ShardPool


def _pool(suite, vocab, sim, num_envs=4, num_shards=2, seed=0):
    sampler = lambda rng: suite.tasks[int(rng.integers(len(suite.tasks)))]
    pool = ShardPool.build(sim, vocab, num_envs, num_shards, seed, max_worker_threads=2, task_sampler=sampler)
    pool.vec_reset()
    return pool


def _params(network, seed=1):
    params = network.init_params(np.random.default_rng(0))
    randomize(params, np.random.default_rng(seed))
    return params


@pytest.mark.parametrize("num_shards", [1, 2, 4])
async def test_rollouts_do_not_depend_on_shard_count(suite, vocab, sim, network, num_shards):
    params = _params(network)

    async def rollout(shards):
        collector = make_collector(suite, vocab, sim, network, num_envs=4, num_shards=shards, seed=3)
        collector.reset()
        collector.engine.broadcast_weights(params)
        return await collector.collect(12, 1.5, 0)

    assert (await rollout(num_shards)).same_as(await rollout(1))


async def test_batched_decode_matches_per_env_decode(suite, vocab, sim, network):
    params = _params(network, seed=2)
    pool = _pool(suite, vocab, sim, num_envs=16, num_shards=4)
    engine = InferenceEngine(network)
    engine.broadcast_weights(params)
    batch = pool.gather_observations()

    batched = engine.batched_decode(batch, 1.5, [np.random.default_rng(i) for i in range(16)])

    for i, obs in enumerate(batch.observations):
        tokens, _ = network.sample_action_tokens(params, obs, 1.5, np.random.default_rng(i))
        assert np.array_equal(tokens - network.token_base, batched.bins[i])


async def test_results_come_back_in_env_order(suite, vocab, sim):
    pool = _pool(suite, vocab, sim, num_envs=5, num_shards=3)

    results = await pool.scatter_actions(np.zeros((5, 7)))

    batch = pool.gather_observations()
    assert batch.env_ids == [0, 1, 2, 3, 4]
    assert batch.epoch == 1
    for result, obs in zip(results, batch.observations):
        assert np.array_equal(result.next_obs.features, obs.features)


async def test_empty_scatter_is_a_no_op(suite, vocab, sim):
    pool = _pool(suite, vocab, sim)

    assert await pool.scatter_actions(np.zeros((0, 7))) == []
    assert pool.gather_observations().epoch == 0


async def test_scatter_rejects_wrong_shape(suite, vocab, sim):
    pool = _pool(suite, vocab, sim)

    with pytest.raises(OrchestratorError):
        await pool.scatter_actions(np.zeros((3, 7)))


def test_gather_detects_epoch_mismatch(suite, vocab, sim):
    pool = _pool(suite, vocab, sim)
    pool.shards[1].epoch = 5

    with pytest.raises(OrchestratorError):
        pool.gather_observations()


def test_gather_detects_missing_env(suite, vocab, sim):
    pool = _pool(suite, vocab, sim)
    pool.shards[0].crashed.add(1)

    with pytest.raises(OrchestratorError) as error:
        pool.gather_observations()

    assert error.value.env_id == 1


async def test_crashing_env_is_reported(suite, vocab, sim, mocker):
    pool = _pool(suite, vocab, sim)
    mocker.patch.object(pool.shards[1].envs, "step_one", side_effect=RuntimeError("boom"))

    with pytest.raises(OrchestratorError) as error:
        await pool.scatter_actions(np.zeros((4, 7)))

    assert error.value.env_id == 2


async def test_gather_after_crash_names_env(suite, vocab, sim, mocker):
    pool = _pool(suite, vocab, sim)
    mocker.patch.object(pool.shards[1].envs, "step_one", side_effect=RuntimeError("boom"))
    with pytest.raises(OrchestratorError):
        await pool.scatter_actions(np.zeros((4, 7)))

    assert {shard.epoch for shard in pool.shards} == {0, 1}
    with pytest.raises(OrchestratorError) as error:
        pool.gather_observations()

    assert error.value.env_id == 2


def test_shard_bounds(suite, vocab, sim):
    with pytest.raises(ValueError):
        ShardPool.build(sim, vocab, 2, 3, 0, max_worker_threads=1)


def test_pool_state_restores_into_other_layout(suite, vocab, sim):
    pool = _pool(suite, vocab, sim, num_envs=4, num_shards=2, seed=1)
    other = _pool(suite, vocab, sim, num_envs=4, num_shards=4, seed=8)

    other.load_state_dict(pool.state_dict(), suite.by_id())

    left, right = pool.gather_observations(), other.gather_observations()
    assert all(np.array_equal(a.features, b.features) for a, b in zip(left.observations, right.observations))


def test_weight_versions_and_phase_guard(network):
    engine = InferenceEngine(network)
    params = network.init_params(np.random.default_rng(0))

    with pytest.raises(OrchestratorError):
        with engine.rollout_phase():
            pass

    first = engine.broadcast_weights(params)
    second = engine.broadcast_weights(params)
    assert (first.version, second.version) == (1, 2)

    with engine.rollout_phase() as snapshot:
        assert snapshot.version == 2
        with pytest.raises(OrchestratorError):
            engine.broadcast_weights(params)
    assert engine.broadcast_weights(params).version == 3


def test_snapshot_is_isolated_from_learner(network):
    engine = InferenceEngine(network)
    params = network.init_params(np.random.default_rng(0))
    snapshot = engine.broadcast_weights(params)

    params.set("value_head.bias", np.ones(1))

    assert snapshot.params["value_head.bias"][0] == 0.0
