import numpy as np
import pytest

from vlatrainer.model.trajectory import TrajectoryDataset
from vlatrainer.policy.network import ObservationBatch
from vlatrainer.services.demo_service import DemoService
from vlatrainer.services.sft_service import SftService, bc_loss_and_grads
from vlatrainer.utils.config import SftConfig


def test_demos_are_successful_and_reproducible(suite, vocab, sim):
    service = DemoService(sim, vocab)

    dataset, manifest = service.generate_demos(suite, episodes_per_task=2, seed=0)
    again, _ = service.generate_demos(suite, episodes_per_task=2, seed=0)

    assert manifest.attempted == 2 * len(suite.tasks)
    assert manifest.count == len(dataset) >= 1
    assert all(episode.success for episode in dataset.episodes)
    assert dataset.digest() == again.digest() == manifest.digest
    for episode in dataset.episodes:
        assert episode.sparse_reward[-1] == 1.0
        assert episode.done[-1] and not episode.done[:-1].any()


def test_trajectory_container_round_trip(suite, vocab, sim):
    dataset, _ = DemoService(sim, vocab).generate_demos(suite, episodes_per_task=1, seed=3)

    tensors, header = dataset.to_container()
    restored = TrajectoryDataset.from_container(tensors, header)

    assert restored.digest() == dataset.digest()
    assert [len(e) for e in restored.episodes] == [len(e) for e in dataset.episodes]


def test_behavior_cloning_reduces_loss_and_freezes_value_head(network, suite, vocab, sim):
    dataset, _ = DemoService(sim, vocab).generate_demos(suite, episodes_per_task=1, seed=0)
    params = network.init_params(np.random.default_rng(0))
    value_before = {name: params[name].copy() for name in params.names("value_head.")}

    params, curve = SftService(network, SftConfig(epochs=5, batch_size=64, lr=3e-3), master_seed=0).bc_train(params, dataset)

    assert curve[0].loss == pytest.approx(np.log(256), rel=0.05)
    assert curve[-1].loss < curve[0].loss
    assert all(np.array_equal(params[name], value) for name, value in value_before.items())


def test_behavior_cloning_gradient_is_mean_token_cross_entropy(network, suite, vocab, sim):
    dataset, _ = DemoService(sim, vocab).generate_demos(suite, episodes_per_task=1, seed=0)
    arrays = dataset.stacked()
    params = network.init_params(np.random.default_rng(0))
    batch = ObservationBatch.from_arrays(arrays["features"][:5], arrays["instruction"][:5], network.shape)
    loss, grads, _ = bc_loss_and_grads(network, params, batch, network.tokens_to_bins(arrays["tokens"][:5]))

    assert loss == pytest.approx(np.log(256))
    assert not np.any(grads["token_head.out.bias"] == 0.0)


def test_behavior_cloning_rejects_empty_dataset(network):
    params = network.init_params(np.random.default_rng(0))

    with pytest.raises(ValueError):
        SftService(network, SftConfig(), master_seed=0).bc_train(params, TrajectoryDataset())
