import itertools

import numpy as np
import pytest

from tests.conftest import TEST_WIDTH, randomize
from vlatrainer.env.sim import FEATURE_DIM, SimEnv
from vlatrainer.errors import ShapeError, TokenizerError
from vlatrainer.nn.functional import categorical_entropy
from vlatrainer.policy.network import ObservationBatch, PolicyNetwork, PolicyShape


def _observations(suite, vocab, sim, count: int):
    env = SimEnv(sim, vocab)
    return [env.reset(suite.tasks[i % len(suite.tasks)], i) for i in range(count)]


def test_uniform_policy_log_prob_and_entropy(network, suite, vocab, sim):
    params = network.init_params(np.random.default_rng(0))
    obs = _observations(suite, vocab, sim, 1)[0]
    tokens = network.token_base + np.array([0, 17, 128, 255, 3, 90, 200])

    assert network.action_log_prob(params, obs, tokens) == pytest.approx(-38.816242, abs=1e-6)
    assert network.entropy(params, obs) == pytest.approx(38.816242, abs=1e-6)
    assert network.value(params, obs) == 0.0


def test_action_distribution_is_normalized(suite, vocab, sim):
    shape = PolicyShape(
        feature_dim=FEATURE_DIM,
        instruction_length=vocab.instruction_length,
        front_size=vocab.action_token_base,
        pad_id=vocab.pad_id,
        width=TEST_WIDTH,
        action_steps=2,
        bins=3,
    )
    network = PolicyNetwork(shape)
    params = network.init_params(np.random.default_rng(1))
    randomize(params, np.random.default_rng(2), scale=1.0)
    obs = _observations(suite, vocab, sim, 1)[0]

    total = sum(
        np.exp(network.action_log_prob(params, obs, network.token_base + np.array(pair)))
        for pair in itertools.product(range(3), repeat=2)
    )

    assert total == pytest.approx(1.0, abs=1e-9)


def test_later_steps_condition_on_earlier_tokens(network, suite, vocab, sim):
    params = network.init_params(np.random.default_rng(0))
    randomize(params, np.random.default_rng(1))
    batch = network.batch(_observations(suite, vocab, sim, 1))

    a = network.token_log_probs(params, batch, np.array([[0, 5, 5, 5, 5, 5, 5]]))
    b = network.token_log_probs(params, batch, np.array([[200, 5, 5, 5, 5, 5, 5]]))

    assert a[0, 0] != b[0, 0]
    assert a[0, 1] != b[0, 1]


def test_decode_log_probs_match_teacher_forcing(network, suite, vocab, sim):
    params = network.init_params(np.random.default_rng(0))
    randomize(params, np.random.default_rng(5))
    batch = network.batch(_observations(suite, vocab, sim, 4))
    rngs = [np.random.default_rng(i) for i in range(4)]

    decoded = network.decode(params, batch, 1.5, rngs)
    forced = network.token_log_probs(params, batch, decoded.bins)

    np.testing.assert_allclose(decoded.log_probs, forced, atol=1e-10)
    np.testing.assert_allclose(decoded.values, network.values(params, batch), atol=1e-12)


def test_batched_decode_matches_sequential(network, suite, vocab, sim):
    params = network.init_params(np.random.default_rng(0))
    randomize(params, np.random.default_rng(6))
    observations = _observations(suite, vocab, sim, 16)

    batched = network.decode(params, network.batch(observations), 1.0, [np.random.default_rng(i) for i in range(16)])
    for i, obs in enumerate(observations):
        tokens, log_probs = network.sample_action_tokens(params, obs, 1.0, np.random.default_rng(i))

        assert np.array_equal(tokens, network.token_base + batched.bins[i])
        np.testing.assert_allclose(log_probs, batched.log_probs[i], atol=1e-10)


def test_greedy_decode_ignores_generators(network, suite, vocab, sim):
    params = network.init_params(np.random.default_rng(0))
    randomize(params, np.random.default_rng(7))
    batch = network.batch(_observations(suite, vocab, sim, 3))

    a = network.decode(params, batch, 0.0, [np.random.default_rng(i) for i in range(3)])
    b = network.decode(params, batch, 0.0, [np.random.default_rng(100 + i) for i in range(3)])

    assert np.array_equal(a.bins, b.bins)


def test_path_entropy_sums_step_entropies(network, suite, vocab, sim):
    params = network.init_params(np.random.default_rng(0))
    randomize(params, np.random.default_rng(8))
    obs = _observations(suite, vocab, sim, 1)[0]
    tokens = network.token_base + np.array([1, 2, 3, 4, 5, 6, 7])

    graph = network.graph(params, network.batch([obs]))
    graph.teacher_force(network.tokens_to_bins(tokens).reshape(1, -1))
    expected = sum(categorical_entropy(graph.evaluate(node))[0] for node in graph.logits)

    assert network.entropy(params, obs, tokens) == pytest.approx(expected)


def test_policy_gradients_match_central_differences(network, suite, vocab, sim):
    rng = np.random.default_rng(9)
    params = network.init_params(np.random.default_rng(0))
    randomize(params, rng)
    batch = network.batch(_observations(suite, vocab, sim, 3))
    bins = rng.integers(0, 256, size=(3, 7))

    def loss(store) -> float:
        return float(-network.token_log_probs(store, batch, bins).sum() + network.values(store, batch).sum())

    graph = network.graph(params, batch)
    nodes = graph.teacher_force(bins)
    graph.forward_all()
    seeds = {node: np.ones(3) for node in nodes}
    seeds[graph.value] = np.ones((3, 1))
    grads = graph.backward(seeds)

    for name in ("feature_proj.weight", "instr_embed", "token_embed", "token_head.out.weight", "value_head.bias"):
        direction = rng.normal(size=params[name].shape)
        h = 1e-6
        plus, minus = params.copy(), params.copy()
        plus.set(name, params[name] + h * direction)
        minus.set(name, params[name] - h * direction)
        numeric = (loss(plus) - loss(minus)) / (2 * h)
        analytic = float(np.sum(grads[name] * direction))
        assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(numeric))


def test_batch_shape_validation(network):
    with pytest.raises(ShapeError):
        ObservationBatch.from_arrays(np.zeros((2, 5)), np.zeros((2, 12), dtype=np.int64), network.shape)


def test_non_action_token_rejected(network, suite, vocab, sim):
    params = network.init_params(np.random.default_rng(0))
    obs = _observations(suite, vocab, sim, 1)[0]

    with pytest.raises(TokenizerError):
        network.action_log_prob(params, obs, [vocab.end_id] * 7)


def test_negative_temperature(network, suite, vocab, sim):
    params = network.init_params(np.random.default_rng(0))
    batch = network.batch(_observations(suite, vocab, sim, 1))

    with pytest.raises(ValueError):
        network.decode(params, batch, -1.0, [np.random.default_rng(0)])
