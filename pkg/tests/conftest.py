import numpy as np
import pytest

from vlatrainer.env.suite import make_suite
from vlatrainer.model.task import Suite
from vlatrainer.policy.network import PolicyNetwork, PolicyShape
from vlatrainer.policy.tokenizer import Vocabulary
from vlatrainer.utils.config import SimConfig, SuiteConfig

TEST_WIDTH = 8


@pytest.fixture
def sim() -> SimConfig:
    return SimConfig()


@pytest.fixture
def suite() -> Suite:
    return make_suite(SuiteConfig(tasks_per_suite=2), master_seed=0, region_radius=SimConfig().region_radius)


@pytest.fixture
def vocab(suite: Suite) -> Vocabulary:
    return Vocabulary.from_instructions(suite.instructions())


@pytest.fixture
def network(vocab: Vocabulary) -> PolicyNetwork:
    return PolicyNetwork(PolicyShape.for_vocab(vocab, width=TEST_WIDTH))


def randomize(params, rng: np.random.Generator, scale: float = 0.3) -> None:
    """Replace every parameter with random values so zero-initialized heads carry signal."""
    for name in params:
        params.set(name, rng.normal(0.0, scale, size=params[name].shape))


def make_collector(suite, vocab, sim, network, num_envs=4, num_shards=2, seed=0, scorer=None, curriculum=None):
    """Shard pool, inference engine and collector over `suite`, with a uniform task sampler unless a curriculum is given."""
    from vlatrainer.orchestrator.inference import InferenceEngine
    from vlatrainer.orchestrator.shards import ShardPool
    from vlatrainer.services.rollout_service import RolloutCollector

    sampler = lambda rng: suite.tasks[int(rng.integers(len(suite.tasks)))]
    pool = ShardPool.build(sim, vocab, num_envs, num_shards, seed, max_worker_threads=2, task_sampler=sampler)
    engine = InferenceEngine(network)
    collector = RolloutCollector(pool, engine, seed, scorer=scorer, curriculum=curriculum, coverage_stride=4)
    return collector
