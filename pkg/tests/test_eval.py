import numpy as np
import pytest

from vlatrainer.services.eval_service import (
    EvalService,
    eval_seeds,
    expert_batch_actor,
    policy_actor,
    success_stat,
    wilson_interval,
)
from vlatrainer.utils.formatters import format_eval_text


def test_wilson_interval_values():
    assert wilson_interval(0, 10) == pytest.approx((0.0, 0.27753), abs=1e-5)
    assert wilson_interval(5, 10) == pytest.approx((0.23659, 0.76341), abs=1e-5)
    assert wilson_interval(10, 10)[1] == 1.0


def test_wilson_interval_without_episodes():
    assert wilson_interval(0, 0) == (0.0, 1.0)
    assert success_stat(0, 0).success_rate == 0.0


def test_eval_seeds_are_distinct_and_stable():
    seeds = eval_seeds(0, 3, 20)

    assert len(set(seeds)) == 20
    assert eval_seeds(0, 3, 20) == seeds
    assert not set(seeds) & set(eval_seeds(0, 4, 20))


async def test_expert_solves_the_suite(suite, vocab, sim):
    service = EvalService(sim, vocab, batch_size=8)

    report, successes = await service.evaluate(expert_batch_actor(sim, vocab), suite, 10, 0, "expert", "expert")

    assert report.overall.episodes == 10 * len(suite.tasks)
    assert report.overall.success_rate >= 0.95
    assert len(successes) == report.overall.successes
    assert set(report.suites) == {str(task.suite_id) for task in suite.tasks}
    assert sum(stat.episodes for stat in report.suites.values()) == report.overall.episodes
    assert all(episode.success and episode.sparse_reward[-1] == 1.0 for episode in successes.episodes)


async def test_report_is_deterministic_and_batch_independent(suite, vocab, sim, network):
    params = network.init_params(np.random.default_rng(0))
    actor = policy_actor(network, params)

    first, _ = await EvalService(sim, vocab, batch_size=3).evaluate(actor, suite, 2, 1, "p", "t")
    second, _ = await EvalService(sim, vocab, batch_size=16).evaluate(actor, suite, 2, 1, "p", "t")

    assert first == second


async def test_untrained_policy_reports_failures(suite, vocab, sim, network):
    actor = policy_actor(network, network.init_params(np.random.default_rng(0)))

    report, successes = await EvalService(sim, vocab).evaluate(actor, suite, 1, 0, "p", "t")

    assert report.overall.successes == 0
    assert len(successes) == 0
    assert all(task.mean_success_len is None for task in report.tasks)


async def test_policy_actor_ignores_later_learner_updates(suite, vocab, sim, network):
    params = network.init_params(np.random.default_rng(0))
    actor = policy_actor(network, params)
    jobs = [(suite.tasks[0], 0)]
    service = EvalService(sim, vocab)
    before = await service.run_episodes(jobs, actor)

    params.set("token_head.out.bias", np.arange(256.0))

    after = await service.run_episodes(jobs, actor)
    assert np.array_equal(before[0].tokens, after[0].tokens)


async def test_text_table_lists_every_task(suite, vocab, sim):
    report, _ = await EvalService(sim, vocab).evaluate(expert_batch_actor(sim, vocab), suite, 1, 0, "expert", "expert")

    text = format_eval_text(report)

    assert text.count("\ntask ") == len(suite.tasks)
    assert "overall" in text
