"""
The RL outer loop: critic warmup, then alternating rollout and learning phases with
periodic checkpoints and evaluations.
"""
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from vlatrainer.clients.checkpoint_client import Checkpoint, header_extra, params_from_tensors, params_to_tensors
from vlatrainer.clients.run_store import RunStore
from vlatrainer.errors import CheckpointError
from vlatrainer.model.checkpoint import CheckpointHeader
from vlatrainer.model.curriculum import SuccessTracker
from vlatrainer.model.metrics import CoverageRecord, EvalPoint, IterationMetrics, WallTimes
from vlatrainer.model.task import Suite
from vlatrainer.nn.params import ParamStore
from vlatrainer.orchestrator.inference import InferenceEngine
from vlatrainer.services.curriculum_service import CurriculumService
from vlatrainer.services.eval_service import EvalService, policy_actor
from vlatrainer.services.ppo_service import PpoService, PpoStats, gae_for_buffer
from vlatrainer.services.rollout_service import SOURCE_RL, SOURCE_SFT, RolloutBuffer, RolloutCollector
from vlatrainer.utils.config import RunConfig
from vlatrainer.utils.constants import CHECKPOINTS_DIR, COVERAGE_FILE, EVAL_SERIES_FILE, FINAL_CHECKPOINT, METRICS_FILE
from vlatrainer.utils.rng import generator_state

logger = logging.getLogger(__name__)

TRAINER_KIND = "trainer"


@dataclass
class TrainerState:
    iteration: int = 0
    env_steps: int = 0
    warmup_done: bool = False
    coverage_records: int = 0
    eval_records: int = 0


def checkpoint_name(iteration: int) -> str:
    return f"iter_{iteration:05d}.ckpt"


def iteration_metrics(
    iteration: int,
    env_steps: int,
    buffer: RolloutBuffer,
    stats: PpoStats,
    tracker: SuccessTracker,
    learn_time: float,
    tag: str,
) -> IterationMetrics:
    episodes = buffer.episodes
    successes = [e for e in episodes if e.success]
    return IterationMetrics(
        iter=iteration,
        env_steps=env_steps,
        mean_return=float(np.mean([e.episode_return for e in episodes])) if episodes else 0.0,
        mean_episode_len=float(np.mean([e.length for e in episodes])) if episodes else 0.0,
        mean_success_len=float(np.mean([e.length for e in successes])) if successes else None,
        success_rate=len(successes) / len(episodes) if episodes else 0.0,
        episodes=len(episodes),
        entropy=float(buffer.entropy.mean()),
        clip_frac=stats.clip_frac,
        value_loss=stats.value_loss,
        policy_loss=stats.policy_loss,
        approx_kl=stats.approx_kl,
        epochs_run=stats.epochs_run,
        early_stopped=stats.early_stopped,
        per_task_success=dict(tracker.rates),
        wall_times=WallTimes(env=buffer.wall_times.env, inference=buffer.wall_times.inference, learn=learn_time),
        tag=tag,
    )


class TrainerService:

    def __init__(
        self,
        config: RunConfig,
        engine: InferenceEngine,
        collector: RolloutCollector,
        ppo: PpoService,
        curriculum: CurriculumService,
        store: RunStore,
        train_dir: Path,
        suite: Suite,
        evaluator: Optional[EvalService] = None,
    ):
        self.config = config
        self.engine = engine
        self.collector = collector
        self.ppo = ppo
        self.curriculum = curriculum
        self.store = store
        self.train_dir = train_dir
        self.suite = suite
        self.evaluator = evaluator
        self.tag = config.run_tag()

    def _file(self, name: str) -> Path:
        return self.train_dir / name

    async def critic_warmup(self, params: ParamStore, state: TrainerState) -> None:
        """Fit the value head on rollouts of the unchanged SFT policy."""
        ppo = self.config.ppo
        losses = []
        for index in range(ppo.warmup_iters):
            self.engine.broadcast_weights(params)
            buffer = await self.collector.collect(ppo.steps_per_update, ppo.temperature, 0, SOURCE_SFT)
            stats = self.ppo.value_update(params, buffer)
            state.env_steps += len(buffer)
            self._log_coverage(buffer.coverage, state)
            losses.append(stats.value_loss)
            logger.info(f"Critic warmup {index + 1}/{ppo.warmup_iters}: value loss {stats.value_loss:.4f}")
        state.warmup_done = True
        if losses:
            logger.info(f"✓ Critic warmup finished, value loss {losses[0]:.4f} -> {losses[-1]:.4f}")

    def _log_coverage(self, records: list[CoverageRecord], state: TrainerState) -> None:
        if records:
            self.store.append_jsonl(self._file(COVERAGE_FILE), records)
            state.coverage_records += len(records)

    async def run_iteration(self, params: ParamStore, state: TrainerState) -> IterationMetrics:
        ppo = self.config.ppo
        k = state.iteration
        self.engine.broadcast_weights(params)
        source = SOURCE_SFT if k == 0 else SOURCE_RL
        buffer = await self.collector.collect(ppo.steps_per_update, ppo.temperature, k, source)

        started = time.perf_counter()
        advantages, returns = gae_for_buffer(buffer, ppo)
        stats = self.ppo.ppo_update(params, buffer, advantages, returns)
        learn_time = time.perf_counter() - started

        state.env_steps += len(buffer)
        metrics = iteration_metrics(k, state.env_steps, buffer, stats, self.curriculum.tracker, learn_time, self.tag)
        self.store.append_jsonl(self._file(METRICS_FILE), [metrics])
        self._log_coverage(buffer.coverage, state)
        state.iteration += 1
        logger.info(
            f"Iteration {k}: success {metrics.success_rate:.3f} over {metrics.episodes} episodes, "
            f"return {metrics.mean_return:.3f}, policy loss {stats.policy_loss:.4f}, value loss {stats.value_loss:.4f}, "
            f"kl {stats.approx_kl:.4f}, clip {stats.clip_frac:.3f}"
        )
        return metrics

    async def evaluate_point(self, params: ParamStore, state: TrainerState) -> Optional[EvalPoint]:
        if self.evaluator is None:
            return None
        report, _ = await self.evaluator.evaluate(
            policy_actor(self.engine.network, params),
            self.suite,
            self.config.ppo.eval_episodes_per_task,
            self.config.seed,
            f"iteration {state.iteration}",
            self.tag,
        )
        point = EvalPoint(
            iter=state.iteration,
            env_steps=state.env_steps,
            success_rate=report.overall.success_rate,
            per_suite={suite_id: stat.success_rate for suite_id, stat in report.suites.items()},
        )
        self.store.append_jsonl(self._file(EVAL_SERIES_FILE), [point])
        state.eval_records += 1
        return point

    async def train(self, params: ParamStore, state: Optional[TrainerState] = None) -> ParamStore:
        """
        Run the remaining iterations of a fresh or restored run.

        A fresh run resets the optimizer moments, starts new episodes and, unless the
        iteration budget is zero, warms up the critic first.
        """
        ppo = self.config.ppo
        if state is None:
            if ppo.iterations == 0:
                logger.info("Zero RL iterations configured, returning the starting policy")
                return params
            state = TrainerState()
            params.reset_moments()
            self.collector.reset()
            for name in (METRICS_FILE, EVAL_SERIES_FILE, COVERAGE_FILE):
                self.store.write_jsonl(self._file(name), [])

        if not state.warmup_done:
            await self.critic_warmup(params, state)
        if state.iteration == 0 and ppo.eval_every and state.eval_records == 0:
            await self.evaluate_point(params, state)

        logger.info(f"Training run {self.tag} from iteration {state.iteration} to {ppo.iterations}")
        while state.iteration < ppo.iterations:
            await self.run_iteration(params, state)
            done = state.iteration
            if ppo.eval_every and done % ppo.eval_every == 0:
                await self.evaluate_point(params, state)
            if ppo.checkpoint_every and done % ppo.checkpoint_every == 0:
                self.save_checkpoint(params, state, checkpoint_name(done))

        self.save_checkpoint(params, state, FINAL_CHECKPOINT)
        logger.info(f"✓ Finished {state.iteration} iterations ({state.env_steps} environment steps)")
        return params

    def save_checkpoint(self, params: ParamStore, state: TrainerState, name: str) -> Path:
        collector_state = self.collector.state_dict()
        header = CheckpointHeader(
            kind=TRAINER_KIND,
            rng_states={"decode": collector_state["decode_rngs"], "learner": generator_state(self.ppo.rng)},
            tracker=self.curriculum.tracker.model_dump(mode="json"),
            counters={
                "iteration": state.iteration,
                "env_steps": state.env_steps,
                "warmup_done": int(state.warmup_done),
                "coverage_records": state.coverage_records,
                "eval_records": state.eval_records,
                "transitions_seen": collector_state["transitions_seen"],
                "step_count": params.step_count,
                "engine_version": self.engine.version,
            },
            config_digest=self.config.digest(),
            extra={"tag": self.tag, "pool": self.collector.pool.state_dict(), "next_done": collector_state["next_done"]},
        )
        path = self.store.path(str(self.train_dir), CHECKPOINTS_DIR, name)
        self.store.checkpoints.save(path, params_to_tensors(params, with_moments=True), header)
        logger.info(f"✓ Saved checkpoint {path}")
        return path

    def restore(self, checkpoint: Checkpoint) -> tuple[ParamStore, TrainerState]:
        """
        Bring the collector, learner, curriculum and output files back to the saved point.

        Raises:
            CheckpointError: When the container is not a trainer checkpoint or misses state
        """
        header = checkpoint.header
        if header.kind != TRAINER_KIND:
            raise CheckpointError(f"Cannot resume from a {header.kind} container", "kind")
        if header.tracker is None:
            raise CheckpointError("Missing curriculum state", "tracker")
        counters = header.counters
        for key in ("iteration", "env_steps", "warmup_done", "coverage_records", "eval_records", "transitions_seen", "step_count"):
            if key not in counters:
                raise CheckpointError(f"Missing counter {key!r}", f"counters.{key}")
        for key in ("decode", "learner"):
            if key not in header.rng_states:
                raise CheckpointError(f"Missing rng state {key!r}", f"rng_states.{key}")
        if header.config_digest != self.config.digest():
            logger.warning("Resuming with a configuration that differs from the checkpoint's")

        params = params_from_tensors(checkpoint.tensors, counters["step_count"])
        self.curriculum.tracker = SuccessTracker.model_validate(header.tracker)
        self.collector.pool.load_state_dict(header_extra(checkpoint, "pool"), self.suite.by_id())
        self.collector.load_state_dict({
            "decode_rngs": header.rng_states["decode"],
            "next_done": header_extra(checkpoint, "next_done"),
            "transitions_seen": counters["transitions_seen"],
        })
        self.ppo.load_state_dict({"rng": header.rng_states["learner"]})
        self.engine.version = counters.get("engine_version", self.engine.version)

        state = TrainerState(
            iteration=counters["iteration"],
            env_steps=counters["env_steps"],
            warmup_done=bool(counters["warmup_done"]),
            coverage_records=counters["coverage_records"],
            eval_records=counters["eval_records"],
        )
        self.store.truncate_jsonl(self._file(METRICS_FILE), IterationMetrics, state.iteration)
        self.store.truncate_jsonl(self._file(EVAL_SERIES_FILE), EvalPoint, state.eval_records)
        self.store.truncate_jsonl(self._file(COVERAGE_FILE), CoverageRecord, state.coverage_records)
        logger.info(f"✓ Restored run {self.tag} at iteration {state.iteration}")
        return params, state
