import logging
from pathlib import Path
from typing import Optional

from vlatrainer.clients.checkpoint_client import params_from_tensors, params_to_tensors
from vlatrainer.clients.run_store import RunStore
from vlatrainer.env.suite import make_suite
from vlatrainer.errors import CheckpointError
from vlatrainer.model.checkpoint import CheckpointHeader
from vlatrainer.model.curriculum import SuccessTracker
from vlatrainer.model.dataset import DatasetManifest
from vlatrainer.model.labels import LabelManifest, PseudoLabel, RprmReport
from vlatrainer.model.metrics import IterationMetrics, SftEpoch
from vlatrainer.model.report import EvalReport
from vlatrainer.model.task import Suite
from vlatrainer.model.trajectory import TRAJECTORY_KIND, TrajectoryDataset
from vlatrainer.nn.params import ParamStore
from vlatrainer.orchestrator.inference import InferenceEngine
from vlatrainer.orchestrator.shards import ShardPool
from vlatrainer.policy.network import PolicyNetwork, PolicyShape
from vlatrainer.policy.tokenizer import Vocabulary
from vlatrainer.services.curriculum_service import CurriculumService
from vlatrainer.services.demo_service import DemoService
from vlatrainer.services.eval_service import EvalService, expert_batch_actor, policy_actor
from vlatrainer.services.export_service import ExportKind, ExportService
from vlatrainer.services.label_service import LabelService
from vlatrainer.services.ppo_service import PpoService
from vlatrainer.services.rollout_service import RolloutCollector
from vlatrainer.services.rprm_service import RewardScorer, RprmNetwork, RprmService, build_examples
from vlatrainer.services.sft_service import SftService
from vlatrainer.services.trainer_service import TrainerService, TrainerState
from vlatrainer.utils.config import RunConfig, Settings
from vlatrainer.utils.constants import (
    CHECKPOINTS_DIR,
    CONFIG_FILE,
    DEMOS_DIR,
    DEMOS_FILE,
    EVAL_DIR,
    EVAL_REPORT_FILE,
    EVAL_TRAJECTORIES_FILE,
    FINAL_CHECKPOINT,
    LABELS_DIR,
    LABELS_FILE,
    LOSS_CURVE_FILE,
    MANIFEST_FILE,
    METRICS_FILE,
    POLICY_CHECKPOINT,
    RPRM_CHECKPOINT,
    RPRM_DIR,
    RPRM_REPORT_FILE,
    SFT_DIR,
    SUITE_FILE,
    TRAIN_DIR,
    VOCAB_FILE,
)
from vlatrainer.utils.rng import StreamPurpose, stream

logger = logging.getLogger(__name__)

POLICY_KIND = "policy"
RPRM_KIND = "rprm"
EXPERT_TAG = "expert"
SFT_TAG = "sft"


class VlaTrainerApp:
    """One method per command; every artifact goes through the run store."""

    def __init__(self, config: RunConfig, store: RunStore, settings: Settings):
        self.config = config
        self.store = store
        self.settings = settings

    # -- shared artifacts ---------------------------------------------------

    def _suite_and_vocab(self) -> tuple[Suite, Vocabulary]:
        if self.store.has(SUITE_FILE) and self.store.has(VOCAB_FILE):
            return self.store.read_suite(), self.store.read_vocab(self.config.suite.instruction_length)
        suite = make_suite(self.config.suite, self.config.seed, self.config.sim.region_radius)
        vocab = Vocabulary.from_instructions(suite.instructions(), self.config.suite.instruction_length)
        self.store.write_suite(suite)
        self.store.write_vocab(vocab)
        return suite, vocab

    def _load_trajectories(self, path: Path) -> TrajectoryDataset:
        checkpoint = self.store.checkpoints.load(path, TRAJECTORY_KIND)
        return TrajectoryDataset.from_container(checkpoint.tensors, checkpoint.header)

    def _save_trajectories(self, path: Path, dataset: TrajectoryDataset) -> Path:
        tensors, header = dataset.to_container()
        header.config_digest = self.config.digest()
        return self.store.checkpoints.save(path, tensors, header)

    def _load_policy(self, path: Path, vocab: Vocabulary) -> tuple[PolicyNetwork, ParamStore]:
        """Load the parameters of any container holding a policy; the width is read off the value head."""
        checkpoint = self.store.checkpoints.load(path)
        params = params_from_tensors(checkpoint.tensors, checkpoint.header.counters.get("step_count", 0))
        if "value_head.weight" not in params:
            raise CheckpointError(f"{path} holds no policy value head", "tensors")
        network = PolicyNetwork(PolicyShape.for_vocab(vocab, width=int(params["value_head.weight"].shape[0])))
        expected = network.init_params(stream(0, int(StreamPurpose.INIT), 0))
        for name in expected:
            if name not in params or params[name].shape != expected[name].shape:
                raise CheckpointError(f"Tensor {name!r} missing or misshapen in {path}", "tensors")
        return network, params

    def _policy_path(self) -> Path:
        return self.store.path(SFT_DIR, POLICY_CHECKPOINT)

    def _train_dir(self) -> Path:
        return Path(TRAIN_DIR) / self.config.run_tag()

    # -- commands -----------------------------------------------------------

    async def gen_demos(self, episodes_per_task: Optional[int] = None) -> DatasetManifest:
        config = self.config
        count = config.sft.episodes_per_task if episodes_per_task is None else episodes_per_task
        logger.info(f"Generating {count} expert demonstrations per task")
        try:
            suite = make_suite(config.suite, config.seed, config.sim.region_radius)
            vocab = Vocabulary.from_instructions(suite.instructions(), config.suite.instruction_length)
            self.store.write_suite(suite)
            self.store.write_vocab(vocab)
            service = DemoService(config.sim, vocab, config.sft.expert_failure_warning)
            dataset, manifest = service.generate_demos(suite, count, config.seed)
            self._save_trajectories(self.store.path(DEMOS_DIR, DEMOS_FILE), dataset)
            self.store.write_json(Path(DEMOS_DIR) / MANIFEST_FILE, manifest)
            logger.info(f"✓ Wrote {manifest.count} demonstrations to {self.store.path(DEMOS_DIR)}")
            return manifest
        except Exception:
            logger.exception("Error generating demonstrations")
            raise

    async def sft(self) -> list[SftEpoch]:
        config = self.config
        try:
            _, vocab = self._suite_and_vocab()
            dataset = self._load_trajectories(self.store.path(DEMOS_DIR, DEMOS_FILE))
            network = PolicyNetwork(PolicyShape.for_vocab(vocab, width=config.policy.width))
            params = network.init_params(stream(config.seed, int(StreamPurpose.INIT), 0))
            params, curve = SftService(network, config.sft, config.seed).bc_train(params, dataset)
            header = CheckpointHeader(kind=POLICY_KIND, config_digest=config.digest(), counters={"step_count": params.step_count})
            self.store.checkpoints.save(self._policy_path(), params_to_tensors(params), header)
            self.store.write_jsonl(Path(SFT_DIR) / LOSS_CURVE_FILE, curve)
            logger.info(f"✓ Saved behavior-cloned policy to {self._policy_path()}")
            return curve
        except Exception:
            logger.exception("Error during behavior cloning")
            raise

    async def label(self, trajectory_files: Optional[list[Path]] = None) -> LabelManifest:
        files = list(trajectory_files) if trajectory_files else [self.store.path(DEMOS_DIR, DEMOS_FILE)]
        try:
            datasets = [self._load_trajectories(path) for path in files]
            labels, manifest = LabelService(self.config.rprm).label(datasets, [str(path) for path in files])
            self.store.write_jsonl(Path(LABELS_DIR) / LABELS_FILE, labels)
            self.store.write_json(Path(LABELS_DIR) / MANIFEST_FILE, manifest)
            return manifest
        except Exception:
            logger.exception("Error labeling trajectories")
            raise

    async def train_rprm(self) -> RprmReport:
        config = self.config
        try:
            _, vocab = self._suite_and_vocab()
            manifest = self.store.read_model(Path(LABELS_DIR) / MANIFEST_FILE, LabelManifest)
            labels = self.store.read_jsonl(Path(LABELS_DIR) / LABELS_FILE, PseudoLabel)
            datasets = [self._load_trajectories(Path(source)) for source in manifest.sources]
            network = RprmNetwork(PolicyShape.for_vocab(vocab, width=config.rprm.width))
            examples = build_examples(datasets, labels, network.shape)
            params = network.init_params(stream(config.seed, int(StreamPurpose.INIT), 1))
            params, report = RprmService(network, config.rprm, config.seed).train_rprm(params, examples)
            header = CheckpointHeader(kind=RPRM_KIND, config_digest=config.digest(), extra={"width": config.rprm.width})
            self.store.checkpoints.save(self.store.path(RPRM_DIR, RPRM_CHECKPOINT), params_to_tensors(params), header)
            self.store.write_json(Path(RPRM_DIR) / RPRM_REPORT_FILE, report)
            return report
        except Exception:
            logger.exception("Error training the reward model")
            raise

    def _reward_scorer(self, vocab: Vocabulary) -> Optional[RewardScorer]:
        beta = self.config.rprm.beta
        if beta == 0:
            logger.info("Reward model disabled, training on sparse rewards")
            return None
        checkpoint = self.store.checkpoints.load(self.store.path(RPRM_DIR, RPRM_CHECKPOINT), RPRM_KIND)
        width = int(checkpoint.header.extra.get("width", self.config.rprm.width))
        network = RprmNetwork(PolicyShape.for_vocab(vocab, width=width))
        return RewardScorer(network, params_from_tensors(checkpoint.tensors), beta)

    async def train(self, resume: Optional[Path] = None) -> Optional[IterationMetrics]:
        config = self.config
        tag = config.run_tag()
        try:
            suite, vocab = self._suite_and_vocab()
            network, params = self._load_policy(self._policy_path(), vocab)
            tracker = SuccessTracker.for_tasks(
                [task.task_id for task in suite.tasks],
                alpha=config.curriculum.alpha,
                tau=config.curriculum.tau,
                prior=config.curriculum.prior,
                uniform=config.curriculum.uniform,
            )
            curriculum = CurriculumService(tracker, suite.tasks)
            pool = ShardPool.build(
                config.sim, vocab, config.ppo.num_envs, config.shard_count(), config.seed,
                self.settings.max_worker_threads, curriculum.snapshot_sampler(),
            )
            engine = InferenceEngine(network)
            train_dir = self._train_dir()
            collector = RolloutCollector(
                pool, engine, config.seed,
                scorer=self._reward_scorer(vocab),
                curriculum=curriculum,
                coverage_stride=config.export.coverage_stride,
                dump_path=self.store.path(str(train_dir), "rollout_abort.json"),
            )
            trainer = TrainerService(
                config, engine, collector, PpoService(network, config.ppo, config.seed), curriculum,
                self.store, train_dir, suite, EvalService(config.sim, vocab, config.eval.batch_size, pool.throttling),
            )
            self.store.write_json(train_dir / CONFIG_FILE, config.to_flat())

            state: Optional[TrainerState] = None
            if resume is not None:
                params, state = trainer.restore(self.store.checkpoints.load(resume))
            logger.info(f"Starting RL run {tag}")
            await trainer.train(params, state)
            records = self.store.read_jsonl(train_dir / METRICS_FILE, IterationMetrics)
            return records[-1] if records else None
        except Exception:
            logger.exception(f"Error in RL run {tag}")
            raise

    def _default_checkpoint(self) -> Path:
        final = self.store.path(str(self._train_dir()), CHECKPOINTS_DIR, FINAL_CHECKPOINT)
        return final if final.exists() else self._policy_path()

    async def evaluate(
        self,
        checkpoint: Optional[Path] = None,
        expert: bool = False,
        episodes_per_task: Optional[int] = None,
        save_trajectories: bool = False,
    ) -> EvalReport:
        config = self.config
        count = config.eval.episodes_per_task if episodes_per_task is None else episodes_per_task
        try:
            suite, vocab = self._suite_and_vocab()
            service = EvalService(config.sim, vocab, config.eval.batch_size)
            if expert:
                tag, name = EXPERT_TAG, EXPERT_TAG
                actor = expert_batch_actor(config.sim, vocab)
            else:
                path = checkpoint or self._default_checkpoint()
                tag = SFT_TAG if path == self._policy_path() else config.run_tag()
                name = str(path)
                network, params = self._load_policy(path, vocab)
                actor = policy_actor(network, params)

            report, successes = await service.evaluate(actor, suite, count, config.seed, name, tag)
            self.store.write_json(Path(EVAL_DIR) / tag / EVAL_REPORT_FILE, report)
            if save_trajectories:
                target = self._save_trajectories(self.store.path(EVAL_DIR, tag, EVAL_TRAJECTORIES_FILE), successes)
                logger.info(f"✓ Saved {len(successes)} successful episodes to {target}")
            return report
        except Exception:
            logger.exception("Error during evaluation")
            raise

    async def export(self, kind: ExportKind, tag: Optional[str] = None) -> Path:
        try:
            return ExportService(self.store).export(kind, tag or self.config.run_tag())
        except Exception:
            logger.exception(f"Error exporting {kind}")
            raise
