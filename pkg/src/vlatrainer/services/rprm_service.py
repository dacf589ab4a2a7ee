"""
Process reward model: progress classification as next-token prediction.

The model reads the same observation encoding as the policy plus the emitted
action tokens and predicts one of two tokens, progress (class 0) or no progress.
"""
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlatrainer.env.sim import Observation
from vlatrainer.errors import NumericError
from vlatrainer.model.labels import LabelKind, PseudoLabel, RprmReport
from vlatrainer.model.trajectory import TrajectoryDataset
from vlatrainer.nn.functional import softmax
from vlatrainer.nn.graph import Graph
from vlatrainer.nn.layers import add_dense, add_embedding, dense, tanh_dense
from vlatrainer.nn.optim import adam_step
from vlatrainer.nn.params import ParamStore, TensorBuffer
from vlatrainer.policy.network import EMBEDDING_STD, ObservationBatch, PolicyShape, add_encoder_params, encoder_context, token_index
from vlatrainer.services.sft_service import complete_grads
from vlatrainer.utils.config import RprmConfig
from vlatrainer.utils.rng import StreamPurpose, stream

logger = logging.getLogger(__name__)

PROGRESS = 0
NO_PROGRESS = 1


def densify(sparse: float, score: float, beta: float) -> float:
    """
    Sparse reward plus the scaled progress score.

    Example:
        >>> densify(1.0, 0.5, 0.1)
        1.05
    """
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    return sparse + beta * score


@dataclass(frozen=True)
class RprmExamples:
    features: NDArray[np.float64]
    instruction: NDArray[np.int64]
    bins: NDArray[np.int64]
    targets: NDArray[np.int64]
    episode_ids: NDArray[np.int64]

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    def subset(self, rows: NDArray[np.int64]) -> "RprmExamples":
        return RprmExamples(self.features[rows], self.instruction[rows], self.bins[rows], self.targets[rows], self.episode_ids[rows])


class RprmNetwork:

    def __init__(self, shape: PolicyShape):
        self.shape = shape

    def init_params(self, rng: np.random.Generator) -> ParamStore:
        shape = self.shape
        store = ParamStore()
        add_encoder_params(store, rng, shape)
        add_embedding(store, rng, "act_embed", shape.action_steps * shape.bins, shape.width, EMBEDDING_STD)
        add_dense(store, rng, "progress_head.hidden", shape.width, shape.width)
        add_dense(store, rng, "progress_head.out", shape.width, 2, zero=True)
        return store

    def build(self, params: Mapping[str, TensorBuffer], batch: ObservationBatch, bins: NDArray[np.int64],
              targets: NDArray[np.int64] | None = None) -> tuple[Graph, int, int | None]:
        """Returns (graph, logits node, cross-entropy node or None) with every leaf bound."""
        graph = Graph()
        bindings: dict[str, Any] = {"features": batch.features, "instruction": batch.instruction}
        z = encoder_context(graph)
        for step in range(self.shape.action_steps):
            bindings[f"act_{step}"] = token_index(step, bins[:, step], self.shape)
            z = graph.add(z, graph.gather(graph.param("act_embed"), graph.index(f"act_{step}")))
        logits = dense(graph, tanh_dense(graph, z, "progress_head.hidden"), "progress_head.out")
        loss = None
        if targets is not None:
            bindings["label"] = targets
            loss = graph.softmax_cross_entropy(logits, graph.index("label"))
        graph.bind(bindings)
        graph.bind(params)
        return graph, logits, loss

    def progress_probability(self, params: Mapping[str, TensorBuffer], batch: ObservationBatch, bins: NDArray[np.int64]) -> NDArray[np.float64]:
        graph, logits, _ = self.build(params, batch, bins)
        return softmax(graph.forward(root=logits))[:, PROGRESS]

    def score(self, params: Mapping[str, TensorBuffer], obs: Observation, tokens: ArrayLike) -> float:
        """Probability of the progress token for one (observation, action tokens) pair."""
        bins = (np.asarray(tokens, dtype=np.int64) - self.shape.front_size).reshape(1, -1)
        batch = ObservationBatch.stack([obs], self.shape)
        return float(self.progress_probability(params, batch, bins)[0])

    def loss_and_grads(self, params: Mapping[str, TensorBuffer], batch: ObservationBatch, bins: NDArray[np.int64],
                       targets: NDArray[np.int64]) -> tuple[float, dict[str, NDArray[np.float64]], NDArray[np.float64]]:
        graph, logits, loss_node = self.build(params, batch, bins, targets)
        assert loss_node is not None
        losses = graph.forward(root=loss_node)
        grads = graph.backward({loss_node: np.full(batch.size, 1.0 / batch.size)})
        return float(losses.mean()), grads, graph.value(logits)


def build_examples(datasets: Sequence[TrajectoryDataset], labels: Sequence[PseudoLabel], shape: PolicyShape) -> RprmExamples:
    """Join labels with the logged steps they refer to (episode ids run across `datasets`)."""
    episodes = [episode for dataset in datasets for episode in dataset.episodes]
    rows: dict[str, list[object]] = {"features": [], "instruction": [], "bins": [], "targets": [], "episodes": []}
    for label in labels:
        if label.episode_id >= len(episodes):
            raise ValueError(f"Label refers to episode {label.episode_id}, only {len(episodes)} loaded")
        episode = episodes[label.episode_id]
        if label.t >= len(episode):
            raise ValueError(f"Label refers to step {label.t} of a {len(episode)}-step episode")
        rows["features"].append(episode.features[label.t])
        rows["instruction"].append(episode.instruction)
        rows["bins"].append(episode.tokens[label.t] - shape.front_size)
        rows["targets"].append(PROGRESS if label.label == LabelKind.POSITIVE else NO_PROGRESS)
        rows["episodes"].append(label.episode_id)
    if not labels:
        return RprmExamples(
            np.zeros((0, shape.feature_dim)), np.zeros((0, shape.instruction_length), dtype=np.int64),
            np.zeros((0, shape.action_steps), dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
        )
    return RprmExamples(
        features=np.stack(rows["features"]),  # type: ignore[arg-type]
        instruction=np.stack(rows["instruction"]).astype(np.int64),  # type: ignore[arg-type]
        bins=np.stack(rows["bins"]).astype(np.int64),  # type: ignore[arg-type]
        targets=np.asarray(rows["targets"], dtype=np.int64),
        episode_ids=np.asarray(rows["episodes"], dtype=np.int64),
    )


class RprmService:

    def __init__(self, network: RprmNetwork, config: RprmConfig, master_seed: int):
        self.network = network
        self.config = config
        self.master_seed = master_seed

    def split(self, examples: RprmExamples) -> tuple[RprmExamples, RprmExamples]:
        """Hold out whole episodes so neighboring steps never straddle the split."""
        rng = stream(self.master_seed, int(StreamPurpose.DATA), 1)
        episode_ids = np.unique(examples.episode_ids)
        shuffled = rng.permutation(episode_ids)
        holdout_count = max(1, int(round(len(episode_ids) * self.config.holdout_fraction))) if len(episode_ids) > 1 else 0
        holdout = np.isin(examples.episode_ids, shuffled[:holdout_count])
        return examples.subset(np.flatnonzero(~holdout)), examples.subset(np.flatnonzero(holdout))

    def _batch(self, examples: RprmExamples) -> ObservationBatch:
        return ObservationBatch.from_arrays(examples.features, examples.instruction, self.network.shape)

    def train_rprm(self, params: ParamStore, examples: RprmExamples) -> tuple[ParamStore, RprmReport]:
        """
        Fit the progress head with two-way cross-entropy and report held-out accuracy.

        Raises:
            ValueError: When the labels contain a single class
        """
        classes = set(np.unique(examples.targets).tolist())
        if classes != {PROGRESS, NO_PROGRESS}:
            raise ValueError(f"Reward model training needs both label classes, got {sorted(classes)}")
        train, holdout = self.split(examples)
        rng = stream(self.master_seed, int(StreamPurpose.LEARNER), 1)
        logger.info(f"Training reward model on {len(train)} steps, holding out {len(holdout)}")

        curve: list[float] = []
        for epoch in range(self.config.epochs):
            order = rng.permutation(len(train))
            epoch_loss = 0.0
            for start in range(0, len(train), self.config.batch_size):
                rows = order[start:start + self.config.batch_size]
                chunk = train.subset(rows)
                loss, grads, _ = self.network.loss_and_grads(params, self._batch(chunk), chunk.bins, chunk.targets)
                if not np.isfinite(loss):
                    raise NumericError(f"Non-finite reward model loss at epoch {epoch}")
                adam_step(params, complete_grads(params, grads), self.config.lr)
                epoch_loss += loss * len(rows)
            curve.append(epoch_loss / len(train))
            logger.debug(f"Reward model epoch {epoch}: loss {curve[-1]:.4f}")

        evaluated = holdout if len(holdout) else train
        probs = self.network.progress_probability(params, self._batch(evaluated), evaluated.bins)
        predicted = np.where(probs >= 0.5, PROGRESS, NO_PROGRESS)
        positive = evaluated.targets == PROGRESS
        report = RprmReport(
            train_examples=len(train),
            holdout_examples=len(holdout),
            holdout_accuracy=float(np.mean(predicted == evaluated.targets)),
            final_loss=curve[-1] if curve else float("nan"),
            loss_curve=curve,
            mean_score_positive=float(probs[positive].mean()) if positive.any() else 0.0,
            mean_score_negative=float(probs[~positive].mean()) if (~positive).any() else 0.0,
        )
        logger.info(f"✓ Reward model held-out accuracy {report.holdout_accuracy:.3f}")
        return params, report


class RewardScorer:
    """Frozen reward model used during rollouts."""

    def __init__(self, network: RprmNetwork, params: ParamStore, beta: float):
        if beta < 0:
            raise ValueError(f"beta must be non-negative, got {beta}")
        self.network = network
        self.params = params.frozen_copy()
        self.beta = beta

    def scores(self, batch: ObservationBatch, bins: NDArray[np.int64]) -> NDArray[np.float64]:
        if self.beta == 0.0:
            return np.zeros(batch.size)
        return self.network.progress_probability(self.params, batch, bins)

    def densify(self, sparse: NDArray[np.float64], scores: NDArray[np.float64]) -> NDArray[np.float64]:
        return sparse + self.beta * scores
