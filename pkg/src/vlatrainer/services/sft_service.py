import logging
from collections.abc import Mapping

import numpy as np
from numpy.typing import NDArray

from vlatrainer.errors import NumericError
from vlatrainer.model.metrics import SftEpoch
from vlatrainer.model.trajectory import TrajectoryDataset
from vlatrainer.nn.optim import adam_step
from vlatrainer.nn.params import ParamStore, TensorBuffer
from vlatrainer.policy.network import ObservationBatch, PolicyNetwork
from vlatrainer.utils.config import SftConfig
from vlatrainer.utils.rng import StreamPurpose, stream

logger = logging.getLogger(__name__)

VALUE_HEAD_PREFIX = "value_head."
DIVERGENCE_FACTOR = 2.0
DIVERGENCE_PATIENCE = 3


def complete_grads(store: ParamStore, grads: Mapping[str, NDArray[np.float64]]) -> dict[str, NDArray[np.float64]]:
    """Add zero gradients for parameters the graph did not touch."""
    return {name: grads[name] if name in grads else np.zeros_like(store[name]) for name in store}


def bc_loss_and_grads(
    network: PolicyNetwork,
    params: Mapping[str, TensorBuffer],
    batch: ObservationBatch,
    bins: NDArray[np.int64],
) -> tuple[float, dict[str, NDArray[np.float64]], float]:
    """
    Mean per-token cross-entropy of the teacher-forced policy against `bins`.

    Returns:
        (loss, gradients, fraction of tokens where the argmax matches the target)
    """
    graph = network.graph(params, batch)
    nodes = graph.teacher_force(bins)
    count = batch.size * len(nodes)
    loss = sum(float(graph.evaluate(node).sum()) for node in nodes) / count
    hits = sum(
        int(np.sum(np.argmax(graph.graph.value(logits), axis=1) == bins[:, step]))
        for step, logits in enumerate(graph.logits)
    )
    grads = graph.backward({node: np.full(batch.size, 1.0 / count) for node in nodes})
    return loss, grads, hits / count


class SftService:

    def __init__(self, network: PolicyNetwork, config: SftConfig, master_seed: int):
        self.network = network
        self.config = config
        self.master_seed = master_seed

    def bc_train(self, params: ParamStore, data: TrajectoryDataset) -> tuple[ParamStore, list[SftEpoch]]:
        """
        Behavior cloning on the quantized expert tokens.

        Only token-path parameters move; the value head keeps its initialization.

        Raises:
            ValueError: On an empty dataset
            NumericError: When the epoch loss stays above twice the first epoch's loss
                for three consecutive epochs
        """
        if not len(data):
            raise ValueError("Behavior cloning needs a nonempty dataset")
        arrays = data.stacked()
        bins = self.network.tokens_to_bins(arrays["tokens"])
        frozen = params.names(VALUE_HEAD_PREFIX)
        rng = stream(self.master_seed, int(StreamPurpose.LEARNER), 0)
        total = bins.shape[0]
        logger.info(f"Starting behavior cloning on {len(data)} episodes ({total} steps)")

        curve: list[SftEpoch] = []
        initial_loss = None
        strikes = 0
        for epoch in range(self.config.epochs):
            order = rng.permutation(total)
            weighted_loss = 0.0
            weighted_hits = 0.0
            for start in range(0, total, self.config.batch_size):
                rows = order[start:start + self.config.batch_size]
                batch = ObservationBatch.from_arrays(arrays["features"][rows], arrays["instruction"][rows], self.network.shape)
                loss, grads, accuracy = bc_loss_and_grads(self.network, params, batch, bins[rows])
                if not np.isfinite(loss):
                    raise NumericError(f"Non-finite behavior cloning loss at epoch {epoch}")
                adam_step(params, complete_grads(params, grads), self.config.lr, frozen=frozen)
                weighted_loss += loss * len(rows)
                weighted_hits += accuracy * len(rows)
            record = SftEpoch(epoch=epoch, loss=weighted_loss / total, token_accuracy=weighted_hits / total)
            curve.append(record)
            logger.info(f"BC epoch {epoch}: loss {record.loss:.4f}, token accuracy {record.token_accuracy:.3f}")

            if initial_loss is None:
                initial_loss = record.loss
            strikes = strikes + 1 if record.loss > DIVERGENCE_FACTOR * initial_loss else 0
            if strikes >= DIVERGENCE_PATIENCE:
                history = ", ".join(f"{r.loss:.4f}" for r in curve)
                raise NumericError(f"Behavior cloning diverged (initial loss {initial_loss:.4f}; epoch losses {history})")

        logger.info(f"✓ Behavior cloning finished with loss {curve[-1].loss:.4f}")
        return params, curve
