import logging
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from vlatrainer.errors import OrchestratorError
from vlatrainer.nn.params import ParamStore
from vlatrainer.orchestrator.shards import InferenceBatch
from vlatrainer.policy.network import DecodeResult, PolicyNetwork

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightSnapshot:
    params: ParamStore
    version: int


class InferenceEngine:
    """
    Central decoder over an immutable weight snapshot.

    The learner publishes weights with `broadcast_weights` between phases; during a
    rollout phase the snapshot is pinned and publishing is refused.
    """

    def __init__(self, network: PolicyNetwork, version: int = 0):
        self.network = network
        self.version = version
        self.snapshot: Optional[WeightSnapshot] = None
        self._rollout_active = False

    def broadcast_weights(self, params: ParamStore) -> WeightSnapshot:
        if self._rollout_active:
            raise OrchestratorError("Weight broadcast refused during an active rollout phase")
        self.version += 1
        self.snapshot = WeightSnapshot(params=params.frozen_copy(), version=self.version)
        logger.debug(f"Broadcast weights version {self.version}")
        return self.snapshot

    @contextmanager
    def rollout_phase(self) -> Iterator[WeightSnapshot]:
        snapshot = self._require_snapshot()
        self._rollout_active = True
        try:
            yield snapshot
        finally:
            self._rollout_active = False

    def _require_snapshot(self) -> WeightSnapshot:
        if self.snapshot is None:
            raise OrchestratorError("No weights broadcast yet")
        return self.snapshot

    def batched_decode(
        self,
        batch: InferenceBatch,
        temperature: float,
        rngs: Sequence[np.random.Generator],
        snapshot: Optional[WeightSnapshot] = None,
    ) -> DecodeResult:
        """
        Decode every row of `batch` in one pass; row i draws only from `rngs[i]`,
        so the result equals decoding each observation alone with its own stream.
        """
        weights = snapshot or self._require_snapshot()
        return self.network.decode(weights.params, self.network.batch(batch.observations), temperature, rngs)

    def values(self, batch: InferenceBatch, snapshot: Optional[WeightSnapshot] = None) -> NDArray[np.float64]:
        weights = snapshot or self._require_snapshot()
        return self.network.values(weights.params, self.network.batch(batch.observations))
