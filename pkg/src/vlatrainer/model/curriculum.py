from collections.abc import Iterable

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, Field


class SuccessTracker(BaseModel):
    """
    Per-task success estimates driving curriculum sampling.

    Rates are exponential moving averages; a task that has not finished an
    episode yet reports the prior.
    """

    alpha: float = Field(0.1, gt=0.0, le=1.0)
    tau: float = Field(0.25, gt=0.0)
    prior: float = Field(0.5, ge=0.0, le=1.0)
    uniform: bool = False
    rates: dict[int, float] = Field(default_factory=dict)
    counts: dict[int, int] = Field(default_factory=dict)

    @classmethod
    def for_tasks(cls, task_ids: Iterable[int], alpha: float = 0.1, tau: float = 0.25,
                  prior: float = 0.5, uniform: bool = False) -> "SuccessTracker":
        ids = sorted(task_ids)
        return cls(
            alpha=alpha, tau=tau, prior=prior, uniform=uniform,
            rates={task_id: prior for task_id in ids},
            counts={task_id: 0 for task_id in ids},
        )

    @property
    def task_ids(self) -> list[int]:
        return sorted(self.rates)

    def update(self, task_id: int, success: bool) -> "SuccessTracker":
        """
        Fold one finished episode into the estimate.

        Example:
            >>> tracker.rates[3]
            0.5
            >>> tracker.update(3, True).rates[3]   # alpha = 0.1
            0.55
        """
        if task_id not in self.rates:
            raise ValueError(f"Unknown task id: {task_id}")
        outcome = 1.0 if success else 0.0
        self.rates[task_id] = (1.0 - self.alpha) * self.rates[task_id] + self.alpha * outcome
        self.counts[task_id] += 1
        return self

    def probabilities(self) -> NDArray[np.float64]:
        """Sampling probabilities in `task_ids` order: softmax of (0.5 - s_j) / tau."""
        ids = self.task_ids
        if self.uniform:
            return np.full(len(ids), 1.0 / len(ids))
        logits = np.array([(0.5 - self.rates[task_id]) / self.tau for task_id in ids])
        weights = np.exp(logits - logits.max())
        result: NDArray[np.float64] = weights / weights.sum()
        return result
