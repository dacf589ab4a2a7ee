import logging
from collections.abc import Sequence

import numpy as np

from vlatrainer.env.vec_env import TaskSampler
from vlatrainer.model.curriculum import SuccessTracker
from vlatrainer.model.task import TaskSpec

logger = logging.getLogger(__name__)


def draw_index(probabilities: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw consuming exactly one uniform."""
    cdf = np.cumsum(probabilities)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(probabilities) - 1)


def sample_task(tracker: SuccessTracker, rng: np.random.Generator) -> int:
    return tracker.task_ids[draw_index(tracker.probabilities(), rng)]


class CurriculumService:
    """
    Owns the success tracker between rollout phases.

    Rollouts sample from a frozen snapshot of the probabilities; finished episodes are
    queued during the phase and folded in afterwards, in (step, env) order.
    """

    def __init__(self, tracker: SuccessTracker, tasks: Sequence[TaskSpec]):
        self.tracker = tracker
        self.tasks_by_id = {task.task_id: task for task in tasks}
        missing = set(tracker.task_ids) - set(self.tasks_by_id)
        if missing:
            raise ValueError(f"Tracker references unknown tasks: {sorted(missing)}")

    def snapshot_sampler(self) -> TaskSampler:
        task_ids = self.tracker.task_ids
        probabilities = self.tracker.probabilities()
        tasks_by_id = self.tasks_by_id

        def sampler(rng: np.random.Generator) -> TaskSpec:
            return tasks_by_id[task_ids[draw_index(probabilities, rng)]]

        return sampler

    def apply(self, outcomes: Sequence[tuple[int, bool]]) -> None:
        for task_id, success in outcomes:
            self.tracker.update(task_id, success)
        if outcomes:
            logger.debug(f"Curriculum absorbed {len(outcomes)} episode outcomes")
