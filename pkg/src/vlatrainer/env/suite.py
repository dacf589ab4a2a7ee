import itertools
import logging
from collections.abc import Callable, Sequence
from typing import Any

import numpy as np

from vlatrainer.errors import ConfigError
from vlatrainer.model.task import ObjectSpec, RegionSpec, Suite, SuiteId, TaskSpec
from vlatrainer.utils.config import SuiteConfig
from vlatrainer.utils.constants import NUM_OBJECTS, OBJECT_COLORS, OBJECT_SPOTS, REGION_SLOTS, SPATIAL_OBJECT
from vlatrainer.utils.rng import stream

logger = logging.getLogger(__name__)

_LINEUP = ("left", "center", "right")


def _regions(radius: float) -> tuple[RegionSpec, ...]:
    return tuple(RegionSpec(name=name, center=center, radius=radius) for name, center in REGION_SLOTS.items())


def _region_index(name: str) -> int:
    return list(REGION_SLOTS).index(name)


def _spatial_candidates(rng: np.random.Generator) -> list[dict[str, Any]]:
    candidates = []
    spots = list(OBJECT_SPOTS)
    for spot, region in itertools.product(spots, REGION_SLOTS):
        others = [s for s in spots if s != spot]
        distractors = [others[i] for i in sorted(rng.choice(len(others), NUM_OBJECTS - 1, replace=False))]
        placed = [spot, *distractors]
        order = rng.permutation(NUM_OBJECTS)
        objects = tuple(
            ObjectSpec(name=SPATIAL_OBJECT, identity=0.0, position=OBJECT_SPOTS[placed[i]]) for i in order
        )
        candidates.append({
            "instruction": f"pick {SPATIAL_OBJECT} {spot} place {region}",
            "objects": objects,
            "stages": ((int(np.flatnonzero(order == 0)[0]), _region_index(region)),),
        })
    return candidates


def _colored_objects(colors: Sequence[str], rng: np.random.Generator) -> tuple[ObjectSpec, ...]:
    spots = [_LINEUP[i] for i in rng.permutation(len(_LINEUP))]
    return tuple(
        ObjectSpec(name=color, identity=OBJECT_COLORS[color], position=OBJECT_SPOTS[spot])
        for color, spot in zip(colors, spots)
    )


def _object_candidates(rng: np.random.Generator) -> list[dict[str, Any]]:
    candidates = []
    palette = list(OBJECT_COLORS)
    for color, region in itertools.product(palette, REGION_SLOTS):
        others = [c for c in palette if c != color]
        distractors = [others[i] for i in sorted(rng.choice(len(others), NUM_OBJECTS - 1, replace=False))]
        candidates.append({
            "instruction": f"pick {color} place {region}",
            "objects": _colored_objects([color, *distractors], rng),
            "stages": ((0, _region_index(region)),),
        })
    return candidates


def _goal_candidates(rng: np.random.Generator) -> list[dict[str, Any]]:
    # Same three objects in every task; only the goal region changes.
    colors = list(OBJECT_COLORS)[:NUM_OBJECTS]
    objects = _colored_objects(colors, rng)
    return [
        {
            "instruction": f"put {color} on {region}",
            "objects": objects,
            "stages": ((colors.index(color), _region_index(region)),),
        }
        for color, region in itertools.product(colors, REGION_SLOTS)
    ]


def _long_candidates(rng: np.random.Generator) -> list[dict[str, Any]]:
    candidates = []
    colors = list(OBJECT_COLORS)[:NUM_OBJECTS]
    regions = list(REGION_SLOTS)
    for first, second in itertools.permutations(colors, 2):
        for r1, r2 in itertools.permutations(regions, 2):
            candidates.append({
                "instruction": f"pick {first} place {r1} then pick {second} place {r2}",
                "objects": _colored_objects(colors, rng),
                "stages": ((colors.index(first), _region_index(r1)), (colors.index(second), _region_index(r2))),
            })
    return candidates


_GENERATORS: dict[SuiteId, Callable[[np.random.Generator], list[dict[str, Any]]]] = {
    SuiteId.SPATIAL: _spatial_candidates,
    SuiteId.OBJECT: _object_candidates,
    SuiteId.GOAL: _goal_candidates,
    SuiteId.LONG: _long_candidates,
}


def make_suite(config: SuiteConfig, master_seed: int, region_radius: float) -> Suite:
    """
    Generate the task collection.

    Spatial tasks vary where the target bowl sits, object tasks vary which colored
    object is the target, goal tasks vary the destination region with a fixed object
    set, and long tasks chain two pick-and-place stages. Task ids are global and
    assigned suite by suite in `config.suites` order.

    Raises:
        ConfigError: When a suite cannot supply `tasks_per_suite` distinct tasks
    """
    tasks: list[TaskSpec] = []
    for suite_index, name in enumerate(config.suites):
        suite_id = SuiteId(name)
        rng = stream(master_seed, suite_index)
        candidates = _GENERATORS[suite_id](rng)
        if config.tasks_per_suite > len(candidates):
            raise ConfigError(
                f"Suite {suite_id} offers {len(candidates)} distinct tasks, {config.tasks_per_suite} requested"
            )
        chosen = sorted(rng.choice(len(candidates), config.tasks_per_suite, replace=False))
        for candidate_index in chosen:
            candidate = candidates[candidate_index]
            tasks.append(TaskSpec(
                suite_id=suite_id,
                task_id=len(tasks),
                instruction=candidate["instruction"],
                objects=candidate["objects"],
                regions=_regions(region_radius),
                stages=candidate["stages"],
                placement_jitter=config.placement_jitter,
                yaw_range=config.yaw_range,
            ))
    logger.info(f"✓ Generated {len(tasks)} tasks across {len(config.suites)} suites")
    return Suite(master_seed=master_seed, tasks=tasks)
