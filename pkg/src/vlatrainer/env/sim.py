"""
Deterministic planar pick-and-place world.

The table surface is the workspace floor (z = -workspace). Objects rest on it
unless attached to the gripper, in which case they move with it.
"""
import logging
from dataclasses import dataclass, replace
from typing import Any, Optional, TypedDict

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vlatrainer.model.task import TaskSpec
from vlatrainer.policy.tokenizer import TokenSequence, Vocabulary, as_action_vector, tokenize_instruction
from vlatrainer.utils.config import SimConfig
from vlatrainer.utils.constants import MAX_STAGES, NUM_OBJECTS

logger = logging.getLogger(__name__)

FEATURES_PER_OBJECT = 6
FEATURE_DIM = 5 + NUM_OBJECTS * FEATURES_PER_OBJECT + 3 + MAX_STAGES


def wrap_angle(angle: float) -> float:
    return float((angle + np.pi) % (2.0 * np.pi) - np.pi)


@dataclass
class ObjectState:
    pos: NDArray[np.float64]
    yaw: float
    identity: float
    attached: bool = False


@dataclass
class RegionState:
    center: NDArray[np.float64]
    radius: float


@dataclass
class WorldState:
    gripper_pos: NDArray[np.float64]
    gripper_yaw: float
    gripper_open: float
    objects: list[ObjectState]
    target_regions: list[RegionState]
    step_index: int = 0
    stage_index: int = 0
    success: bool = False
    done: bool = False

    def attached_index(self) -> Optional[int]:
        for index, obj in enumerate(self.objects):
            if obj.attached:
                return index
        return None

    def copy(self) -> "WorldState":
        return replace(
            self,
            gripper_pos=self.gripper_pos.copy(),
            objects=[replace(o, pos=o.pos.copy()) for o in self.objects],
            target_regions=[replace(r, center=r.center.copy()) for r in self.target_regions],
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "gripper_pos": self.gripper_pos.tolist(),
            "gripper_yaw": float(self.gripper_yaw),
            "gripper_open": float(self.gripper_open),
            "objects": [
                {"pos": o.pos.tolist(), "yaw": float(o.yaw), "identity": float(o.identity), "attached": bool(o.attached)}
                for o in self.objects
            ],
            "target_regions": [{"center": r.center.tolist(), "radius": float(r.radius)} for r in self.target_regions],
            "step_index": int(self.step_index),
            "stage_index": int(self.stage_index),
            "success": bool(self.success),
            "done": bool(self.done),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorldState":
        return cls(
            gripper_pos=np.asarray(data["gripper_pos"], dtype=np.float64),
            gripper_yaw=float(data["gripper_yaw"]),
            gripper_open=float(data["gripper_open"]),
            objects=[
                ObjectState(np.asarray(o["pos"], dtype=np.float64), float(o["yaw"]), float(o["identity"]), bool(o["attached"]))
                for o in data["objects"]
            ],
            target_regions=[RegionState(np.asarray(r["center"], dtype=np.float64), float(r["radius"])) for r in data["target_regions"]],
            step_index=int(data["step_index"]),
            stage_index=int(data["stage_index"]),
            success=bool(data["success"]),
            done=bool(data["done"]),
        )


@dataclass(frozen=True)
class Observation:
    features: NDArray[np.float64]
    instruction_tokens: TokenSequence


class StepInfo(TypedDict):
    success: bool
    stage_index: int
    truncated: bool
    task_id: int
    episode_length: int


@dataclass(frozen=True)
class StepResult:
    next_obs: Observation
    sparse_reward: float
    done: bool
    info: StepInfo


def initial_state(task: TaskSpec, seed: int, sim: SimConfig) -> WorldState:
    """Sample the start state from the task's placement ranges; fully determined by (task, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, task.task_id]))
    floor = -sim.workspace
    jitter = task.placement_jitter
    objects = []
    for spec in task.objects:
        xy = np.asarray(spec.position) + rng.uniform(-jitter, jitter, size=2)
        objects.append(ObjectState(
            pos=np.array([xy[0], xy[1], floor]),
            yaw=float(rng.uniform(-task.yaw_range, task.yaw_range)),
            identity=spec.identity,
        ))
    regions = [RegionState(np.array([r.center[0], r.center[1], floor]), r.radius) for r in task.regions]
    start_xy = rng.uniform(-jitter, jitter, size=2)
    return WorldState(
        gripper_pos=np.array([start_xy[0], start_xy[1], floor + sim.start_height]),
        gripper_yaw=0.0,
        gripper_open=1.0,
        objects=objects,
        target_regions=regions,
    )


def observe(state: WorldState, task: TaskSpec, instruction_tokens: TokenSequence, sim: SimConfig) -> Observation:
    g = state.gripper_pos
    features = [g[0], g[1], g[2], state.gripper_yaw / np.pi, state.gripper_open]
    for obj in state.objects:
        rel = obj.pos - g
        features.extend([rel[0], rel[1], rel[2], wrap_angle(obj.yaw - state.gripper_yaw) / np.pi, obj.identity, float(obj.attached)])
    stage = min(state.stage_index, len(task.stages) - 1)
    region = state.target_regions[task.stages[stage][1]]
    features.extend((region.center - g).tolist())
    one_hot = [0.0] * MAX_STAGES
    one_hot[min(stage, MAX_STAGES - 1)] = 1.0
    features.extend(one_hot)
    return Observation(features=np.asarray(features, dtype=np.float64), instruction_tokens=instruction_tokens)


def transition(state: WorldState, action: ArrayLike, task: TaskSpec, sim: SimConfig) -> WorldState:
    """
    Advance one step.

    Translation and yaw apply first; then the grip command closes (grip >= 0) or
    opens the gripper. Closing an open gripper attaches the nearest object within
    the grasp radius whose yaw error is within tolerance. Opening releases the held
    object onto the table; the release completes the current stage when it is that
    stage's object, inside its region, at a height of at most `place_height`.
    """
    if state.done:
        raise RuntimeError("step called on a finished episode")
    a = as_action_vector(action)
    nxt = state.copy()
    floor = -sim.workspace

    nxt.gripper_pos = np.clip(nxt.gripper_pos + sim.scale_t * a[:3], -sim.workspace, sim.workspace)
    nxt.gripper_yaw = wrap_angle(nxt.gripper_yaw + sim.scale_r * a[5])
    held = nxt.attached_index()
    if held is not None:
        nxt.objects[held].pos = nxt.gripper_pos.copy()
        nxt.objects[held].yaw = nxt.gripper_yaw

    if a[6] >= 0.0:
        if state.gripper_open > 0.5 and held is None:
            candidate = _grasp_candidate(nxt, sim)
            if candidate is not None:
                nxt.objects[candidate].attached = True
                nxt.objects[candidate].pos = nxt.gripper_pos.copy()
                nxt.objects[candidate].yaw = nxt.gripper_yaw
        nxt.gripper_open = 0.0
    else:
        if held is not None:
            obj = nxt.objects[held]
            obj.attached = False
            obj.pos = np.array([obj.pos[0], obj.pos[1], floor])
            height = nxt.gripper_pos[2] - floor
            stage_obj, stage_region = task.stages[nxt.stage_index]
            region = nxt.target_regions[stage_region]
            in_region = np.linalg.norm(obj.pos[:2] - region.center[:2]) <= region.radius
            if held == stage_obj and in_region and height <= sim.place_height:
                nxt.stage_index += 1
                if nxt.stage_index == len(task.stages):
                    nxt.success = True
        nxt.gripper_open = 1.0

    nxt.step_index += 1
    nxt.done = nxt.success or nxt.step_index >= sim.horizon
    return nxt


def _grasp_candidate(state: WorldState, sim: SimConfig) -> Optional[int]:
    best: Optional[int] = None
    best_distance = sim.grasp_radius
    for index, obj in enumerate(state.objects):
        distance = float(np.linalg.norm(obj.pos - state.gripper_pos))
        yaw_error = abs(wrap_angle(obj.yaw - state.gripper_yaw))
        if distance <= best_distance and yaw_error < sim.yaw_tol:
            best, best_distance = index, distance
    return best


class SimEnv:
    """One environment instance; not thread-safe, but instances share no state."""

    def __init__(self, sim: SimConfig, vocab: Vocabulary):
        self.sim = sim
        self.vocab = vocab
        self._task: Optional[TaskSpec] = None
        self._state: Optional[WorldState] = None
        self._tokens: Optional[TokenSequence] = None

    @property
    def task(self) -> TaskSpec:
        if self._task is None:
            raise RuntimeError("Environment not reset")
        return self._task

    @property
    def state(self) -> WorldState:
        if self._state is None:
            raise RuntimeError("Environment not reset")
        return self._state

    @property
    def observation(self) -> Observation:
        assert self._tokens is not None
        return observe(self.state, self.task, self._tokens, self.sim)

    def reset(self, task: TaskSpec, seed: int) -> Observation:
        self._task = task
        self._tokens = tokenize_instruction(task.instruction, self.vocab)
        self._state = initial_state(task, seed, self.sim)
        return self.observation

    def step(self, action: ArrayLike) -> StepResult:
        self._state = transition(self.state, action, self.task, self.sim)
        state = self._state
        truncated = state.done and not state.success
        return StepResult(
            next_obs=self.observation,
            sparse_reward=1.0 if state.success else 0.0,
            done=state.done,
            info=StepInfo(
                success=state.success,
                stage_index=state.stage_index,
                truncated=truncated,
                task_id=self.task.task_id,
                episode_length=state.step_index,
            ),
        )

    def restore(self, task: TaskSpec, state: WorldState) -> None:
        self._task = task
        self._tokens = tokenize_instruction(task.instruction, self.vocab)
        self._state = state
