import numpy as np

from vlatrainer.env.sim import WorldState, wrap_angle
from vlatrainer.model.task import TaskSpec
from vlatrainer.policy.tokenizer import ActionVector
from vlatrainer.utils.config import SimConfig

CARRY_HEIGHT = 0.05


def expert_action(state: WorldState, task: TaskSpec, sim: SimConfig) -> ActionVector:
    """
    Scripted proportional controller that solves the current stage.

    Each translation and yaw component asks for the full remaining offset, divided
    by the per-step scale and clamped, so the gripper lands exactly on its target
    once within one step of it. While approaching, the gripper stays open and closes
    only when centered on the stage object with the yaw aligned; while carrying, it
    stays closed and opens once above the region center low enough to place.
    """
    floor = -sim.workspace
    action = np.zeros(7)
    stage = min(state.stage_index, len(task.stages) - 1)
    obj_index, region_index = task.stages[stage]
    held = state.attached_index()

    if held is not None and held != obj_index:
        action[6] = -1.0
        return action

    if held is None:
        obj = state.objects[obj_index]
        target = np.array([obj.pos[0], obj.pos[1], floor])
        yaw_error = wrap_angle(obj.yaw - state.gripper_yaw)
        distance = float(np.linalg.norm(target - state.gripper_pos))
        aligned = distance < 0.5 * sim.grasp_radius and abs(yaw_error) < 0.5 * sim.yaw_tol
        action[5] = yaw_error / sim.scale_r
        action[6] = 1.0 if aligned and state.gripper_open > 0.5 else -1.0
    else:
        region = state.target_regions[region_index]
        target = np.array([region.center[0], region.center[1], floor + CARRY_HEIGHT])
        xy_distance = float(np.linalg.norm(target[:2] - state.gripper_pos[:2]))
        height = state.gripper_pos[2] - floor
        placed = xy_distance < 0.5 * region.radius and height <= sim.place_height
        action[6] = -1.0 if placed else 1.0

    action[:3] = (target - state.gripper_pos) / sim.scale_t
    return np.clip(action, -1.0, 1.0)
