from typing import Optional

from pydantic import BaseModel, Field

from vlatrainer.utils.constants import ENTROPY_DEFINITION


class WallTimes(BaseModel):
    env: float = 0.0
    inference: float = 0.0
    learn: float = 0.0


class IterationMetrics(BaseModel):
    iter: int
    env_steps: int
    mean_return: float
    mean_episode_len: float
    mean_success_len: Optional[float] = Field(None, description="Mean length of successful episodes, absent if none finished")
    success_rate: float
    episodes: int
    entropy: float
    clip_frac: float
    value_loss: float
    policy_loss: float
    approx_kl: float
    epochs_run: int
    early_stopped: bool
    per_task_success: dict[int, float] = Field(default_factory=dict, description="Curriculum success estimate per task")
    wall_times: WallTimes = Field(default_factory=WallTimes)
    tag: str = "default"
    entropy_definition: str = ENTROPY_DEFINITION


class EvalPoint(BaseModel):
    iter: int
    env_steps: int
    success_rate: float
    per_suite: dict[str, float] = Field(default_factory=dict)


class CoverageRecord(BaseModel):
    source: str = Field(..., description="sft or rl")
    iter: int
    dx: float
    dy: float


class SftEpoch(BaseModel):
    epoch: int
    loss: float
    token_accuracy: float
