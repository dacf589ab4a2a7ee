import json
from typing import Any

from pydantic import BaseModel, Field

from vlatrainer.model.metrics import CoverageRecord, IterationMetrics


class MetricsRow(BaseModel):
    iter: int = Field(..., description="Iteration index")
    env_steps: int
    mean_return: float
    mean_episode_len: float
    mean_success_len: float | None = Field(None, description="Empty when no episode succeeded")
    success_rate: float
    episodes: int
    entropy: float
    clip_frac: float
    value_loss: float
    policy_loss: float
    approx_kl: float
    epochs_run: int
    early_stopped: bool
    wall_env: float
    wall_inference: float
    wall_learn: float
    per_task_success: str = Field(..., description="JSON object task id -> success estimate")
    tag: str


class CoverageRow(BaseModel):
    source: str = Field(..., description="sft or rl")
    dx: float
    dy: float


def columns(model: type[BaseModel]) -> list[str]:
    return list(model.model_fields)


def as_cells(row: BaseModel) -> list[Any]:
    return ["" if value is None else value for value in row.model_dump().values()]


def to_metrics_rows(records: list[IterationMetrics]) -> list[MetricsRow]:
    return [
        MetricsRow(
            **record.model_dump(include={
                "iter", "env_steps", "mean_return", "mean_episode_len", "mean_success_len", "success_rate", "episodes",
                "entropy", "clip_frac", "value_loss", "policy_loss", "approx_kl", "epochs_run", "early_stopped", "tag",
            }),
            wall_env=record.wall_times.env,
            wall_inference=record.wall_times.inference,
            wall_learn=record.wall_times.learn,
            per_task_success=json.dumps({str(k): v for k, v in sorted(record.per_task_success.items())}),
        )
        for record in records
    ]


def to_coverage_rows(records: list[CoverageRecord]) -> list[CoverageRow]:
    return [CoverageRow(source=record.source, dx=record.dx, dy=record.dy) for record in records]
