from pydantic import BaseModel, Field


class SuccessStat(BaseModel):
    episodes: int
    successes: int
    success_rate: float
    ci_low: float = Field(..., description="Wilson 95% lower bound")
    ci_high: float = Field(..., description="Wilson 95% upper bound")


class TaskResult(SuccessStat):
    task_id: int
    suite_id: str
    instruction: str
    mean_success_len: float | None = None


class EvalReport(BaseModel):
    policy: str = Field(..., description="Checkpoint path or 'expert'")
    tag: str
    episodes_per_task: int
    seeds_digest: str
    tasks: list[TaskResult] = Field(default_factory=list)
    suites: dict[str, SuccessStat] = Field(default_factory=dict)
    overall: SuccessStat
