from pydantic import BaseModel, Field


class EpisodeRecord(BaseModel):
    """One row of the episodes table stored in a trajectory container header."""

    task_id: int
    seed: int
    success: bool
    start: int = Field(..., ge=0, description="First step row of the episode in the payload tensors")
    length: int = Field(..., ge=0)
    suite_id: str = ""


class DatasetManifest(BaseModel):
    kind: str = Field("demos", description="demos or eval-trajectories")
    count: int = Field(..., description="Episodes stored")
    attempted: int = Field(..., description="Episodes rolled out, including discarded failures")
    episodes_per_task: int
    seeds: list[int] = Field(default_factory=list)
    per_task_success_rate: dict[int, float] = Field(default_factory=dict)
    digest: str
    warnings: list[str] = Field(default_factory=list)
