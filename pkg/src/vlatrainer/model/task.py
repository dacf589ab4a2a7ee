from enum import StrEnum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class SuiteId(StrEnum):
    SPATIAL = "spatial"
    OBJECT = "object"
    GOAL = "goal"
    LONG = "long"


class ObjectSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(..., description="Word naming the object in instructions")
    identity: float = Field(..., ge=-1.0, le=1.0, description="Identity feature exposed in observations")
    position: tuple[float, float] = Field(..., description="Nominal table position (x, y)")


class RegionSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    center: tuple[float, float]
    radius: float = Field(..., gt=0.0)


class TaskSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    suite_id: SuiteId
    task_id: int = Field(..., ge=0, description="Global id, unique across the whole suite collection")
    instruction: str
    objects: tuple[ObjectSpec, ...]
    regions: tuple[RegionSpec, ...]
    stages: tuple[tuple[int, int], ...] = Field(..., description="(object index, region index) per stage")
    placement_jitter: float = Field(0.05, ge=0.0)
    yaw_range: float = Field(0.8, ge=0.0)

    @model_validator(mode="after")
    def _check_stages(self) -> "TaskSpec":
        if self.suite_id == SuiteId.LONG and len(self.stages) < 2:
            raise ValueError("long-suite tasks need at least 2 stages")
        if self.suite_id != SuiteId.LONG and len(self.stages) != 1:
            raise ValueError(f"{self.suite_id} tasks have exactly 1 stage")
        for obj_index, region_index in self.stages:
            if not (0 <= obj_index < len(self.objects) and 0 <= region_index < len(self.regions)):
                raise ValueError(f"Stage ({obj_index}, {region_index}) out of range")
        return self


class Suite(BaseModel):
    master_seed: int
    tasks: list[TaskSpec] = Field(default_factory=list)

    def by_id(self) -> dict[int, TaskSpec]:
        return {task.task_id: task for task in self.tasks}

    def instructions(self) -> list[str]:
        return [task.instruction for task in self.tasks]
