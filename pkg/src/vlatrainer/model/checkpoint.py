from typing import Any, Optional

from pydantic import BaseModel, Field, model_validator


class TensorEntry(BaseModel):
    name: str
    shape: list[int] = Field(..., description="Row-major shape; empty for scalars")
    offset: int = Field(..., ge=0, description="Byte offset into the payload")
    length: int = Field(..., ge=0, description="Byte length in the payload")

    @model_validator(mode="after")
    def _length_matches_shape(self) -> "TensorEntry":
        count = 1
        for dim in self.shape:
            if dim < 0:
                raise ValueError(f"negative dimension in {self.shape}")
            count *= dim
        if self.length != 8 * count:
            raise ValueError(f"length {self.length} does not hold shape {self.shape} of 64-bit floats")
        return self


class CheckpointHeader(BaseModel):
    kind: str = Field(..., description="policy, rprm, trainer, or trajectories")
    tensors: list[TensorEntry] = Field(default_factory=list)
    rng_states: dict[str, Any] = Field(default_factory=dict)
    tracker: Optional[dict[str, Any]] = None
    counters: dict[str, int] = Field(default_factory=dict)
    config_digest: str = ""
    extra: dict[str, Any] = Field(default_factory=dict)
