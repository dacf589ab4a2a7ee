from enum import StrEnum

from pydantic import BaseModel, Field


class LabelKind(StrEnum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Provenance(StrEnum):
    KEYFRAME_WINDOW = "keyframe-window"
    DEFAULT = "default"


class PseudoLabel(BaseModel):
    episode_id: int = Field(..., ge=0, description="Index of the episode across all labeled trajectory files")
    t: int = Field(..., ge=0, description="Step index within the episode")
    label: LabelKind
    provenance: Provenance


class LabelManifest(BaseModel):
    sources: list[str] = Field(default_factory=list, description="Trajectory files, in episode id order")
    episodes_seen: int = 0
    episodes_labeled: int = 0
    episodes_skipped: int = Field(0, description="Unsuccessful episodes left unlabeled")
    positives: int = 0
    negatives: int = 0


class RprmReport(BaseModel):
    train_examples: int
    holdout_examples: int
    holdout_accuracy: float
    final_loss: float
    loss_curve: list[float] = Field(default_factory=list)
    mean_score_positive: float
    mean_score_negative: float
