"""
Automatic pseudo-labels for process reward training.

A successful episode is cut into milestones wherever the gripper openness jumps,
each milestone's keyframes are the steps where the end effector (nearly) stops,
and the steps leading into a keyframe are labeled as progress.
"""
import logging
from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike

from vlatrainer.model.labels import LabelKind, LabelManifest, Provenance, PseudoLabel
from vlatrainer.model.trajectory import Episode, TrajectoryDataset
from vlatrainer.utils.config import RprmConfig

logger = logging.getLogger(__name__)

Segment = tuple[int, int]


def segment_milestones(gripper_open: ArrayLike, delta_g: float) -> list[int]:
    """
    Indices t after which a new segment starts: |open[t+1] - open[t]| > delta_g.

    Example:
        >>> segment_milestones([1, 1, 1, 0, 0, 1, 1], 0.5)
        [2, 4]
    """
    openness = np.asarray(gripper_open, dtype=np.float64)
    if openness.size == 0:
        raise ValueError("Cannot segment an empty trajectory")
    jumps = np.abs(np.diff(openness)) > delta_g
    return sorted({int(t) for t in np.flatnonzero(jumps)})


def segments(boundaries: Sequence[int], length: int) -> list[Segment]:
    """Inclusive (start, end) ranges between boundaries, covering 0..length-1."""
    result = []
    start = 0
    for boundary in boundaries:
        result.append((start, boundary))
        start = boundary + 1
    result.append((start, length - 1))
    return result


def detect_keyframes(gripper_pos: ArrayLike, segment: Segment, eps_v: float) -> list[int]:
    """Steps whose end-effector displacement to the next step is below eps_v, plus the segment end."""
    positions = np.asarray(gripper_pos, dtype=np.float64)
    start, end = segment
    if not 0 <= start <= end < len(positions):
        raise ValueError(f"Segment {segment} outside a trajectory of {len(positions)} steps")
    keyframes = {end}
    for t in range(start, end):
        if np.linalg.norm(positions[t + 1] - positions[t]) < eps_v:
            keyframes.add(t)
    return sorted(keyframes)


def assign_labels(length: int, keyframes: Sequence[int], window: int, success: bool = True) -> list[LabelKind]:
    """
    Label steps in [k - window + 1, k] for every keyframe k as positive, the rest negative.

    Raises:
        ValueError: For unsuccessful episodes
    """
    if not success:
        raise ValueError("Only successful episodes can be labeled")
    if window < 1:
        raise ValueError(f"Window must be at least 1, got {window}")
    labels = [LabelKind.NEGATIVE] * length
    for keyframe in keyframes:
        for t in range(max(0, keyframe - window + 1), min(keyframe, length - 1) + 1):
            labels[t] = LabelKind.POSITIVE
    return labels


def label_episode(episode: Episode, episode_id: int, config: RprmConfig) -> list[PseudoLabel]:
    boundaries = segment_milestones(episode.gripper_open, config.delta_g)
    keyframes: list[int] = []
    for segment in segments(boundaries, len(episode)):
        keyframes.extend(detect_keyframes(episode.gripper_pos, segment, config.eps_v))
    kinds = assign_labels(len(episode), keyframes, config.window, episode.success)
    return [
        PseudoLabel(
            episode_id=episode_id,
            t=t,
            label=kind,
            provenance=Provenance.KEYFRAME_WINDOW if kind == LabelKind.POSITIVE else Provenance.DEFAULT,
        )
        for t, kind in enumerate(kinds)
    ]


class LabelService:

    def __init__(self, config: RprmConfig):
        self.config = config

    def label(self, datasets: Sequence[TrajectoryDataset], sources: Sequence[str]) -> tuple[list[PseudoLabel], LabelManifest]:
        """Label every successful episode; episode ids run across `datasets` in order."""
        labels: list[PseudoLabel] = []
        manifest = LabelManifest(sources=list(sources))
        episode_id = 0
        for dataset in datasets:
            for episode in dataset.episodes:
                manifest.episodes_seen += 1
                if episode.success:
                    labels.extend(label_episode(episode, episode_id, self.config))
                    manifest.episodes_labeled += 1
                else:
                    manifest.episodes_skipped += 1
                episode_id += 1
        manifest.positives = sum(1 for label in labels if label.label == LabelKind.POSITIVE)
        manifest.negatives = len(labels) - manifest.positives
        if manifest.episodes_skipped:
            logger.warning(f"Skipped {manifest.episodes_skipped} unsuccessful episodes")
        logger.info(
            f"✓ Labeled {manifest.episodes_labeled} episodes: "
            f"{manifest.positives} positive, {manifest.negatives} negative steps"
        )
        return labels, manifest
