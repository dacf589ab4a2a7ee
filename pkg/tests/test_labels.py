import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from vlatrainer.clients.run_store import RunStore
from vlatrainer.model.labels import LabelKind
from vlatrainer.model.trajectory import Episode, TrajectoryDataset
from vlatrainer.services.demo_service import DemoService
from vlatrainer.services.label_service import (
    LabelService,
    assign_labels,
    detect_keyframes,
    segment_milestones,
    segments,
)
from vlatrainer.utils.config import RprmConfig


def test_milestones_at_gripper_changes():
    assert segment_milestones([1, 1, 1, 0, 0, 1, 1], 0.5) == [2, 4]


def test_constant_gripper_is_one_segment():
    assert segment_milestones([1, 1, 1], 0.5) == []
    assert segments([], 3) == [(0, 2)]


def test_segments_cover_trajectory():
    assert segments([2, 4], 7) == [(0, 2), (3, 4), (5, 6)]


def test_empty_trajectory_rejected():
    with pytest.raises(ValueError):
        segment_milestones([], 0.5)


def test_keyframes_include_stops_and_segment_end():
    positions = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0]])

    assert detect_keyframes(positions, (0, 4), 0.01) == [1, 4]


def test_window_labels_before_each_keyframe():
    labels = assign_labels(10, [4, 9], window=3)

    positives = {t for t, kind in enumerate(labels) if kind == LabelKind.POSITIVE}
    assert positives == {2, 3, 4, 7, 8, 9}


def test_window_clipped_at_start():
    labels = assign_labels(5, [1], window=3)

    assert labels[:3] == [LabelKind.POSITIVE, LabelKind.POSITIVE, LabelKind.NEGATIVE]


def test_unsuccessful_episode_rejected():
    with pytest.raises(ValueError):
        assign_labels(5, [4], window=3, success=False)


def test_label_service_counts_and_skips_failures(suite, vocab, sim):
    dataset, _ = DemoService(sim, vocab).generate_demos(suite, episodes_per_task=1, seed=0)
    dataset.episodes.append(replace(dataset.episodes[0], success=False))

    labels, manifest = LabelService(RprmConfig()).label([dataset], ["demos"])

    assert manifest.episodes_seen == len(dataset)
    assert manifest.episodes_skipped == 1
    assert manifest.positives + manifest.negatives == len(labels)
    assert manifest.positives > 0 and manifest.negatives > 0
    assert {label.episode_id for label in labels} == set(range(len(dataset) - 1))


FIXTURES = Path(__file__).parent / "fixtures" / "labels"


def _fixture_episode(raw: dict) -> Episode:
    steps = len(raw["gripper_open"])
    return Episode(
        task_id=0,
        seed=0,
        success=raw["success"],
        features=np.zeros((steps, 1)),
        instruction=np.zeros(1, dtype=np.int64),
        actions=np.zeros((steps, 7)),
        tokens=np.zeros((steps, 7), dtype=np.int64),
        gripper_open=np.asarray(raw["gripper_open"]),
        gripper_pos=np.asarray(raw["gripper_pos"]),
        sparse_reward=np.zeros(steps),
        done=np.zeros(steps, dtype=bool),
    )


def test_labels_match_hand_computed_fixture(tmp_path):
    fixture = json.loads((FIXTURES / "trajectories.json").read_text(encoding="utf-8"))
    dataset = TrajectoryDataset([_fixture_episode(raw) for raw in fixture["episodes"]])

    labels, manifest = LabelService(RprmConfig(**fixture["config"])).label([dataset], ["fixture"])
    written = RunStore(tmp_path).write_jsonl("labels.jsonl", labels)

    assert written.read_bytes() == (FIXTURES / "expected_labels.jsonl").read_bytes()
    assert (manifest.episodes_labeled, manifest.episodes_skipped) == (3, 1)
    assert (manifest.positives, manifest.negatives) == (13, 8)
