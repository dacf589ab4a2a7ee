import csv
import json

import pytest

from vlatrainer.clients.run_store import RunStore
from vlatrainer.dto.export.export_rows import CoverageRow, MetricsRow, columns
from vlatrainer.model.metrics import CoverageRecord, IterationMetrics, WallTimes
from vlatrainer.services.export_service import ExportKind, ExportService


def _metrics(iteration: int, success_len) -> IterationMetrics:
    return IterationMetrics(
        iter=iteration, env_steps=64 * (iteration + 1), mean_return=0.5, mean_episode_len=30.0,
        mean_success_len=success_len, success_rate=0.25, episodes=4, entropy=12.0, clip_frac=0.1,
        value_loss=0.2, policy_loss=-0.01, approx_kl=0.003, epochs_run=4, early_stopped=False,
        per_task_success={1: 0.6, 0: 0.4}, wall_times=WallTimes(env=1.0, inference=2.0, learn=3.0), tag="default",
    )


async def test_metrics_csv(tmp_path):
    async with RunStore(tmp_path) as store:
        store.write_jsonl("train/default/metrics.jsonl", [_metrics(0, None), _metrics(1, 21.5)])

        path = ExportService(store).export(ExportKind.METRICS, "default")

    assert path == tmp_path / "exports" / "default-metrics.csv"
    rows = list(csv.reader(path.open()))
    assert rows[0] == columns(MetricsRow)
    assert len(rows) == 3
    record = dict(zip(rows[0], rows[1]))
    assert record["mean_success_len"] == ""
    assert record["wall_learn"] == "3.0"
    assert json.loads(record["per_task_success"]) == {"0": 0.4, "1": 0.6}
    assert dict(zip(rows[0], rows[2]))["mean_success_len"] == "21.5"


async def test_coverage_csv_is_idempotent(tmp_path):
    async with RunStore(tmp_path) as store:
        store.write_jsonl("train/no-rprm/coverage.jsonl", [
            CoverageRecord(source="sft", iter=0, dx=0.1, dy=-0.2),
            CoverageRecord(source="rl", iter=3, dx=0.5, dy=0.5),
        ])
        service = ExportService(store)

        first = service.export(ExportKind.ACTION_COVERAGE, "no-rprm").read_bytes()
        second = service.export(ExportKind.ACTION_COVERAGE, "no-rprm").read_bytes()

    assert first == second
    assert first.decode().splitlines() == [",".join(columns(CoverageRow)), "sft,0.1,-0.2", "rl,0.5,0.5"]


async def test_missing_log(tmp_path):
    async with RunStore(tmp_path) as store:
        with pytest.raises(FileNotFoundError):
            ExportService(store).export(ExportKind.METRICS, "absent")
