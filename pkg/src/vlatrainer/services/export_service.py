import logging
from enum import StrEnum
from pathlib import Path

from vlatrainer.clients.run_store import RunStore
from vlatrainer.dto.export.export_rows import (
    CoverageRow,
    MetricsRow,
    as_cells,
    columns,
    to_coverage_rows,
    to_metrics_rows,
)
from vlatrainer.model.metrics import CoverageRecord, IterationMetrics
from vlatrainer.utils.constants import COVERAGE_FILE, EXPORTS_DIR, METRICS_FILE, TRAIN_DIR

logger = logging.getLogger(__name__)


class ExportKind(StrEnum):
    METRICS = "metrics"
    ACTION_COVERAGE = "action-coverage"


class ExportService:
    """Reformats training logs into CSV for external plotting; never recomputes anything."""

    def __init__(self, store: RunStore):
        self.store = store

    def export(self, kind: ExportKind, tag: str) -> Path:
        """
        Write `exports/<tag>-<kind>.csv` from the JSONL logs of training run `tag`.

        Raises:
            FileNotFoundError: When the run has no log of that kind
        """
        train_dir = Path(TRAIN_DIR) / tag
        source = train_dir / (METRICS_FILE if kind == ExportKind.METRICS else COVERAGE_FILE)
        if not self.store.has(source):
            raise FileNotFoundError(f"No {source} in {self.store.root}")
        target = Path(EXPORTS_DIR) / f"{tag}-{kind}.csv"

        if kind == ExportKind.METRICS:
            metric_rows = to_metrics_rows(self.store.read_jsonl(source, IterationMetrics))
            path = self.store.write_csv(target, columns(MetricsRow), (as_cells(row) for row in metric_rows))
            count = len(metric_rows)
        else:
            coverage_rows = to_coverage_rows(self.store.read_jsonl(source, CoverageRecord))
            path = self.store.write_csv(target, columns(CoverageRow), (as_cells(row) for row in coverage_rows))
            count = len(coverage_rows)
        logger.info(f"✓ Exported {count} {kind} rows to {path}")
        return path
