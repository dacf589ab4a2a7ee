import csv
import io
import json
import logging
import os
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, Optional, TypeVar

from pydantic import BaseModel

from vlatrainer.clients.checkpoint_client import CheckpointClient
from vlatrainer.model.task import Suite
from vlatrainer.policy.tokenizer import Vocabulary
from vlatrainer.utils.config import RunConfig
from vlatrainer.utils.constants import CONFIG_FILE, SUITE_FILE, VOCAB_FILE

logger = logging.getLogger(__name__)

TModel = TypeVar("TModel", bound=BaseModel)


class RunStore:
    """File-system adapter for one run directory."""

    def __init__(self, root: Path, checkpoints: Optional[CheckpointClient] = None):
        self.root = root
        self.checkpoints = checkpoints or CheckpointClient()

    async def __aenter__(self) -> "RunStore":
        self.root.mkdir(parents=True, exist_ok=True)
        logger.info(f"Using run directory {self.root}")
        return self

    async def __aexit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        logger.debug(f"Closed run directory {self.root}")

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def _write_text(self, relative: Path, text: str) -> Path:
        target = self.root / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, target)
        return target

    def write_json(self, relative: str | Path, payload: BaseModel | dict[str, Any] | list[Any]) -> Path:
        if isinstance(payload, BaseModel):
            text = payload.model_dump_json(indent=2)
        else:
            text = json.dumps(payload, indent=2, sort_keys=True)
        return self._write_text(Path(relative), text + "\n")

    def read_json(self, relative: str | Path) -> Any:
        return json.loads((self.root / relative).read_text(encoding="utf-8"))

    def read_model(self, relative: str | Path, model: type[TModel]) -> TModel:
        return model.model_validate_json((self.root / relative).read_text(encoding="utf-8"))

    def write_jsonl(self, relative: str | Path, records: Iterable[BaseModel]) -> Path:
        return self._write_text(Path(relative), "".join(r.model_dump_json() + "\n" for r in records))

    def append_jsonl(self, relative: str | Path, records: Iterable[BaseModel]) -> None:
        target = self.root / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("a", encoding="utf-8") as handle:
            for record in records:
                handle.write(record.model_dump_json() + "\n")

    def read_jsonl(self, relative: str | Path, model: type[TModel]) -> list[TModel]:
        target = self.root / relative
        if not target.exists():
            return []
        return [model.model_validate_json(line) for line in target.read_text(encoding="utf-8").splitlines() if line.strip()]

    def truncate_jsonl(self, relative: str | Path, model: type[TModel], keep: int) -> None:
        """Drop records past the first `keep`; used when resuming from a checkpoint."""
        records = self.read_jsonl(relative, model)
        if len(records) > keep:
            self.write_jsonl(relative, records[:keep])

    def write_csv(self, relative: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return self._write_text(Path(relative), buffer.getvalue())

    def echo_config(self, config: RunConfig) -> Path:
        return self._write_text(Path(CONFIG_FILE), config.canonical_json() + "\n")

    def write_vocab(self, vocab: Vocabulary) -> Path:
        return self._write_text(Path(VOCAB_FILE), vocab.to_tsv())

    def read_vocab(self, instruction_length: int) -> Vocabulary:
        return Vocabulary.from_tsv((self.root / VOCAB_FILE).read_text(encoding="utf-8"), instruction_length)

    def write_suite(self, suite: Suite) -> Path:
        return self.write_json(SUITE_FILE, suite)

    def read_suite(self) -> Suite:
        return self.read_model(SUITE_FILE, Suite)

    def has(self, relative: str | Path) -> bool:
        return (self.root / relative).exists()
