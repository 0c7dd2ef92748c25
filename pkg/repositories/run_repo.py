"""File persistence for run records.

Each run writes two files next to each other:

    <run_id>.csv    one row per result, header first
    <run_id>.json   {"data": {"rows", "summary"}, "meta": {...}, "errors": []}

Both are written to a temp file in the target directory and renamed into
place, so a reader never sees a half-written file.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable

from config import Config
from core.errors import ValidationError
from core.response import json_success
from schemas.results import RunRecord

logger = logging.getLogger(__name__)


def _columns(rows: Iterable[dict[str, Any]]) -> list[str]:
    cols: dict[str, None] = {}
    for r in rows:
        for k in r:
            cols.setdefault(k, None)
    return list(cols)


class RunRepository:
    """Writes run records as CSV + JSON and reads them back."""

    def __init__(self, root: str | os.PathLike | None = None):
        self._root = Path(root if root is not None else Config.OUTPUT_DIR)

    @property
    def root(self) -> Path:
        return self._root

    def paths(self, record: RunRecord, output: str | os.PathLike | None = None) -> tuple[Path, Path]:
        """(csv, json) targets. ``output`` is a directory, or a file path whose suffix is replaced."""
        if output is None:
            base = self._root / record.run_id
        else:
            out = Path(output)
            base = out.with_suffix("") if out.suffix in (".csv", ".json") else out / record.run_id
        return base.with_suffix(".csv"), base.with_suffix(".json")

    # ---- Write ----
    @staticmethod
    def csv_text(rows: list[dict[str, Any]]) -> str:
        buf = io.StringIO()
        cols = _columns(rows)
        if not cols:
            return ""
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in r.items()})
        return buf.getvalue()

    @staticmethod
    def json_text(record: RunRecord) -> str:
        meta = record.model_dump(mode="json", exclude={"rows", "summary"})
        env = json_success({"rows": record.rows, "summary": record.summary}, meta=meta)
        return json.dumps(env, indent=2) + "\n"

    @staticmethod
    def _atomic_write(target: Path, text: str) -> None:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".run-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, target)
        except Exception:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def save(self, record: RunRecord, output: str | os.PathLike | None = None) -> tuple[Path, Path]:
        csv_path, json_path = self.paths(record, output)
        self._atomic_write(csv_path, self.csv_text(record.rows))
        self._atomic_write(json_path, self.json_text(record))
        logger.info("run %s: %d rows -> %s", record.run_id, len(record.rows), csv_path)
        return csv_path, json_path

    # ---- Read ----
    @staticmethod
    def loads(text: str) -> RunRecord:
        try:
            env = json.loads(text)
            data, meta = env["data"], env["meta"]
            return RunRecord.model_validate({**meta, "rows": data["rows"], "summary": data["summary"]})
        except (ValueError, KeyError, TypeError) as exc:
            raise ValidationError(f"malformed run record: {exc}") from None

    def load(self, path: str | os.PathLike) -> RunRecord:
        """Load a record from its JSON file (a CSV path finds its JSON sibling)."""
        p = Path(path)
        if p.suffix == ".csv":
            p = p.with_suffix(".json")
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read run record {p}: {exc.strerror}") from None
        return self.loads(text)


__all__ = ["RunRepository"]
