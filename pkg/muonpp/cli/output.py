import logging
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from muonpp.cli.config import RunConfig, format_value
from muonpp.fileio import atomic_write_text
from muonpp.services.linalg.matrix import write_mat1
from muonpp.services.rmt.dto import ExperimentReport


class RunOutput:
    """
    Every file a run produces, written under one directory with write-then-rename.

    Only the manifest carries a timestamp; the other files are a pure function of the
    resolved configuration.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.written: List[Path] = []
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def path(self, name: str) -> Path:
        return self.directory / name

    def write_text(self, name: str, text: str) -> Path:
        path = atomic_write_text(self.path(name), text)
        self.written.append(path)
        self.logger.info(f"Wrote {path}")
        return path

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        return self.write_text(name, frame.to_csv(index=False))

    def write_rows(self, name: str, rows: List[Dict[str, Any]]) -> Path:
        return self.write_frame(name, pd.DataFrame(rows))

    def write_matrix(self, name: str, matrix) -> Path:
        path = write_mat1(self.path(name), matrix)
        self.written.append(path)
        self.logger.info(f"Wrote {path}")
        return path

    def write_manifest(self, config: RunConfig) -> Path:
        created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return self.write_text("manifest.txt", "\n".join(config.manifest_lines(created)) + "\n")

    def write_report(self, report: ExperimentReport) -> None:
        """``<name>.csv``, ``<name>.verdict.txt`` and the aggregates in ``<name>.summary.txt``."""
        self.write_rows(f"{report.name}.csv", report.rows)
        self.write_text(f"{report.name}.verdict.txt", report.verdict_line + "\n")
        lines = [f"{key} = {_summary_value(value)}" for key, value in report.summary.items()]
        lines.extend(f"parameter.{key} = {_summary_value(value)}" for key, value in report.parameters.items())
        self.write_text(f"{report.name}.summary.txt", "\n".join(lines) + "\n")


def _summary_value(value: Any) -> str:
    if isinstance(value, Enum):
        value = value.value
    if isinstance(value, (list, tuple)):
        if value and all(isinstance(item, (list, tuple)) for item in value):
            return ",".join("x".join(str(part) for part in item) for item in value)
        return ",".join(_summary_value(item) for item in value)
    if isinstance(value, dict):
        return ",".join(f"{key}:{_summary_value(item)}" for key, item in value.items())
    if hasattr(value, "item"):
        value = value.item()
    return format_value(value)
