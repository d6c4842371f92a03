"""JSON-lines metrics stream and CSV export."""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Iterator

from ..exceptions import ConfigError

FIELDS = (
    "iteration",
    "prompt_id",
    "lambda",
    "exact_kl",
    "exact_reward",
    "mean_reward",
    "grad_norm_dense",
    "grad_norm_sparse",
    "grad_norm_total",
    "wall_ms",
)


class MetricsParseError(ConfigError):
    """A metrics line is not a valid JSON object with the expected fields."""


class MetricsWriter:
    """Append-only JSON-lines writer; each record is flushed as soon as it is written."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._last = -1

    def write(self, record: dict) -> None:
        if record["iteration"] <= self._last:
            raise ValueError("metrics iterations must increase")
        self._last = record["iteration"]
        self._fh.write(json.dumps({k: record.get(k) for k in FIELDS}) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str | os.PathLike) -> Iterator[dict]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricsParseError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "iteration" not in rec:
                raise MetricsParseError(f"{path}:{lineno}: record lacks an 'iteration' field")
            yield rec


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def emit_plot_data(metrics_path: str | os.PathLike, csv_path: str | os.PathLike) -> int:
    """Flatten a metrics file to CSV; returns the number of data rows written."""
    n = 0
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELDS)
        for rec in read_metrics(metrics_path):
            writer.writerow([_cell(rec.get(k)) for k in FIELDS])
            n += 1
    return n
