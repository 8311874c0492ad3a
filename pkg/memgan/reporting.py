"""Report serialization: JSON documents and CSV tables."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

import numpy as np
import pandas as pd

SCHEMA_VERSION = 1
JSON_FORMAT = "json"
CSV_FORMAT = "csv"
FORMATS = (JSON_FORMAT, CSV_FORMAT)


def _plain(value: Any) -> Any:
    """Convert numpy scalars and arrays to builtins; non-finite floats become None."""
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def build_report(body: Mapping[str, Any], config: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Wrap an experiment body with the schema version and the configuration that produced it."""
    report: Dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    if config is not None:
        report["config"] = config
    report.update(body)
    return _plain(report)


def dumps(report: Mapping[str, Any]) -> str:
    """Deterministic JSON text: sorted keys, no timestamps."""
    return json.dumps(_plain(report), indent=2, sort_keys=True)


def rows_frame(rows: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    return pd.DataFrame([dict(row) for row in rows])


def write_report(report: Mapping[str, Any], path: Path, fmt: str = JSON_FORMAT) -> List[Path]:
    """
    Write a report.

    JSON writes the full document and, when the report has rows, a sibling
    `<stem>.csv` table. CSV writes only the row table.

    Returns:
        The paths written
    """
    if fmt not in FORMATS:
        raise ValueError(f"Unknown output format: {fmt}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = report.get("rows") or []
    if fmt == CSV_FORMAT:
        rows_frame(rows).to_csv(path, index=False)
        return [path]
    path.write_text(dumps(report) + "\n", encoding="utf-8")
    written = [path]
    if rows:
        table = path.with_suffix(".csv")
        rows_frame(rows).to_csv(table, index=False)
        written.append(table)
    return written


def write_trace(trace: pd.DataFrame, path: Path) -> Path:
    """Training trace CSV: step, real_term, fake_term, gap, grad_norm."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(path, index=False)
    return path
