"""CSV and JSON persistence for experiment outputs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, List, Sequence

from relu_lab.harness.experiments import ExperimentOutput


def write_csv(path: Path, rows: Sequence[dict], columns: Sequence[str] = ()) -> None:
    """Headered UTF-8 CSV with LF line endings; columns default to first-row order."""
    cols = list(columns) or (list(rows[0].keys()) if rows else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in cols})


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "item"):
        return obj.item()
    return obj


def dumps(summary: dict) -> str:
    return json.dumps(_jsonable(summary), indent=2, sort_keys=True)


def save_output(out: ExperimentOutput, out_dir: Path, prefix: str) -> Dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}
    for name, rows in out.tables.items():
        path = out_dir / f"{prefix}_{name}.csv"
        write_csv(path, rows)
        written[name] = path
    path = out_dir / f"{prefix}_summary.json"
    path.write_text(dumps(out.summary) + "\n", encoding="utf-8")
    written["summary"] = path
    return written


def read_csv(path: Path) -> List[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
