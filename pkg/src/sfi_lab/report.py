"""Deterministic CSV/JSON artifact writers (UTF-8, LF, RFC-4180 quoting)."""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

import sfi_lab
from sfi_lab.experiment import AlphaSweepRow, BatchOutcome, DistanceRow
from sfi_lab.metrics import METRIC_NAMES


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, allow_nan=False) + "\n"


def write_json(path: Path, obj) -> None:
    path.write_text(dumps(obj), encoding="utf-8", newline="\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return v


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def metric_rows(outcomes: Sequence[BatchOutcome]):
    """Long-format rows: batch, dataset, source, alpha, metric, value."""
    for o in outcomes:
        b = o.summary.batch
        for m in METRIC_NAMES:
            yield (b, None, "reference", None, m, getattr(o.summary.reference, m))
        for d in o.datasets:
            for m in METRIC_NAMES:
                yield (b, d.dataset, "raw", None, m, getattr(d.raw, m))
            for a, ms in d.calibrated.items():
                for m in METRIC_NAMES:
                    yield (b, d.dataset, "calibrated", a, m, getattr(ms, m))


def write_metrics_csv(path: Path, outcomes: Sequence[BatchOutcome]) -> None:
    write_rows(path, ("batch", "dataset", "source", "alpha", "metric", "value"), metric_rows(outcomes))


def write_sweep_csv(path: Path, rows: Sequence[AlphaSweepRow]) -> None:
    header = ("metric", "alpha", "mean_improvement", "ci_low", "ci_high", "p_value", "significant", "n_batches")
    write_rows(path, header, (tuple(asdict(r)[h] for h in header) for r in rows))


def write_distance_csv(path: Path, rows: Sequence[DistanceRow]) -> None:
    header = ("metric", "d_raw", "d_cal", "reduction", "percent_closer", "p_value")
    write_rows(path, header, (tuple(asdict(r)[h] for h in header) for r in rows))


def versions() -> dict:
    return {"sfi_lab": sfi_lab.__version__, "numpy": np.__version__, "python": platform.python_version()}
