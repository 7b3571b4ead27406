"""Fidelity-aware multiplicative recalibration of predicted probabilities.

A prediction is scaled by ``1 + alpha * (sfi - ref) / ref`` where ``ref`` is
the mean SFI of the training cohort, then clipped into [0, 1]. No target
labels are needed to apply it; labels are only used to estimate the
least-squares optimal ``alpha`` and to score the change in squared error.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from sfi_lab.errors import DegenerateInputError, DomainError


@dataclass(frozen=True)
class CalibrationParams:
    alpha: float
    ref_mean_sfi: float

    def __post_init__(self):
        if not self.ref_mean_sfi > 0:
            raise DomainError(f"ref_mean_sfi must be > 0, got {self.ref_mean_sfi}")
        if not np.isfinite(self.alpha):
            raise DomainError("alpha must be finite")


def relative_fidelity(sfi, ref_mean_sfi: float) -> np.ndarray:
    if not ref_mean_sfi > 0:
        raise DomainError(f"ref_mean_sfi must be > 0, got {ref_mean_sfi}")
    return (np.asarray(sfi, dtype=float) - ref_mean_sfi) / ref_mean_sfi


def calibrate_unclipped(y_raw, sfi, params: CalibrationParams) -> np.ndarray:
    return np.asarray(y_raw, dtype=float) * (1.0 + params.alpha * relative_fidelity(sfi, params.ref_mean_sfi))


def calibrate(y_raw, sfi, params: CalibrationParams):
    """Calibrated probability for scalars or arrays, clipped into [0, 1]."""
    y = np.asarray(y_raw, dtype=float)
    s = np.asarray(sfi, dtype=float)
    if np.any((y < 0) | (y > 1)) or np.any((s < 0) | (s > 1)):
        raise DomainError("y_raw and sfi must lie in [0, 1]")
    out = np.clip(calibrate_unclipped(y, s, params), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def estimate_optimal_alpha(labels, y_raw, sfi, ref_mean_sfi: float) -> float:
    """Closed-form least-squares alpha for the unclipped adjustment.

    alpha* = E[(Y - y) * y * r] / E[y^2 * r^2], r = (sfi - ref) / ref.
    """
    Y = np.asarray(labels, dtype=float)
    y = np.asarray(y_raw, dtype=float)
    r = relative_fidelity(sfi, ref_mean_sfi)
    if not (len(Y) == len(y) == len(r)) or len(Y) < 2:
        raise DomainError("labels, y_raw and sfi need equal lengths >= 2")
    den = np.mean(y**2 * r**2)
    if den == 0:
        raise DegenerateInputError("all predictions or all fidelity deviations are zero")
    return float(np.mean((Y - y) * y * r) / den)


def calibration_error_delta(labels, y_raw, y_cal) -> float:
    """Mean reduction in squared error; positive when calibration helped."""
    Y = np.asarray(labels, dtype=float)
    a = np.asarray(y_raw, dtype=float)
    b = np.asarray(y_cal, dtype=float)
    if len(Y) == 0:
        raise DomainError("empty input")
    if not len(Y) == len(a) == len(b):
        raise DomainError("labels, y_raw and y_cal must have equal lengths")
    return float(np.mean((Y - a) ** 2 - (Y - b) ** 2))


def write_calibration_csv(fh, patient_ids, y_raw, sfi, y_cal, params: CalibrationParams) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["patient_id", "y_raw", "sfi", "y_calibrated", "alpha", "ref_mean_sfi"])
    for row in zip(patient_ids, y_raw, sfi, y_cal):
        writer.writerow([row[0], float(row[1]), float(row[2]), float(row[3]), params.alpha, params.ref_mean_sfi])
