import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfi_lab.calibration import (
    CalibrationParams,
    calibrate,
    calibrate_unclipped,
    calibration_error_delta,
    estimate_optimal_alpha,
    write_calibration_csv,
)
from sfi_lab.errors import DegenerateInputError, DomainError

unit = st.floats(0, 1)


def synthetic_batch(seed, n=1000):
    """Labels whose residual against y_raw grows with fidelity."""
    rng = np.random.default_rng(seed)
    sfi = rng.uniform(0.05, 0.95, size=n)
    y_raw = rng.uniform(0.05, 0.6, size=n)
    truth = np.clip(y_raw * (1 + 1.2 * (sfi - 0.4) / 0.4), 0, 1)
    labels = rng.random(n) < truth
    return labels, y_raw, sfi, 0.4


def grid_alpha(labels, y_raw, sfi, ref):
    alphas = np.round(np.arange(-5000, 5001) / 1000, 3)
    r = (sfi - ref) / ref
    resid = labels - y_raw
    # squared error of y_raw * (1 + a r) is quadratic in a; evaluate it on the grid
    sse = [np.sum((resid - a * y_raw * r) ** 2) for a in alphas]
    return float(alphas[int(np.argmin(sse))])


def test_calibrate_examples():
    assert calibrate(0.3, 0.42, CalibrationParams(1.7, 0.42)) == 0.3
    assert calibrate(0.4, 0.75, CalibrationParams(2.0, 0.5)) == pytest.approx(0.8, abs=1e-15)
    assert calibrate(0.9, 0.9, CalibrationParams(2.0, 0.45)) == 1.0


def test_calibrate_clips_below_zero():
    assert calibrate(0.5, 0.0, CalibrationParams(2.0, 0.5)) == 0.0


def test_calibrate_vectorized():
    out = calibrate(np.array([0.2, 0.4]), np.array([0.5, 1.0]), CalibrationParams(1.0, 0.5))
    assert out.tolist() == pytest.approx([0.2, 0.8])


def test_params_validation():
    with pytest.raises(DomainError):
        CalibrationParams(1.0, 0.0)
    with pytest.raises(DomainError):
        CalibrationParams(float("nan"), 0.5)


def test_calibrate_rejects_out_of_range_inputs():
    with pytest.raises(DomainError):
        calibrate(1.2, 0.5, CalibrationParams(1.0, 0.5))
    with pytest.raises(DomainError):
        calibrate(0.5, -0.1, CalibrationParams(1.0, 0.5))


@given(unit, unit, st.floats(0.01, 1))
@settings(max_examples=500)
def test_alpha_zero_is_identity(y, s, ref):
    assert calibrate(y, s, CalibrationParams(0.0, ref)) == y


@given(st.floats(0.001, 1), unit, unit, st.floats(0.01, 1), st.floats(0.001, 10))
@settings(max_examples=500)
def test_monotone_in_sfi_and_bounded(y, s1, s2, ref, alpha):
    p = CalibrationParams(alpha, ref)
    lo, hi = sorted((s1, s2))
    a, b = calibrate(y, lo, p), calibrate(y, hi, p)
    assert 0.0 <= a <= b <= 1.0


def test_optimal_alpha_zero_residuals():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, size=50).astype(float)
    sfi = rng.random(50)
    assert estimate_optimal_alpha(y.astype(bool), y, sfi, 0.5) == 0.0


def test_optimal_alpha_degenerate_denominator():
    with pytest.raises(DegenerateInputError):
        estimate_optimal_alpha([1, 0, 1], [0.2, 0.5, 0.4], [0.5, 0.5, 0.5], 0.5)
    with pytest.raises(DegenerateInputError):
        estimate_optimal_alpha([1, 0, 1], [0.0, 0.0, 0.0], [0.1, 0.5, 0.9], 0.5)


def test_optimal_alpha_constant_offset_with_exact_labels():
    y = np.array([1.0, 0.0, 1.0, 1.0])
    assert estimate_optimal_alpha(y.astype(bool), y, [0.8] * 4, 0.4) == 0.0


def test_optimal_alpha_needs_equal_lengths():
    with pytest.raises(DomainError):
        estimate_optimal_alpha([1, 0], [0.2, 0.3, 0.4], [0.1, 0.2, 0.3], 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_optimal_alpha_matches_grid_oracle(seed):
    labels, y_raw, sfi, ref = synthetic_batch(seed)
    assert abs(estimate_optimal_alpha(labels, y_raw, sfi, ref) - grid_alpha(labels, y_raw, sfi, ref)) <= 2e-3


def test_optimal_alpha_minimizes_unclipped_error():
    labels, y_raw, sfi, ref = synthetic_batch(10)
    a_star = estimate_optimal_alpha(labels, y_raw, sfi, ref)

    def mse(a):
        return np.mean((labels - calibrate_unclipped(y_raw, sfi, CalibrationParams(a, ref))) ** 2)

    best = mse(a_star)
    assert all(best <= mse(a) + 1e-15 for a in np.linspace(-5, 5, 201))


def test_error_delta_examples():
    y = np.array([1, 0, 1, 0], dtype=bool)
    raw = np.array([0.6, 0.3, 0.2, 0.1])
    assert calibration_error_delta(y, raw, raw) == 0.0
    assert calibration_error_delta(y, raw, y.astype(float)) > 0
    with pytest.raises(DomainError):
        calibration_error_delta([], [], [])


@pytest.mark.parametrize("seed", range(3))
def test_error_delta_positive_at_optimum(seed):
    labels, y_raw, sfi, ref = synthetic_batch(100 + seed)
    a = estimate_optimal_alpha(labels, y_raw, sfi, ref)
    assert a > 0
    y_cal = calibrate(y_raw, sfi, CalibrationParams(a, ref))
    assert calibration_error_delta(labels, y_raw, y_cal) > 0


def test_calibration_csv():
    buf = io.StringIO()
    write_calibration_csv(buf, ["P1", "P2"], [0.2, 0.4], [0.5, 0.75], [0.2, 0.8], CalibrationParams(2.0, 0.5))
    assert buf.getvalue() == (
        "patient_id,y_raw,sfi,y_calibrated,alpha,ref_mean_sfi\nP1,0.2,0.5,0.2,2.0,0.5\nP2,0.4,0.75,0.8,2.0,0.5\n"
    )
