import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfi_lab.errors import DomainError
from sfi_lab.metrics import METRIC_NAMES, MetricSet, auc, confusion, metric_set, midranks


def oracle_metric_set(labels, probs, threshold=0.5):
    """Straight counting loop, no numpy."""
    tp = fp = fn = tn = 0
    for y, p in zip(labels, probs):
        pred = p >= threshold
        if pred and y:
            tp += 1
        elif pred:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    n = len(labels)
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    tnr = tn / (tn + fp) if tn + fp else None
    f1 = 2 * precision * recall / (precision + recall) if precision is not None and recall is not None and precision + recall > 0 else None
    ba = (recall + tnr) / 2 if recall is not None and tnr is not None else None
    diffs = [float(p) - float(y) for y, p in zip(labels, probs)]
    # d * d is an exact IEEE square; Python's d ** 2 goes through libm pow
    brier = math.fsum(d * d for d in diffs) / n
    return MetricSet(oracle_auc(labels, probs), ba, tp / n, f1, precision, recall, brier)


def oracle_auc(labels, probs):
    pos = [p for y, p in zip(labels, probs) if y]
    neg = [p for y, p in zip(labels, probs) if not y]
    if not pos or not neg:
        return None
    score = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return score / (len(pos) * len(neg))


def test_confusion_examples():
    assert confusion([1, 0, 1, 0], [1, 1, 0, 0]) == (1, 1, 1, 1)
    assert confusion([1, 0, 1], [0.9, 0.1, 0.7]) == (2, 0, 0, 1)
    assert confusion([1], [0.5]) == (1, 0, 0, 0)
    assert confusion([0], [0.5 - 1e-12]) == (0, 0, 0, 1)


def test_metric_set_example():
    m = metric_set([1, 0, 1, 0], [1, 1, 0, 0])
    assert (m.precision, m.recall, m.f1, m.balanced_accuracy, m.detection_rate) == (0.5, 0.5, 0.5, 0.5, 0.25)


def test_perfect_predictions():
    y = [1, 1, 0, 0, 0]
    m = metric_set(y, [1.0, 1.0, 0.0, 0.0, 0.0])
    assert m.brier == 0.0
    assert (m.auc, m.balanced_accuracy, m.f1, m.precision, m.recall) == (1.0,) * 5
    assert m.detection_rate == pytest.approx(0.4)


def test_undefined_metrics_are_none():
    m = metric_set([0, 0, 0], [0.1, 0.2, 0.3])
    assert m.auc is None and m.recall is None and m.precision is None and m.f1 is None
    assert m.balanced_accuracy is None
    assert m.detection_rate == 0.0 and m.brier is not None
    # positives exist but none predicted: recall 0, precision undefined, f1 undefined
    m = metric_set([1, 0], [0.1, 0.2])
    assert m.recall == 0.0 and m.precision is None and m.f1 is None
    # both defined but zero
    m = metric_set([1, 0], [0.1, 0.9])
    assert m.recall == 0.0 and m.precision == 0.0 and m.f1 is None


def test_empty_and_mismatched_inputs():
    with pytest.raises(DomainError):
        metric_set([], [])
    with pytest.raises(DomainError):
        confusion([1, 0], [0.5])


@pytest.mark.parametrize(
    "labels, probs, expected",
    [
        ([1, 1, 0, 0], [0.9, 0.8, 0.4, 0.2], 1.0),
        ([1, 1, 0, 0], [0.3, 0.3, 0.3, 0.3], 0.5),
        ([1, 1, 0, 0], [0.9, 0.2, 0.8, 0.4], 0.5),
    ],
)
def test_auc_examples(labels, probs, expected):
    assert auc(labels, probs) == expected


def test_midranks():
    assert list(midranks([3.0, 1.0, 3.0, 2.0])) == [3.5, 1.0, 3.5, 2.0]


def test_metric_oracle_random_small_vectors():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        n = int(rng.integers(1, 13))
        y = rng.random(n) < rng.random()
        # coarse grid so that ties and exact 0.5 thresholds occur
        p = rng.integers(0, 9, size=n) / 8
        assert metric_set(y, p) == oracle_metric_set(y.tolist(), p.tolist())


# probabilities on a 1e-6 grid: squares of subnormal floats underflow to 0
probabilities = st.integers(0, 10**6).map(lambda k: k / 10**6)


@given(st.lists(st.tuples(st.booleans(), probabilities), min_size=1, max_size=60))
@settings(max_examples=300, deadline=None)
def test_metric_properties(pairs):
    y = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    m = metric_set(y, p)
    for name in METRIC_NAMES:
        v = getattr(m, name)
        assert v is None or 0.0 <= v <= 1.0
    if m.recall is not None:
        assert m.detection_rate <= m.recall
    assert (m.brier == 0.0) == all(float(a) == b for a, b in pairs)
    expected = oracle_auc(y, p)
    if expected is None:
        assert m.auc is None
    else:
        assert m.auc == pytest.approx(expected, abs=1e-12)


@given(
    st.lists(st.tuples(st.booleans(), st.integers(0, 50)), min_size=2, max_size=80),
    st.sampled_from([lambda x: x**3, lambda x: math.exp(x / 10), lambda x: 2 * x - 7]),
)
@settings(max_examples=200, deadline=None)
def test_auc_invariant_under_increasing_transform(pairs, f):
    y = [a for a, _ in pairs]
    s = [float(b) for _, b in pairs]
    assert auc(y, s) == auc(y, [f(v) for v in s])


def test_as_dict_has_seven_metrics():
    d = metric_set([1, 0], [0.7, 0.2]).as_dict()
    assert tuple(d) == METRIC_NAMES and len(d) == 7
