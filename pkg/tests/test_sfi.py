import io
import math
from datetime import date, timedelta

import pytest
from helpers import enc, patient, seq
from hypothesis import given, settings
from hypothesis import strategies as st

from sfi_lab.cohort import (
    HIGH,
    INPATIENT,
    LOW,
    MEDICATIONS,
    NEUROLOGY,
    NON_DEMENTIA,
    OTHER_SPECIALTY,
    OUTPATIENT,
    CohortConfig,
    Encounter,
    PatientRecord,
    generate_cohort,
)
from sfi_lab.errors import DomainError
from sfi_lab.sfi import (
    COLUMNS,
    SfiBreakdown,
    cohort_mean_sfi,
    composite_scores,
    compute_sfi,
    contextual_concordance,
    entropy_component,
    medication_alignment,
    specificity,
    temporal_consistency,
    trajectory_stability,
    write_sfi_csv,
)

# ---------------------------------------------------------------- worked examples


def test_specificity_examples():
    assert specificity(seq("G30.9", "G30.9", "F03.90", "R41.3")) == 0.5
    assert specificity(seq("G30.9", "F01.50", "G30.0")) == 1.0
    assert specificity(seq("I10", "E11.9")) == 1.0


def test_specificity_ignores_filler_codes():
    assert specificity(seq("G30.9", "I10", "F03.90", "J06.9")) == 0.5


def test_temporal_consistency_examples():
    assert temporal_consistency(seq("A", "A", "B", "B", "A")) == 0.5
    assert temporal_consistency(seq("A", "A", "A")) == 1.0
    assert temporal_consistency(seq("A", "B", "A", "B")) == 0.0
    assert temporal_consistency(seq("A")) == 1.0


def test_temporal_consistency_uses_date_order():
    p = patient(enc("A", day=0), enc("A", day=2), enc("B", day=1))
    assert temporal_consistency(p) == 0.0


def test_entropy_examples():
    assert entropy_component(seq("A", "B")) == 0.0
    assert entropy_component(seq("A", "A", "A")) == 1.0
    assert entropy_component(seq("A", "A", "A", "B")) == pytest.approx(0.188722, abs=1e-6)
    assert entropy_component(patient()) == 1.0


def test_entropy_counts_every_code():
    # filler codes take part in the distribution
    assert entropy_component(seq("G30.9", "I10")) == 0.0


def test_uniform_entropy_is_exactly_zero_for_many_codes():
    for k in range(2, 12):
        assert entropy_component(seq(*[f"C{i}" for i in range(k)])) == 0.0


def test_contextual_concordance_examples():
    p = patient(
        enc("G30.9", setting=INPATIENT, day=0),
        enc("G30.9", setting=INPATIENT, day=1),
        enc("F03.90", setting=INPATIENT, day=2),
        enc("I10", day=3),
    )
    assert contextual_concordance(p) == 0.75
    assert contextual_concordance(seq("I10", "E11.9", setting=INPATIENT, specialty=NEUROLOGY)) == 0.0
    p = patient(enc("G30.9", day=0), enc("F03.90", day=1), enc("I10", day=2), enc("I10", day=3))
    assert contextual_concordance(p) == 0.0


def test_contextual_concordance_neurology_counts():
    p = patient(enc("G30.9", specialty=NEUROLOGY), enc("I10", day=1))
    assert contextual_concordance(p) == 0.5


def test_contextual_concordance_needs_encounters():
    with pytest.raises(DomainError):
        contextual_concordance(patient())


def test_medication_alignment_examples():
    assert medication_alignment(patient(enc("G30.9", medication="donepezil"), enc("G30.9", day=1))) == 0.5
    assert medication_alignment(seq("G30.9", "F03.90", medication="memantine")) == 1.0
    assert medication_alignment(seq("I10", "E11.9")) == 1.0


def test_trajectory_stability_examples():
    same = patient(enc("G30.9", setting=INPATIENT), enc("G30.9", setting=OUTPATIENT, day=1))
    assert trajectory_stability(same) == 1.0
    diff = patient(enc("G30.9", setting=INPATIENT), enc("F03.90", setting=OUTPATIENT, day=1))
    assert trajectory_stability(diff) == 0.0
    assert trajectory_stability(seq("G30.9", "F03.90")) == 1.0


def test_trajectory_stability_lexicographic_tie_break():
    p = patient(
        enc("G30.9", setting=INPATIENT, day=0),
        enc("F03.90", setting=INPATIENT, day=1),
        enc("F03.90", setting=OUTPATIENT, day=2),
    )
    # inpatient tie {F03.90, G30.9} resolves to F03.90
    assert trajectory_stability(p) == 1.0
    p = patient(
        enc("G30.9", setting=INPATIENT, day=0),
        enc("F03.90", setting=INPATIENT, day=1),
        enc("G30.9", setting=OUTPATIENT, day=2),
    )
    assert trajectory_stability(p) == 0.0


def test_composite_examples():
    assert SfiBreakdown.from_components(1, 1, 1, 1, 1, 1).composite == 1.0
    assert SfiBreakdown.from_components(0.5, 1, 0, 1, 0.5, 0).composite == 0.5


def test_perfect_patient_scores_one():
    p = seq("G30.9", "G30.9", "G30.9", setting=INPATIENT, medication="donepezil")
    b = compute_sfi(p)
    assert b.components() == (1.0,) * 6
    assert b.composite == 1.0


def test_cohort_mean_examples():
    a = SfiBreakdown.from_components(0.4, 0.4, 0.4, 0.4, 0.4, 0.4)
    b = SfiBreakdown.from_components(0.6, 0.6, 0.6, 0.6, 0.6, 0.6)
    assert cohort_mean_sfi([a, b]) == pytest.approx(0.5, abs=1e-15)
    p = seq("G30.9", "F03.90", "I10")
    assert cohort_mean_sfi([p]) == compute_sfi(p).composite
    with pytest.raises(DomainError):
        cohort_mean_sfi([])


def test_cohort_mean_matches_streaming_oracle():
    cohort = generate_cohort(CohortConfig(n_patients=10_000, seed=3))
    total, count = 0.0, 0
    for p in reversed(cohort):
        total += compute_sfi(p).composite
        count += 1
    assert abs(cohort_mean_sfi(cohort) - total / count) < 1e-12
    assert cohort_mean_sfi(cohort) == cohort_mean_sfi([compute_sfi(p) for p in cohort])


def test_sfi_csv(tmp_path):
    cohort = generate_cohort(CohortConfig(n_patients=5, seed=1))
    buf = io.StringIO()
    write_sfi_csv(cohort, buf)
    lines = buf.getvalue().split("\n")
    assert lines[0] == ",".join(("patient_id",) + COLUMNS)
    assert len(lines) == 7 and lines[-1] == ""
    first = lines[1].split(",")
    assert first[0] == cohort[0].id
    assert float(first[-1]) == compute_sfi(cohort[0]).composite


# ---------------------------------------------------------------- properties

CODES = ["G30.9", "G30.1", "F03.90", "R41.3", "I10", "E11.9"]
KIND = {"G30.9": HIGH, "G30.1": HIGH, "F03.90": LOW, "R41.3": LOW, "I10": NON_DEMENTIA, "E11.9": NON_DEMENTIA}

encounters = st.builds(
    lambda day, code, inpatient, neuro, med: Encounter(
        date(2020, 1, 1) + timedelta(days=day),
        code,
        KIND[code],
        INPATIENT if inpatient else OUTPATIENT,
        NEUROLOGY if neuro else OTHER_SPECIALTY,
        med if KIND[code] != NON_DEMENTIA else None,
    ),
    st.integers(0, 40),
    st.sampled_from(CODES),
    st.booleans(),
    st.booleans(),
    st.sampled_from((None,) + MEDICATIONS),
)
patients = st.lists(encounters, min_size=1, max_size=25).map(lambda es: patient(*es))


@given(patients)
@settings(max_examples=400, deadline=None)
def test_components_bounded_and_composite_is_mean(p):
    b = compute_sfi(p)
    assert all(0.0 <= c <= 1.0 for c in b.components())
    assert 0.0 <= b.composite <= 1.0
    assert b.composite == sum(b.components()) / 6


@given(patients, st.randoms(use_true_random=False))
@settings(max_examples=300, deadline=None)
def test_storage_order_is_irrelevant(p, rnd):
    shuffled = list(p.encounters)
    rnd.shuffle(shuffled)
    q = PatientRecord(p.id, p.age, p.race, p.dementia_label, tuple(shuffled))
    assert compute_sfi(q) == compute_sfi(p)


@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.permutations(range(6)))
@settings(max_examples=300, deadline=None)
def test_entropy_invariant_under_relabeling(labels, perm):
    a = seq(*[f"X{i}" for i in labels])
    b = seq(*[f"Y{perm[i]}" for i in labels])
    assert entropy_component(a) == entropy_component(b)


@given(st.lists(st.integers(1, 20), min_size=2, max_size=6))
@settings(max_examples=300, deadline=None)
def test_entropy_matches_direct_formula(counts):
    codes = [f"C{j}" for j, c in enumerate(counts) for _ in range(c)]
    n = sum(counts)
    h = -sum(c / n * math.log2(c / n) for c in counts)
    assert entropy_component(seq(*codes)) == pytest.approx(1 - h / math.log2(len(counts)), abs=1e-12)


def test_simulated_cohort_components_bounded():
    cohort = generate_cohort(CohortConfig(n_patients=2000, seed=11))
    scores = composite_scores(cohort)
    assert len(scores) == 2000
    assert all(0 <= s <= 1 for s in scores)
    labeled = [s for p, s in zip(cohort, scores) if p.dementia_label]
    assert labeled and min(labeled) > 0
