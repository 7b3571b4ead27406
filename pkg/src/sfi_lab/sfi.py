"""Signal Fidelity Index: six per-patient diagnostic-quality scores and their mean.

All components are computed over encounters in date order (ties broken by
the remaining encounter fields), so storage order never matters. Components
whose denominator is empty score 1: no dementia coding is not evidence of
poor coding.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

from sfi_lab.cohort import HIGH, INPATIENT, NEUROLOGY, OUTPATIENT, Encounter, PatientRecord, encounter_key
from sfi_lab.errors import DomainError


@dataclass(frozen=True)
class SfiBreakdown:
    specificity: float
    temporal_consistency: float
    entropy: float
    contextual_concordance: float
    medication_alignment: float
    trajectory_stability: float
    composite: float

    @classmethod
    def from_components(cls, *components: float) -> "SfiBreakdown":
        return cls(*components, sum(components) / len(components))

    def components(self) -> tuple[float, ...]:
        return astuple(self)[:6]


COLUMNS = tuple(f.name for f in fields(SfiBreakdown))


def _ordered(patient: PatientRecord) -> list[Encounter]:
    return sorted(patient.encounters, key=encounter_key)


def specificity(patient: PatientRecord) -> float:
    dem = [e for e in patient.encounters if e.is_dementia]
    if not dem:
        return 1.0
    return sum(e.fidelity_class == HIGH for e in dem) / len(dem)


def temporal_consistency(patient: PatientRecord) -> float:
    codes = [e.code for e in _ordered(patient)]
    if len(codes) <= 1:
        return 1.0
    changes = sum(a != b for a, b in zip(codes, codes[1:]))
    return 1.0 - changes / (len(codes) - 1)


def entropy_component(patient: PatientRecord) -> float:
    counts = Counter(e.code for e in patient.encounters)
    k = len(counts)
    if k <= 1:
        return 1.0
    if len(set(counts.values())) == 1:
        return 0.0  # uniform: entropy is exactly log2(k)
    n = sum(counts.values())
    # fsum over sorted counts: independent of the order codes were first seen
    h = -math.fsum((c / n) * math.log2(c / n) for c in sorted(counts.values()))
    return min(1.0, max(0.0, 1.0 - h / math.log2(k)))


def contextual_concordance(patient: PatientRecord) -> float:
    n = len(patient.encounters)
    if n == 0:
        raise DomainError(f"patient {patient.id} has no encounters")
    hits = sum(e.is_dementia and (e.setting == INPATIENT or e.specialty == NEUROLOGY) for e in patient.encounters)
    return hits / n


def medication_alignment(patient: PatientRecord) -> float:
    dem = [e for e in patient.encounters if e.is_dementia]
    if not dem:
        return 1.0
    return sum(e.medication is not None for e in dem) / len(dem)


def _mode(codes: list[str]) -> str:
    counts = Counter(codes)
    top = max(counts.values())
    return min(c for c, n in counts.items() if n == top)


def trajectory_stability(patient: PatientRecord) -> float:
    inpatient = [e.code for e in patient.encounters if e.setting == INPATIENT]
    outpatient = [e.code for e in patient.encounters if e.setting == OUTPATIENT]
    if not inpatient or not outpatient:
        return 1.0
    return 1.0 if _mode(inpatient) == _mode(outpatient) else 0.0


def compute_sfi(patient: PatientRecord) -> SfiBreakdown:
    return SfiBreakdown.from_components(
        specificity(patient),
        temporal_consistency(patient),
        entropy_component(patient),
        contextual_concordance(patient),
        medication_alignment(patient),
        trajectory_stability(patient),
    )


def composite_scores(cohort: Iterable[PatientRecord]) -> list[float]:
    return [compute_sfi(p).composite for p in cohort]


def cohort_mean_sfi(cohort: Sequence[PatientRecord] | Sequence[SfiBreakdown]) -> float:
    if len(cohort) == 0:
        raise DomainError("cohort_mean_sfi of an empty cohort")
    scores = [x.composite if isinstance(x, SfiBreakdown) else compute_sfi(x).composite for x in cohort]
    return math.fsum(scores) / len(scores)


def write_sfi_csv(cohort: Sequence[PatientRecord], fh, breakdowns: Sequence[SfiBreakdown] | None = None) -> None:
    breakdowns = breakdowns if breakdowns is not None else [compute_sfi(p) for p in cohort]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("patient_id",) + COLUMNS)
    for p, b in zip(cohort, breakdowns):
        writer.writerow((p.id,) + astuple(b))
