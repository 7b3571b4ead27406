"""Synthetic dementia cohort generator.

Patients get an age and race, a dementia label drawn from a multiplicative
age/race risk model, 2-20 dated encounters, one ICD-10 code per encounter,
a care setting, a specialty and (for dementia-coded encounters) a medication.
Everything is driven by a single ``numpy.random.Generator`` so a cohort is a
pure function of its config and seed.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields, replace
from datetime import date, timedelta
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from sfi_lab.errors import ConfigError, DomainError

RACES = ("White", "Black", "Hispanic", "Asian", "Other")
RACE_MULTIPLIER = {"White": 1.0, "Black": 1.5, "Hispanic": 1.3, "Asian": 1.1, "Other": 1.2}

MEDICATIONS = ("donepezil", "memantine", "rivastigmine", "galantamine")
# last entry is "no dementia medication"
MEDICATION_PROBS_DEMENTIA = (0.30, 0.30, 0.20, 0.10, 0.10)
MEDICATION_PROBS_OTHER = (0.01, 0.01, 0.005, 0.005, 0.97)

HIGH, LOW, NON_DEMENTIA = "high", "low", "non_dementia"
FIDELITY_CLASSES = (HIGH, LOW, NON_DEMENTIA)
INPATIENT, OUTPATIENT = "inpatient", "outpatient"
NEUROLOGY, OTHER_SPECIALTY = "neurology", "other"

MIN_AGE, MAX_AGE = 18, 90
N_DEMENTIA_CODES = 26

CSV_COLUMNS = (
    "patient_id",
    "age",
    "race",
    "dementia_label",
    "date",
    "code",
    "fidelity_class",
    "setting",
    "specialty",
    "medication",
)


@dataclass(frozen=True, slots=True)
class Encounter:
    date: date
    code: str
    fidelity_class: str
    setting: str = OUTPATIENT
    specialty: str = OTHER_SPECIALTY
    medication: str | None = None

    @property
    def is_dementia(self) -> bool:
        return self.fidelity_class != NON_DEMENTIA


@dataclass(frozen=True, slots=True)
class PatientRecord:
    id: str
    age: int
    race: str
    dementia_label: bool
    encounters: tuple[Encounter, ...]


@dataclass(frozen=True)
class CodeRegistry:
    """Map from ICD-10 code to fidelity class (high / low / non_dementia)."""

    entries: dict[str, str]

    def __post_init__(self):
        bad = {c: k for c, k in self.entries.items() if k not in FIDELITY_CLASSES}
        if bad:
            raise ConfigError([f"registry: unknown fidelity class for {c!r}: {k!r}" for c, k in bad.items()])

    def codes(self, fidelity_class: str) -> tuple[str, ...]:
        return tuple(c for c, k in self.entries.items() if k == fidelity_class)

    @property
    def high(self) -> tuple[str, ...]:
        return self.codes(HIGH)

    @property
    def low(self) -> tuple[str, ...]:
        return self.codes(LOW)

    @property
    def filler(self) -> tuple[str, ...]:
        return self.codes(NON_DEMENTIA)

    def fidelity_of(self, code: str) -> str:
        return self.entries[code]

    def check(self, n_dementia: int | None = None) -> None:
        """Raise ConfigError unless every class is populated.

        ``n_dementia`` additionally pins the number of dementia codes.
        """
        problems = [f"registry: no {k} codes" for k in FIDELITY_CLASSES if not self.codes(k)]
        if n_dementia is not None:
            count = len(self.high) + len(self.low)
            if count != n_dementia:
                problems.append(f"registry: expected {n_dementia} dementia codes, found {count}")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def default(cls) -> "CodeRegistry":
        text = resources.files("sfi_lab").joinpath("data/registry.csv").read_text(encoding="utf-8")
        return cls.from_csv_text(text)

    @classmethod
    def from_csv(cls, path: str | Path) -> "CodeRegistry":
        return cls.from_csv_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_csv_text(cls, text: str) -> "CodeRegistry":
        entries = {}
        for row in csv.DictReader(io.StringIO(text)):
            entries[row["code"].strip()] = row["class"].strip()
        registry = cls(entries)
        registry.check(N_DEMENTIA_CODES)
        return registry

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["code", "class"])
            for code, cls_ in self.entries.items():
                writer.writerow([code, cls_])


@dataclass(frozen=True)
class CohortConfig:
    n_patients: int = 1000
    age_mean: float = 60.0
    age_sd: float = 10.0
    race_probs: tuple[float, ...] = (0.60, 0.13, 0.18, 0.06, 0.03)
    base_dementia_rate: float = 0.25
    window_start: date = date(2020, 1, 1)
    window_end: date = date(2025, 1, 1)
    encounters_min: int = 2
    encounters_max: int = 20
    seed: int = 0
    neurology_rate_dementia: float = 0.20
    neurology_rate_other: float = 0.05
    inpatient_rate_dementia: float = 0.40
    inpatient_rate_other: float = 0.25
    # unlabeled patients: per-encounter dementia-code probabilities are
    # base_code_rate * U(range), drawn once per cohort unless pinned below
    base_code_rate: float = 1.0
    low_code_factor_range: tuple[float, float] = (0.10, 0.30)
    high_code_factor_range: tuple[float, float] = (0.01, 0.05)
    low_code_rate: float | None = None
    high_code_rate: float | None = None

    def problems(self) -> list[str]:
        p = []
        if int(self.n_patients) != self.n_patients or self.n_patients < 1:
            p.append("n_patients must be a positive integer")
        if not 5 <= self.age_sd <= 20:
            p.append("age_sd must lie in [5, 20]")
        if not MIN_AGE <= self.age_mean <= MAX_AGE:
            p.append(f"age_mean must lie in [{MIN_AGE}, {MAX_AGE}]")
        if len(self.race_probs) != len(RACES):
            p.append(f"race_probs must have {len(RACES)} entries")
        elif any(x < 0 for x in self.race_probs) or abs(sum(self.race_probs) - 1.0) > 1e-9:
            p.append("race_probs must be non-negative and sum to 1")
        if not 0 < self.base_dementia_rate < 1:
            p.append("base_dementia_rate must lie in (0, 1)")
        if not self.window_start < self.window_end:
            p.append("window_start must precede window_end")
        if self.encounters_min < 1:
            p.append("encounters_min must be >= 1")
        if self.encounters_max < self.encounters_min:
            p.append("encounters_max must be >= encounters_min")
        if not 0 <= self.seed < 2**64:
            p.append("seed must be an unsigned 64-bit integer")
        for name in (
            "neurology_rate_dementia",
            "neurology_rate_other",
            "inpatient_rate_dementia",
            "inpatient_rate_other",
        ):
            if not 0 <= getattr(self, name) <= 1:
                p.append(f"{name} must lie in [0, 1]")
        if self.base_code_rate < 0:
            p.append("base_code_rate must be >= 0")
        for name in ("low_code_factor_range", "high_code_factor_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                p.append(f"{name} must satisfy 0 <= low <= high")
        for name in ("low_code_rate", "high_code_rate"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                p.append(f"{name} must lie in [0, 1]")
        worst = self.base_code_rate * (self.low_code_factor_range[1] + self.high_code_factor_range[1])
        if self.low_code_rate is None and self.high_code_rate is None and worst > 1:
            p.append("base_code_rate * (low + high factor maxima) must not exceed 1")
        return p

    def validate(self) -> "CohortConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window_start"] = self.window_start.isoformat()
        d["window_end"] = self.window_end.isoformat()
        for k in ("race_probs", "low_code_factor_range", "high_code_factor_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "CohortConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown field {k!r}" for k in unknown])
        kw = dict(data)
        try:
            for k in ("window_start", "window_end"):
                if k in kw and isinstance(kw[k], str):
                    kw[k] = date.fromisoformat(kw[k])
        except ValueError as exc:
            raise ConfigError(f"bad date ({exc})") from None
        for k in ("race_probs", "low_code_factor_range", "high_code_factor_range"):
            if k in kw:
                kw[k] = tuple(float(x) for x in kw[k])
        return cls(**kw).validate()


def dementia_probability(age: float, race: str, base_rate: float) -> float:
    """P(dementia | age, race): base rate times age and race effects, clipped to 1."""
    if not MIN_AGE <= age <= MAX_AGE:
        raise DomainError(f"age {age} outside [{MIN_AGE}, {MAX_AGE}]")
    if not 0 < base_rate < 1:
        raise DomainError(f"base_rate {base_rate} outside (0, 1)")
    if race not in RACE_MULTIPLIER:
        raise DomainError(f"unknown race {race!r}")
    age_effect = 0.5 if age < 65 else 2.0 ** ((age - 65) / 5)
    return min(1.0, base_rate * age_effect * RACE_MULTIPLIER[race])


def sample_race_mix(concentration: Sequence[float], rng: np.random.Generator) -> tuple[float, ...]:
    alpha = np.asarray(concentration, dtype=float)
    if alpha.shape != (len(RACES),) or np.any(~(alpha > 0)):
        raise DomainError("Dirichlet concentration must be 5 positive reals")
    mix = rng.dirichlet(alpha)
    mix = mix / mix.sum()
    return tuple(float(x) for x in mix)


def sample_demographics(config: CohortConfig, rng: np.random.Generator) -> tuple[int, str]:
    while True:
        age = rng.normal(config.age_mean, config.age_sd)
        if MIN_AGE <= age <= MAX_AGE:
            break
    race = RACES[rng.choice(len(RACES), p=config.race_probs)]
    # round-half-even at the edges still lands inside [18, 90]
    return int(round(age)), race


def generate_encounters(config: CohortConfig, rng: np.random.Generator) -> list[date]:
    """Sorted encounter dates, uniform over [window_start, window_end)."""
    n = int(rng.integers(config.encounters_min, config.encounters_max + 1))
    span = (config.window_end - config.window_start).days
    offsets = np.sort(rng.integers(0, span, size=n))
    return [config.window_start + timedelta(days=int(d)) for d in offsets]


def draw_code_rates(config: CohortConfig, rng: np.random.Generator) -> tuple[float, float]:
    """Per-cohort (low, high) dementia-code probabilities for unlabeled patients."""
    lo_f = rng.uniform(*config.low_code_factor_range)
    hi_f = rng.uniform(*config.high_code_factor_range)
    low = config.low_code_rate if config.low_code_rate is not None else config.base_code_rate * lo_f
    high = config.high_code_rate if config.high_code_rate is not None else config.base_code_rate * hi_f
    return float(low), float(high)


def assign_codes(
    dates: Sequence[date],
    dementia_label: bool,
    registry: CodeRegistry,
    rng: np.random.Generator,
    code_rates: tuple[float, float] = (0.2, 0.03),
) -> list[Encounter]:
    """One code per encounter.

    Labeled patients always get a dementia code, high-fidelity codes weighted
    2:1 against low-fidelity ones. Unlabeled patients get a low-fidelity code
    with probability ``code_rates[0]``, a high-fidelity one with
    ``code_rates[1]``, otherwise a filler code.
    """
    high, low, filler = registry.high, registry.low, registry.filler
    if not high or not low or not filler:
        raise ConfigError("registry must define high, low and non_dementia codes")
    n = len(dates)
    if dementia_label:
        pool = high + low
        w = np.array([2.0] * len(high) + [1.0] * len(low))
        picks = rng.choice(len(pool), size=n, p=w / w.sum())
        codes = [pool[i] for i in picks]
        classes = [HIGH if i < len(high) else LOW for i in picks]
    else:
        p_low, p_high = code_rates
        if p_low < 0 or p_high < 0 or p_low + p_high > 1:
            raise DomainError(f"invalid code rates {code_rates}")
        u = rng.random(n)
        li = rng.integers(len(low), size=n)
        hi = rng.integers(len(high), size=n)
        fi = rng.integers(len(filler), size=n)
        codes, classes = [], []
        for k in range(n):
            if u[k] < p_low:
                codes.append(low[li[k]])
                classes.append(LOW)
            elif u[k] < p_low + p_high:
                codes.append(high[hi[k]])
                classes.append(HIGH)
            else:
                codes.append(filler[fi[k]])
                classes.append(NON_DEMENTIA)
    return [Encounter(d, c, k) for d, c, k in zip(dates, codes, classes)]


def draw_medication(dementia_label: bool, rng: np.random.Generator) -> str | None:
    probs = MEDICATION_PROBS_DEMENTIA if dementia_label else MEDICATION_PROBS_OTHER
    i = rng.choice(len(probs), p=probs)
    return MEDICATIONS[i] if i < len(MEDICATIONS) else None


def assign_medications(
    encounters: Sequence[Encounter], dementia_label: bool, rng: np.random.Generator
) -> list[Encounter]:
    """Draw the patient's medication once and stamp it on dementia-coded encounters."""
    med = draw_medication(dementia_label, rng)
    return [replace(e, medication=med) if e.is_dementia else e for e in encounters]


def assign_settings(
    encounters: Sequence[Encounter],
    dementia_label: bool,
    config: CohortConfig,
    rng: np.random.Generator,
) -> list[Encounter]:
    n = len(encounters)
    if dementia_label:
        p_in, p_neuro = config.inpatient_rate_dementia, config.neurology_rate_dementia
    else:
        p_in, p_neuro = config.inpatient_rate_other, config.neurology_rate_other
    inpatient = rng.random(n) < p_in
    neuro = rng.random(n) < p_neuro
    return [
        replace(
            e,
            setting=INPATIENT if inpatient[k] else OUTPATIENT,
            specialty=NEUROLOGY if neuro[k] else OTHER_SPECIALTY,
        )
        for k, e in enumerate(encounters)
    ]


def generate_cohort(config: CohortConfig, registry: CodeRegistry | None = None) -> list[PatientRecord]:
    config.validate()
    registry = registry or CodeRegistry.default()
    registry.check()
    rng = np.random.default_rng(config.seed)
    code_rates = draw_code_rates(config, rng)
    width = max(6, len(str(config.n_patients)))
    cohort = []
    for i in range(config.n_patients):
        age, race = sample_demographics(config, rng)
        label = bool(rng.random() < dementia_probability(age, race, config.base_dementia_rate))
        dates = generate_encounters(config, rng)
        encounters = assign_codes(dates, label, registry, rng, code_rates)
        encounters = assign_settings(encounters, label, config, rng)
        encounters = assign_medications(encounters, label, rng)
        encounters.sort(key=encounter_key)
        cohort.append(PatientRecord(f"P{i:0{width}d}", age, race, label, tuple(encounters)))
    return cohort


def cohort_features(cohort: Sequence[PatientRecord]) -> tuple[np.ndarray, np.ndarray]:
    """(n, 2) feature matrix [age, race code] and boolean labels."""
    X = np.array([[p.age, RACES.index(p.race)] for p in cohort], dtype=float).reshape(-1, 2)
    y = np.array([p.dementia_label for p in cohort], dtype=bool)
    return X, y


def write_cohort_csv(cohort: Iterable[PatientRecord], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for p in cohort:
        for e in p.encounters:
            writer.writerow(
                [
                    p.id,
                    p.age,
                    p.race,
                    int(p.dementia_label),
                    e.date.isoformat(),
                    e.code,
                    e.fidelity_class,
                    e.setting,
                    e.specialty,
                    e.medication or "",
                ]
            )


def read_cohort_csv(fh) -> list[PatientRecord]:
    """Inverse of write_cohort_csv. Patients appear in first-seen order."""
    rows: dict[str, dict] = {}
    for r in csv.DictReader(fh):
        pid = r["patient_id"]
        if pid not in rows:
            rows[pid] = {
                "age": int(r["age"]),
                "race": r["race"],
                "label": r["dementia_label"] in ("1", "true", "True"),
                "encounters": [],
            }
        rows[pid]["encounters"].append(
            Encounter(
                date.fromisoformat(r["date"]),
                r["code"],
                r["fidelity_class"],
                r["setting"],
                r["specialty"],
                r["medication"] or None,
            )
        )
    return [
        PatientRecord(pid, v["age"], v["race"], v["label"], tuple(sorted(v["encounters"], key=encounter_key)))
        for pid, v in rows.items()
    ]


def encounter_key(e: Encounter) -> tuple:
    """Total order on encounters: date first, then the remaining fields."""
    return (e.date, e.code, e.fidelity_class, e.setting, e.specialty, e.medication or "")


def cohort_manifest(config: CohortConfig) -> str:
    return json.dumps({"config": config.to_dict(), "seed": config.seed}, indent=2) + "\n"
