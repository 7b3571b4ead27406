"""Two-phase calibration study: reference forests, alpha sweep, batch analysis.

Each batch trains one forest on half of a reference cohort and scores it on
the other half (the reference standard). The forest then predicts on a
family of freshly simulated datasets; predictions are recalibrated at every
alpha of the grid. Phase 1 picks alpha from the significance pattern of the
batch-level improvements, phase 2 tests raw, calibrated and reference
performance at that alpha, and a separate transfer evaluation applies one
model to many datasets.

Every dataset draws from its own RNG stream keyed by (master seed, stream
kind, batch, dataset), so results do not depend on scheduling or ``jobs``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from statistics import median
from typing import Sequence

import numpy as np

from sfi_lab import calibration, stats
from sfi_lab.cohort import CohortConfig, CodeRegistry, PatientRecord, cohort_features, generate_cohort, sample_race_mix
from sfi_lab.errors import ConfigError, DomainError
from sfi_lab.forest import ForestConfig, ForestModel, predict_proba, split_half, train
from sfi_lab.metrics import METRIC_NAMES, PERFORMANCE_METRICS, MetricSet, metric_set
from sfi_lab.sfi import cohort_mean_sfi, composite_scores

log = logging.getLogger(__name__)

# RNG stream kinds
REFERENCE, TESTING, TRANSFER = 0, 1, 2

DEFAULT_ALPHA_GRID = tuple(0.5 + 0.25 * i for i in range(9))
TRANSFER_METRICS = ("auc", "recall", "f1", "balanced_accuracy", "brier")


@dataclass(frozen=True)
class RunConfig:
    n_batches: int = 50
    datasets_per_batch: int = 50
    reference_cohort_size: int = 2000
    dataset_size: int = 1000
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    alpha_cap: float = 2.0
    significance: float = 0.05
    master_seed: int = 20250101
    prevalence_range: tuple[float, float] = (0.15, 0.35)
    age_mean_range: tuple[float, float] = (50.0, 70.0)
    age_sd_range: tuple[float, float] = (8.0, 12.0)
    race_concentration: tuple[float, ...] = (12.0, 2.6, 3.6, 1.2, 0.6)
    transfer_datasets: int = 101
    transfer_alpha: float = 1.5
    threshold: float = 0.5
    forest: ForestConfig = field(default_factory=ForestConfig)
    # template for every simulated cohort; sampled fields are overwritten
    cohort: CohortConfig = field(default_factory=CohortConfig)

    def problems(self) -> list[str]:
        p = []
        for name in ("n_batches", "datasets_per_batch", "reference_cohort_size", "dataset_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                p.append(f"{name} must be a positive integer")
        if isinstance(self.reference_cohort_size, int) and 1 <= self.reference_cohort_size < 4:
            p.append("reference_cohort_size must be >= 4")
        g = list(self.alpha_grid)
        if not g:
            p.append("alpha_grid must not be empty")
        elif any(b <= a for a, b in zip(g, g[1:])):
            p.append("alpha_grid must be strictly increasing")
        elif any(a < 0 for a in g):
            p.append("alpha_grid values must be >= 0")
        elif self.alpha_cap < g[0]:
            p.append("alpha_cap must not lie below the smallest alpha_grid value")
        if not 0 < self.significance < 1:
            p.append("significance must lie in (0, 1)")
        if not 0 <= self.master_seed < 2**64:
            p.append("master_seed must be an unsigned 64-bit integer")
        lo, hi = self.prevalence_range
        if not 0 < lo <= hi < 1:
            p.append("prevalence_range must satisfy 0 < low <= high < 1")
        lo, hi = self.age_mean_range
        if not 18 <= lo <= hi <= 90:
            p.append("age_mean_range must satisfy 18 <= low <= high <= 90")
        lo, hi = self.age_sd_range
        if not 5 <= lo <= hi <= 20:
            p.append("age_sd_range must satisfy 5 <= low <= high <= 20")
        if len(self.race_concentration) != 5 or any(not c > 0 for c in self.race_concentration):
            p.append("race_concentration must be 5 positive reals")
        if not isinstance(self.transfer_datasets, int) or self.transfer_datasets < 2:
            p.append("transfer_datasets must be an integer >= 2")
        if self.transfer_alpha < 0:
            p.append("transfer_alpha must be >= 0")
        if not 0 < self.threshold <= 1:
            p.append("threshold must lie in (0, 1]")
        p.extend(self.forest.problems())
        p.extend(f"cohort.{m}" for m in self.cohort.problems())
        return p

    def validate(self) -> "RunConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["forest"] = asdict(self.forest)
        d["cohort"] = self.cohort.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Build and validate, reporting every problem found rather than the first."""
        known = {f.name for f in fields(cls)}
        problems = [f"unknown field {k!r}" for k in sorted(set(data) - known)]
        kw = {}
        for k, v in data.items():
            if k not in known:
                continue
            try:
                if k == "forest":
                    v = ForestConfig(**v)
                    problems.extend(v.problems())
                elif k == "cohort":
                    v = CohortConfig.from_dict(v)
                elif isinstance(v, list):
                    v = tuple(float(x) for x in v)
            except ConfigError as exc:
                problems.extend(f"cohort.{m}" for m in exc.problems)
                continue
            except (TypeError, ValueError) as exc:
                problems.append(f"{k}: {exc}")
                continue
            kw[k] = v
        try:
            cfg = cls(**kw)
            own = cfg.problems()
        except TypeError as exc:
            problems.append(f"wrong type: {exc}")
        else:
            problems.extend(m for m in own if m not in problems)
        if problems:
            raise ConfigError(problems)
        return cfg

    @property
    def evaluated_alphas(self) -> tuple[float, ...]:
        return tuple(sorted(set(self.alpha_grid)))


def desk_scale(**overrides) -> RunConfig:
    """10 batches x 10 datasets x 1000 patients, 25 transfer targets."""
    base = dict(n_batches=10, datasets_per_batch=10, transfer_datasets=26)
    base.update(overrides)
    return RunConfig(**base)


def stream(master_seed: int, kind: int, batch: int, dataset: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(kind, batch, dataset)))


def draw_cohort_config(run: RunConfig, rng: np.random.Generator, n_patients: int) -> CohortConfig:
    """Dataset-level heterogeneity: prevalence, age distribution, race mix, seed."""
    return replace(
        run.cohort,
        n_patients=n_patients,
        base_dementia_rate=float(rng.uniform(*run.prevalence_range)),
        age_mean=float(rng.uniform(*run.age_mean_range)),
        age_sd=float(rng.uniform(*run.age_sd_range)),
        race_probs=sample_race_mix(run.race_concentration, rng),
        seed=int(rng.integers(0, 2**63)),
    ).validate()


@dataclass
class Reference:
    model: ForestModel
    metrics: MetricSet
    ref_mean_sfi: float
    cohort_config: CohortConfig


def train_reference(cohort: Sequence[PatientRecord], forest: ForestConfig) -> tuple[ForestModel, float]:
    X, y = cohort_features(cohort)
    return train(X, y, forest), cohort_mean_sfi(cohort)


def run_reference(run: RunConfig, batch: int, registry: CodeRegistry | None = None) -> Reference:
    rng = stream(run.master_seed, REFERENCE, batch, 0)
    cfg = draw_cohort_config(run, rng, run.reference_cohort_size)
    cohort = generate_cohort(cfg, registry)
    train_half, test_half = split_half(cohort, int(rng.integers(0, 2**63)))
    forest = replace(run.forest, seed=int(rng.integers(0, 2**63)))
    model, ref_sfi = train_reference(train_half, forest)
    X, y = cohort_features(test_half)
    return Reference(model, metric_set(y, predict_proba(model, X), run.threshold), ref_sfi, cfg)


@dataclass
class DatasetResult:
    batch: int
    dataset: int
    raw: MetricSet
    calibrated: dict[float, MetricSet]
    mean_sfi: float
    prevalence: float
    delta_error: dict[float, float]


def evaluate_cohort(
    cohort: Sequence[PatientRecord],
    model: ForestModel,
    ref_mean_sfi: float,
    alphas: Sequence[float],
    threshold: float = 0.5,
):
    """Raw and per-alpha calibrated metrics plus squared-error deltas for one dataset."""
    X, y = cohort_features(cohort)
    y_raw = predict_proba(model, X)
    sfi = np.asarray(composite_scores(cohort))
    raw = metric_set(y, y_raw, threshold)
    cal, delta = {}, {}
    for a in alphas:
        y_cal = calibration.calibrate(y_raw, sfi, calibration.CalibrationParams(a, ref_mean_sfi))
        cal[a] = metric_set(y, y_cal, threshold)
        delta[a] = calibration.calibration_error_delta(y, y_raw, y_cal)
    return raw, cal, delta, float(sfi.mean()), float(y.mean())


def run_batch(
    run: RunConfig,
    batch: int,
    model: ForestModel,
    ref_mean_sfi: float,
    alphas: Sequence[float],
    registry: CodeRegistry | None = None,
) -> list[DatasetResult]:
    out = []
    for j in range(run.datasets_per_batch):
        rng = stream(run.master_seed, TESTING, batch, j)
        cohort = generate_cohort(draw_cohort_config(run, rng, run.dataset_size), registry)
        raw, cal, delta, mean_sfi, prev = evaluate_cohort(cohort, model, ref_mean_sfi, alphas, run.threshold)
        out.append(DatasetResult(batch, j, raw, cal, mean_sfi, prev, delta))
    return out


def _defined_mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


@dataclass
class BatchSummary:
    batch: int
    reference: MetricSet
    ref_mean_sfi: float
    raw_means: dict[str, float | None]
    cal_means: dict[float, dict[str, float | None]]

    @classmethod
    def from_results(cls, batch: int, reference: Reference, results: Sequence[DatasetResult]) -> "BatchSummary":
        alphas = list(results[0].calibrated) if results else []
        raw = {m: _defined_mean(getattr(r.raw, m) for r in results) for m in METRIC_NAMES}
        cal = {a: {m: _defined_mean(getattr(r.calibrated[a], m) for r in results) for m in METRIC_NAMES} for a in alphas}
        return cls(batch, reference.metrics, reference.ref_mean_sfi, raw, cal)


@dataclass
class BatchOutcome:
    summary: BatchSummary
    datasets: list[DatasetResult]
    reference_config: CohortConfig


def process_batch(run: RunConfig, batch: int, alphas: Sequence[float], registry: CodeRegistry | None = None) -> BatchOutcome:
    ref = run_reference(run, batch, registry)
    results = run_batch(run, batch, ref.model, ref.ref_mean_sfi, alphas, registry)
    log.info("batch %d done (ref AUC %.3f)", batch, ref.metrics.auc or float("nan"))
    return BatchOutcome(BatchSummary.from_results(batch, ref, results), results, ref.cohort_config)


def _process_batch_job(args) -> BatchOutcome:
    return process_batch(*args)


def run_batches(
    run: RunConfig,
    alphas: Sequence[float] | None = None,
    jobs: int = 1,
    registry: CodeRegistry | None = None,
) -> list[BatchOutcome]:
    alphas = tuple(alphas if alphas is not None else run.evaluated_alphas)
    tasks = [(run, b, alphas, registry) for b in range(run.n_batches)]
    if jobs <= 1 or len(tasks) == 1:
        return [_process_batch_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_process_batch_job, tasks))


# ---------------------------------------------------------------- phase 1


@dataclass(frozen=True)
class AlphaSweepRow:
    metric: str
    alpha: float
    mean_improvement: float | None
    ci_low: float | None
    ci_high: float | None
    p_value: float | None
    significant: bool
    n_batches: int


def _paired_batch_values(summaries: Sequence[BatchSummary], metric: str, alpha: float, against: str = "raw"):
    cal, other = [], []
    for s in summaries:
        c = s.cal_means[alpha][metric]
        o = s.raw_means[metric] if against == "raw" else getattr(s.reference, metric)
        if c is not None and o is not None:
            cal.append(c)
            other.append(o)
    return np.asarray(cal), np.asarray(other)


def alpha_sweep(
    summaries: Sequence[BatchSummary],
    alphas: Sequence[float],
    metrics: Sequence[str] = PERFORMANCE_METRICS,
    significance: float = 0.05,
) -> list[AlphaSweepRow]:
    """Batch-level mean improvement over raw, its t interval and one-sample p-value."""
    rows = []
    for m in metrics:
        for a in alphas:
            cal, raw = _paired_batch_values(summaries, m, a)
            diff = cal - raw
            if len(diff) == 0:
                rows.append(AlphaSweepRow(m, a, None, None, None, None, False, 0))
                continue
            if len(diff) < 2:
                rows.append(AlphaSweepRow(m, a, float(diff[0]), None, None, None, False, 1))
                continue
            t = stats.one_sample_t_test(diff)
            sig = t.p_value is not None and t.p_value < significance
            rows.append(AlphaSweepRow(m, a, t.estimate, t.ci_low, t.ci_high, t.p_value, sig, len(diff)))
    return rows


def plateau_alpha(
    alphas: Sequence[float], p_values: Sequence[float | None], cap: float, significance: float = 0.05
) -> float | None:
    """Smallest alpha <= cap that is significant while the next grid alpha is not.

    Falls back to the largest significant alpha <= cap; None if nothing is significant.
    """
    if len(alphas) != len(p_values):
        raise DomainError("alphas and p_values differ in length")
    sig = [p is not None and p < significance for p in p_values]
    for i in range(len(alphas) - 1):
        if alphas[i] > cap:
            break
        if sig[i] and not sig[i + 1]:
            return alphas[i]
    candidates = [a for a, s in zip(alphas, sig) if s and a <= cap]
    return max(candidates) if candidates else None


def _snap_down(value: float, grid: Sequence[float]) -> float:
    below = [g for g in grid if g <= value + 1e-12]
    return max(below) if below else min(grid)


def recommend_alpha(optima: Sequence[float | None], grid: Sequence[float], cap: float) -> float:
    """min(median of per-metric optima, cap), kept on the grid.

    An even-count median falls between grid points and is snapped down; with
    no optimum at all the smallest grid alpha is returned.
    """
    found = sorted(a for a in optima if a is not None)
    if not found:
        return min(min(grid), cap)
    return _snap_down(min(median(found), cap), grid)


@dataclass(frozen=True)
class AlphaSelection:
    per_metric: dict[str, float | None]
    recommended: float


def phase1_select_alpha(
    rows: Sequence[AlphaSweepRow], cap: float = 2.0, significance: float = 0.05
) -> AlphaSelection:
    if not rows:
        raise DomainError("empty alpha sweep")
    per_metric = {}
    grid = sorted({r.alpha for r in rows})
    for m in dict.fromkeys(r.metric for r in rows):
        mine = sorted((r for r in rows if r.metric == m), key=lambda r: r.alpha)
        per_metric[m] = plateau_alpha([r.alpha for r in mine], [r.p_value for r in mine], cap, significance)
    return AlphaSelection(per_metric, recommend_alpha(list(per_metric.values()), grid, cap))


# ---------------------------------------------------------------- phase 2


def _comparison(a: np.ndarray, b: np.ndarray, n_tests: int) -> dict:
    if len(a) < 2:
        return {"n": int(len(a)), "degenerate": True}
    t = stats.paired_t_test(a, b)
    d_pooled = stats.cohens_d_pooled(a, b)
    d_avg = stats.cohens_d_avgvar(a, b)
    out = t.as_dict()
    out.update(
        p_bonferroni=stats.bonferroni(t.p_value, n_tests),
        cohens_d_pooled=d_pooled,
        cohens_d_avgvar=d_avg,
        effect_magnitude=stats.interpret_d(d_pooled),
    )
    return out


def _summary(values: np.ndarray) -> dict:
    if len(values) == 0:
        return {"mean": None, "ci_low": None, "ci_high": None}
    if len(values) < 2:
        return {"mean": float(values[0]), "ci_low": None, "ci_high": None}
    mean, lo, hi = stats.mean_ci_t(values)
    return {"mean": mean, "ci_low": lo, "ci_high": hi}


def _triples(summaries: Sequence[BatchSummary], metric: str, alpha: float):
    raw, cal, ref = [], [], []
    for s in summaries:
        r, c, f = s.raw_means[metric], s.cal_means[alpha][metric], getattr(s.reference, metric)
        if r is not None and c is not None and f is not None:
            raw.append(r)
            cal.append(c)
            ref.append(f)
    return np.asarray(raw), np.asarray(cal), np.asarray(ref)


def phase2_analysis(
    summaries: Sequence[BatchSummary], alpha: float, metrics: Sequence[str] = PERFORMANCE_METRICS
) -> dict:
    """Per metric: batch-level means with t intervals and three paired t tests."""
    if len(summaries) < 2:
        raise DomainError("phase 2 needs at least 2 batches")
    n_tests = 3 * len(metrics)
    report = {"alpha": alpha, "n_batches": len(summaries), "bonferroni_tests": n_tests, "metrics": {}}
    for m in metrics:
        raw, cal, ref = _triples(summaries, m, alpha)
        entry = {
            "n_batches": int(len(raw)),
            "raw": _summary(raw),
            "calibrated": _summary(cal),
            "reference": _summary(ref),
        }
        if len(raw):
            imp = float(np.mean(cal) - np.mean(raw))
            base = float(np.mean(raw))
            entry["improvement"] = imp
            entry["improvement_pct"] = imp / base * 100 if base else None
        entry["cal_vs_raw"] = _comparison(cal, raw, n_tests)
        entry["cal_vs_ref"] = _comparison(cal, ref, n_tests)
        entry["raw_vs_ref"] = _comparison(raw, ref, n_tests)
        report["metrics"][m] = entry
    return report


@dataclass(frozen=True)
class DistanceRow:
    metric: str
    d_raw: float
    d_cal: float
    reduction: float
    percent_closer: float | None
    p_value: float | None


def distance_row(metric: str, raw: float, cal: float, ref: float, p_value: float | None = None) -> DistanceRow:
    d_raw, d_cal = abs(raw - ref), abs(cal - ref)
    reduction = d_raw - d_cal
    pct = reduction / d_raw * 100 if d_raw > 0 else None
    return DistanceRow(metric, d_raw, d_cal, reduction, pct, p_value)


def distance_analysis(
    summaries: Sequence[BatchSummary], alpha: float, metrics: Sequence[str] = PERFORMANCE_METRICS
) -> list[DistanceRow]:
    rows = []
    for m in metrics:
        raw, cal, ref = _triples(summaries, m, alpha)
        if len(raw) == 0:
            continue
        p = None
        if len(raw) >= 2:
            p = stats.paired_t_test(np.abs(raw - ref), np.abs(cal - ref)).p_value
        rows.append(distance_row(m, float(np.mean(raw)), float(np.mean(cal)), float(np.mean(ref)), p))
    return rows


# ---------------------------------------------------------------- transfer


def transfer_eval(
    run: RunConfig,
    alpha: float | None = None,
    registry: CodeRegistry | None = None,
    metrics: Sequence[str] = TRANSFER_METRICS,
) -> dict:
    """Train once on dataset 0, apply unchanged to datasets 1..N-1.

    For each metric: median calibrated-minus-raw difference with an empirical
    95% interval, Wilcoxon signed-rank p-value and average-variance Cohen's d.
    """
    alpha = run.transfer_alpha if alpha is None else alpha
    rng = stream(run.master_seed, TRANSFER, 0, 0)
    source = generate_cohort(draw_cohort_config(run, rng, run.dataset_size), registry)
    model, ref_sfi = train_reference(source, replace(run.forest, seed=int(rng.integers(0, 2**63))))
    raws, cals, deltas = [], [], []
    for j in range(1, run.transfer_datasets):
        rng = stream(run.master_seed, TRANSFER, 0, j)
        cohort = generate_cohort(draw_cohort_config(run, rng, run.dataset_size), registry)
        raw, cal, delta, _, _ = evaluate_cohort(cohort, model, ref_sfi, [alpha], run.threshold)
        raws.append(raw)
        cals.append(cal[alpha])
        deltas.append(delta[alpha])
    n_pairs = len(raws)
    report = {
        "alpha": alpha,
        "ref_mean_sfi": ref_sfi,
        "n_datasets": n_pairs,
        "degenerate": n_pairs < 2,
        "mean_delta_error": math.fsum(deltas) / n_pairs,
        "metrics": {},
    }
    for m in metrics:
        pairs = [(getattr(c, m), getattr(r, m)) for c, r in zip(cals, raws)]
        pairs = [(c, r) for c, r in pairs if c is not None and r is not None]
        c = np.asarray([p[0] for p in pairs])
        r = np.asarray([p[1] for p in pairs])
        entry = {"n": len(pairs), "raw_mean": _defined_mean(r.tolist()), "calibrated_mean": _defined_mean(c.tolist())}
        if len(pairs) == 0:
            entry["degenerate"] = True
            report["metrics"][m] = entry
            continue
        w = stats.wilcoxon_signed_rank(c, r)
        entry.update(
            median_difference=w.estimate,
            ci_low=w.ci_low,
            ci_high=w.ci_high,
            statistic=w.statistic,
            p_value=w.p_value,
            cohens_d=stats.cohens_d_avgvar(c, r) if len(pairs) >= 2 else None,
            degenerate=len(pairs) < 2 or w.degenerate,
        )
        report["metrics"][m] = entry
    return report


# ---------------------------------------------------------------- full study


@dataclass
class StudyResult:
    outcomes: list[BatchOutcome]
    sweep: list[AlphaSweepRow]
    selection: AlphaSelection
    alpha: float
    phase2: dict | None
    distance: list[DistanceRow]
    transfer: dict | None

    @property
    def summaries(self) -> list[BatchSummary]:
        return [o.summary for o in self.outcomes]


def run_study(
    run: RunConfig,
    jobs: int = 1,
    alpha_override: float | None = None,
    with_transfer: bool = True,
    registry: CodeRegistry | None = None,
) -> StudyResult:
    run.validate()
    alphas = set(run.evaluated_alphas)
    if alpha_override is not None:
        alphas.add(float(alpha_override))
    outcomes = run_batches(run, sorted(alphas), jobs, registry)
    summaries = [o.summary for o in outcomes]
    sweep = alpha_sweep(summaries, run.evaluated_alphas, significance=run.significance)
    selection = phase1_select_alpha(sweep, run.alpha_cap, run.significance)
    alpha = float(alpha_override) if alpha_override is not None else selection.recommended
    phase2 = phase2_analysis(summaries, alpha) if len(summaries) >= 2 else None
    distance = distance_analysis(summaries, alpha)
    transfer = transfer_eval(run, alpha_override, registry) if with_transfer else None
    return StudyResult(outcomes, sweep, selection, alpha, phase2, distance, transfer)
