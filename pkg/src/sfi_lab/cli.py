"""Command-line entry point: ``sfi-lab <subcommand> --config run.json``.

Every invocation writes into ``<out>/<UTC timestamp>-<subcommand>/``. Exit
codes: 0 success, 2 invalid configuration, 3 runtime failure, 4 I/O
failure; on failure a JSON error object is printed to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from sfi_lab import experiment, report
from sfi_lab.calibration import (
    CalibrationParams,
    calibrate,
    calibration_error_delta,
    estimate_optimal_alpha,
    write_calibration_csv,
)
from sfi_lab.cohort import CodeRegistry, cohort_features, cohort_manifest, generate_cohort, read_cohort_csv, write_cohort_csv
from sfi_lab.errors import ConfigError, DegenerateInputError
from sfi_lab.experiment import RunConfig
from sfi_lab.forest import predict_proba
from sfi_lab.metrics import metric_set
from sfi_lab.sfi import compute_sfi, write_sfi_csv

SUBCOMMANDS = ("simulate", "sfi", "train", "calibrate", "phase1", "phase2", "full-run", "transfer")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4
DEFAULT_OUT = "runs"
# config keys that are not RunConfig fields
EXTRA_KEYS = ("registry_csv", "input_cohort_csv")

log = logging.getLogger("sfi_lab")


class Invocation:
    def __init__(self, args: argparse.Namespace):
        self.subcommand = args.subcommand
        self.config_path = args.config
        self.out = args.out
        self.seed = args.seed
        self.alpha = args.alpha
        self.jobs = args.jobs
        self.run: RunConfig | None = None
        self.registry: CodeRegistry | None = None
        self.input_cohort: Path | None = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfi-lab", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="JSON run configuration (defaults apply when omitted)")
    parser.add_argument("--out", type=Path, help=f"output root (default: $SFI_LAB_OUT or ./{DEFAULT_OUT})")
    parser.add_argument("--seed", type=int, help="override master_seed (and cohort.seed for simulate/sfi)")
    parser.add_argument("--alpha", type=float, help="calibration strength to use instead of the selected one")
    parser.add_argument("--jobs", type=int, default=1, help="parallel batch workers (never changes outputs)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(inv: Invocation) -> None:
    """Parse and validate everything before any work starts."""
    data = {}
    if inv.config_path is not None:
        try:
            data = json.loads(Path(inv.config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"config: cannot read {inv.config_path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a JSON object")
    extras = {k: data.pop(k) for k in EXTRA_KEYS if k in data}
    problems = []
    if inv.seed is not None:
        if not 0 <= inv.seed < 2**64:
            problems.append("--seed must be an unsigned 64-bit integer")
        else:
            data["master_seed"] = inv.seed
            if inv.subcommand in ("simulate", "sfi"):
                data["cohort"] = {**data.get("cohort", {}), "seed": inv.seed}
    if inv.alpha is not None and not (np.isfinite(inv.alpha) and inv.alpha >= 0):
        problems.append("--alpha must be a finite non-negative number")
    if inv.jobs < 1:
        problems.append("--jobs must be >= 1")
    try:
        inv.run = RunConfig.from_dict(data)
    except ConfigError as exc:
        problems.extend(exc.problems)
    if "registry_csv" in extras:
        try:
            inv.registry = CodeRegistry.from_csv(extras["registry_csv"])
        except OSError as exc:
            problems.append(f"registry_csv: cannot read ({exc.strerror})")
        except (ConfigError, KeyError) as exc:
            problems.append(f"registry_csv: {exc}")
    if "input_cohort_csv" in extras:
        inv.input_cohort = Path(extras["input_cohort_csv"])
        if not inv.input_cohort.is_file():
            problems.append(f"input_cohort_csv: no such file {inv.input_cohort}")
    if problems:
        raise ConfigError(problems)


def output_dir(inv: Invocation) -> Path:
    root = inv.out or Path(os.environ.get("SFI_LAB_OUT") or DEFAULT_OUT)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = Path(root) / f"{stamp}-{inv.subcommand}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _manifest(inv: Invocation, outdir: Path, **extra) -> None:
    report.write_json(
        outdir / "run-manifest.json",
        {
            "subcommand": inv.subcommand,
            "config": inv.run.to_dict(),
            "master_seed": inv.run.master_seed,
            "alpha_override": inv.alpha,
            "versions": report.versions(),
            **extra,
        },
    )


def _input_cohort(inv: Invocation):
    with open(inv.input_cohort, newline="", encoding="utf-8") as fh:
        return read_cohort_csv(fh)


def cmd_simulate(inv: Invocation, outdir: Path) -> None:
    cfg = inv.run.cohort
    cohort = generate_cohort(cfg, inv.registry)
    with open(outdir / "cohort.csv", "w", newline="", encoding="utf-8") as fh:
        write_cohort_csv(cohort, fh)
    (outdir / "cohort-manifest.json").write_text(cohort_manifest(cfg), encoding="utf-8")
    (inv.registry or CodeRegistry.default()).to_csv(outdir / "registry.csv")


def cmd_sfi(inv: Invocation, outdir: Path) -> None:
    if inv.input_cohort is not None:
        cohort = _input_cohort(inv)
    else:
        cohort = generate_cohort(inv.run.cohort, inv.registry)
        with open(outdir / "cohort.csv", "w", newline="", encoding="utf-8") as fh:
            write_cohort_csv(cohort, fh)
    with open(outdir / "sfi.csv", "w", newline="", encoding="utf-8") as fh:
        write_sfi_csv(cohort, fh)


def cmd_train(inv: Invocation, outdir: Path) -> None:
    ref = experiment.run_reference(inv.run, 0, inv.registry)
    (outdir / "model.json").write_text(ref.model.to_json() + "\n", encoding="utf-8")
    report.write_json(
        outdir / "reference.json",
        {
            "metrics": ref.metrics.as_dict(),
            "ref_mean_sfi": ref.ref_mean_sfi,
            "cohort_config": ref.cohort_config.to_dict(),
        },
    )
    _manifest(inv, outdir)


def cmd_calibrate(inv: Invocation, outdir: Path) -> None:
    run = inv.run
    alpha = inv.alpha if inv.alpha is not None else run.alpha_cap
    ref = experiment.run_reference(run, 0, inv.registry)
    if inv.input_cohort is not None:
        cohort = _input_cohort(inv)
    else:
        rng = experiment.stream(run.master_seed, experiment.TESTING, 0, 0)
        cohort = generate_cohort(experiment.draw_cohort_config(run, rng, run.dataset_size), inv.registry)
    X, y = cohort_features(cohort)
    y_raw = predict_proba(ref.model, X)
    sfi = np.array([compute_sfi(p).composite for p in cohort])
    params = CalibrationParams(alpha, ref.ref_mean_sfi)
    y_cal = calibrate(y_raw, sfi, params)
    with open(outdir / "calibration.csv", "w", newline="", encoding="utf-8") as fh:
        write_calibration_csv(fh, [p.id for p in cohort], y_raw, sfi, y_cal, params)
    try:
        alpha_star = estimate_optimal_alpha(y, y_raw, sfi, ref.ref_mean_sfi)
    except DegenerateInputError:
        alpha_star = None
    report.write_json(
        outdir / "calibration-summary.json",
        {
            "alpha": alpha,
            "ref_mean_sfi": ref.ref_mean_sfi,
            "optimal_alpha_closed_form": alpha_star,
            "delta_error": calibration_error_delta(y, y_raw, y_cal),
            "raw": metric_set(y, y_raw, run.threshold).as_dict(),
            "calibrated": metric_set(y, y_cal, run.threshold).as_dict(),
        },
    )
    _manifest(inv, outdir)


def _run_study(inv: Invocation, with_transfer: bool):
    return experiment.run_study(inv.run, inv.jobs, inv.alpha, with_transfer, inv.registry)


def _write_phase1(inv, study, outdir: Path) -> None:
    report.write_metrics_csv(outdir / "metrics.csv", study.outcomes)
    report.write_sweep_csv(outdir / "sweep.csv", study.sweep)
    report.write_json(
        outdir / "phase1.json",
        {
            "alpha_grid": list(inv.run.alpha_grid),
            "alpha_cap": inv.run.alpha_cap,
            "alpha_opt": study.selection.per_metric,
            "alpha_recommended": study.selection.recommended,
        },
    )


def _write_phase2(inv, study, outdir: Path) -> None:
    phase2 = dict(study.phase2 or {"alpha": study.alpha, "n_batches": len(study.outcomes), "degenerate": True})
    phase2["reference_batches"] = [
        {"batch": o.summary.batch, "ref_mean_sfi": o.summary.ref_mean_sfi, "metrics": o.summary.reference.as_dict()}
        for o in study.outcomes
    ]
    report.write_json(outdir / "phase2.json", phase2)
    report.write_distance_csv(outdir / "distance.csv", study.distance)


def cmd_phase1(inv: Invocation, outdir: Path) -> None:
    study = _run_study(inv, with_transfer=False)
    _write_phase1(inv, study, outdir)
    _manifest(inv, outdir)


def cmd_phase2(inv: Invocation, outdir: Path) -> None:
    study = _run_study(inv, with_transfer=False)
    _write_phase1(inv, study, outdir)
    _write_phase2(inv, study, outdir)
    _manifest(inv, outdir, alpha_used=study.alpha)


def cmd_full_run(inv: Invocation, outdir: Path) -> None:
    study = _run_study(inv, with_transfer=True)
    _write_phase1(inv, study, outdir)
    _write_phase2(inv, study, outdir)
    report.write_json(outdir / "transfer.json", study.transfer)
    _manifest(inv, outdir, alpha_used=study.alpha)


def cmd_transfer(inv: Invocation, outdir: Path) -> None:
    report.write_json(outdir / "transfer.json", experiment.transfer_eval(inv.run, inv.alpha, inv.registry))
    _manifest(inv, outdir)


COMMANDS = {
    "simulate": cmd_simulate,
    "sfi": cmd_sfi,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "phase1": cmd_phase1,
    "phase2": cmd_phase2,
    "full-run": cmd_full_run,
    "transfer": cmd_transfer,
}


def _fail(kind: str, code: int, message: str, problems=None) -> int:
    err = {"error": kind, "message": message}
    if problems is not None:
        err["problems"] = problems
    print(json.dumps(err), file=sys.stderr)
    return code


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    inv = Invocation(args)
    try:
        load_config(inv)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, str(exc), exc.problems)
    try:
        outdir = output_dir(inv)
        COMMANDS[inv.subcommand](inv, outdir)
    except OSError as exc:
        return _fail("io", EXIT_IO, f"{exc.__class__.__name__}: {exc}")
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable error
        log.debug("failure", exc_info=True)
        return _fail("runtime", EXIT_RUNTIME, f"{exc.__class__.__name__}: {exc}")
    print(outdir)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
