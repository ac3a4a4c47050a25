"""Command-line driver for fitting, prediction, fit statistics, simulation.

Subcommands: fit, predict, gof, simulate, study, transitivity.  Every run
writes machine-readable JSON/CSV plus a manifest recording the resolved
configuration, input digests, seed, tool version, and wall-clock time.
Exit codes: 0 success, 2 validation error (diagnostic on standard error),
3 numerical failure (partial results flagged in a sidecar file).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import __version__
from .depthurst import (
    DependenceSpec,
    IdentificationStrategy,
    NonPositiveDefiniteError,
    apply_identification,
)
from .estdep import (
    DependentFit,
    ParameterVector,
    QmcConfig,
    fit_full_ml,
    fit_limited_info,
    fit_pairwise,
    limited_info_summary,
    warm_start,
)
from .gof import g_statistic, m2_statistic
from .indep import (
    ComparisonTerm,
    FitResult,
    LinearPredictorSpec,
    ObjectCovariateTerm,
    SubjectObjectTerm,
    WorthTerm,
    fit_cumulative,
    fit_linear,
    predict_prob,
    with_quasi,
)
from .linkmath import get_link
from .pcdata import (
    aggregate_counts,
    all_pairs,
    load_aggregated_csv,
    load_long_csv,
    transitivity_report,
)
from .simlab import StudyConfig, run_study, simulate_dataset

__all__ = ["RunManifest", "build_parser", "run_cli", "main"]

THREADS_ENV = "PAIRCOMP_THREADS"

# flags that mean a fit completed but cannot be trusted as converged
_FAILURE_FLAGS = ("not-converged", "stage-3-not-converged",
                  "hessian-not-negative-definite", "singular-information")

# numeric breakdowns (as opposed to bad inputs); NonPositiveDefiniteError
# subclasses ValueError, so these are caught before the validation branch
_NUMERICAL_ERRORS = (NonPositiveDefiniteError, np.linalg.LinAlgError,
                     FloatingPointError, OverflowError, ZeroDivisionError)

_VALIDATION_ERRORS = (ValueError, KeyError, TypeError, FileNotFoundError,
                      IsADirectoryError, NotADirectoryError,
                      json.JSONDecodeError)


class CliError(ValueError):
    """Bad arguments or inconsistent inputs; maps to exit code 2."""


class NumericalFailure(RuntimeError):
    """A fit broke down or finished unconverged; maps to exit code 3."""


# ---------------------------------------------------------------------------
# manifest and file plumbing


@dataclass(frozen=True)
class RunManifest:
    """Provenance record written next to (or inside) every output."""

    subcommand: str
    config: dict
    input_digests: dict
    seed: int | None
    tool_version: str
    duration_seconds: float

    def to_json_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "input_digests": dict(self.input_digests),
            "seed": self.seed,
            "tool_version": self.tool_version,
            "duration_seconds": self.duration_seconds,
        }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _resolve_data_path(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    if path.name == "universities_agg.csv":
        from .datasets import university_counts_path

        bundled = university_counts_path()
        if bundled.exists():
            return bundled
    raise CliError(f"data file not found: {arg}")


def _load_json(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise CliError(f"{path}: expected a JSON object at the top level")
    return doc


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _load_dataset(path: Path, fmt: str):
    """Read a dataset, sniffing long vs aggregated layout when asked."""
    if fmt == "auto":
        with open(path, encoding="utf-8") as handle:
            header = handle.readline()
        names = [h.strip() for h in next(csv.reader(io.StringIO(header)), [])]
        fmt = "long" if "outcome" in names else "aggregated"
    if fmt == "long":
        return load_long_csv(path)
    return load_aggregated_csv(path)


def _partial_flag_path(out: str | None) -> Path | None:
    if out is None:
        return None
    path = Path(out)
    if path.suffix == "" or path.is_dir():
        return path / "partial.json"
    return path.with_name(path.name + ".partial")


def _write_partial_flag(out: str | None, subcommand: str, flags, message):
    path = _partial_flag_path(out)
    if path is None:
        return None
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(path, {"subcommand": subcommand, "flags": list(flags),
                       "message": message})
    return path


def _apply_thread_cap(threads: int | None) -> int | None:
    if threads is None:
        return None
    if threads < 1:
        raise CliError("--threads must be at least 1")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=threads)
    except ImportError:
        # nothing in-process spawns workers; cap child processes via the
        # conventional BLAS environment variables
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    return threads


# ---------------------------------------------------------------------------
# model documents


def _object_index(value, objects, what: str) -> int:
    if isinstance(value, str):
        if value not in objects:
            raise CliError(f"unknown {what} object {value!r}")
        return objects.index(value)
    try:
        return int(value)
    except (TypeError, ValueError):
        raise CliError(f"{what} must be an object label or index") from None


_TERM_TYPES = ("worth", "object-covariate", "subject-object", "comparison")


def _predictor_from_doc(doc: dict, data) -> LinearPredictorSpec:
    term_docs = doc.get("terms")
    if not term_docs:
        raise CliError("the independent estimator needs a non-empty "
                       "'terms' list in the model document")
    terms = []
    for t in term_docs:
        kind = t.get("type")
        if kind == "worth":
            terms.append(WorthTerm(constraint=t.get("constraint",
                                                    "reference"),
                                   reference=t.get("reference")))
        elif kind == "object-covariate":
            terms.append(ObjectCovariateTerm(column=t["column"]))
        elif kind == "subject-object":
            terms.append(SubjectObjectTerm(
                subject_column=t["subject_column"],
                object=t.get("object"),
                object_column=t.get("object_column"),
                name=t.get("name")))
        elif kind == "comparison":
            terms.append(ComparisonTerm(column=t["column"]))
        else:
            raise CliError(f"unknown term type {kind!r}; expected one of "
                           f"{_TERM_TYPES}")
    link = get_link(doc.get("link", "probit"))
    H = int(doc.get("H", data.H))
    return LinearPredictorSpec(terms=tuple(terms), link=link, H=H)


def _dependence_from_doc(doc: dict, data):
    dep = doc.get("dependence")
    if dep is None:
        raise CliError("the ml, li, and pl estimators need a 'dependence' "
                       "block in the model document")
    dep = dict(dep)
    dep.setdefault("n_objects", data.n_objects)
    dep.setdefault("H", doc.get("H", data.H))
    spec = DependenceSpec.from_json_dict(dep)
    if spec.n_objects != data.n_objects:
        raise CliError(f"model declares {spec.n_objects} objects but the "
                       f"data has {data.n_objects}")
    if spec.H != data.H:
        raise CliError(f"model declares H={spec.H} but the data has "
                       f"H={data.H}")
    ident = dict(doc.get("identification",
                         {"kind": "unit-diagonal-omega-fixed"}))
    strategy = IdentificationStrategy(
        kind=ident.get("kind", "unit-diagonal-omega-fixed"),
        reference=_object_index(ident.get("reference", -1), data.objects,
                                "reference"),
        anchor=_object_index(ident.get("anchor", 0), data.objects,
                             "anchor"))
    return spec, strategy


def _apply_tie_policy(data, doc: dict):
    policy = doc.get("ties", "keep-categories")
    if policy == "keep-categories":
        return data
    if policy == "split-half":
        return data.split_ties()
    raise CliError(f"unknown tie policy {policy!r}; expected "
                   "'keep-categories' or 'split-half'")


# ---------------------------------------------------------------------------
# fit


def _qmc_from_args(args) -> QmcConfig:
    return QmcConfig(n_points=args.qmc_points, n_shifts=args.qmc_shifts,
                     seed=args.qmc_seed)


def _fit_independence(data, doc: dict) -> FitResult:
    spec = _predictor_from_doc(doc, data)
    if spec.H != data.H:
        raise CliError(f"model declares H={spec.H} but the data has "
                       f"H={data.H} after tie handling")
    if spec.H == 2:
        fit = fit_linear(data, spec)
    else:
        fit = fit_cumulative(data, spec)
    if spec.worth_term is not None:
        try:
            fit = with_quasi(fit)
        except ValueError:
            fit = replace(fit, flags=fit.flags +
                          ("quasi-variances-unavailable",))
    return fit


def _fit_dependent(data, doc: dict, args) -> DependentFit:
    spec, strategy = _dependence_from_doc(doc, data)
    start = warm_start(data, spec, strategy)
    if args.estimator == "li":
        return fit_limited_info(data, spec, strategy, weight=args.weight,
                                start=start)
    fit = fit_pairwise(data, spec, strategy, start=start)
    if args.estimator == "pl":
        return fit
    layout = apply_identification(spec, strategy)
    return fit_full_ml(data, spec, strategy,
                       start=ParameterVector(fit.psi, layout),
                       qmc=_qmc_from_args(args))


def _check_fit_flags(flags, converged: bool, out: str | None,
                     subcommand: str):
    bad = [f for f in flags if f in _FAILURE_FLAGS]
    if not converged and "not-converged" not in bad:
        bad.append("not-converged")
    if bad:
        _write_partial_flag(out, subcommand, bad,
                            "fit completed but is flagged; results were "
                            "written and should be treated as partial")
        raise NumericalFailure(f"fit flagged: {', '.join(bad)}")


def _cmd_fit(args, t0: float):
    data_path = _resolve_data_path(args.data)
    model_path = Path(args.model)
    if not model_path.exists():
        raise CliError(f"model document not found: {args.model}")
    doc = _load_json(model_path)
    data = _load_dataset(data_path, args.format)
    data = _apply_tie_policy(data, doc)

    if args.estimator == "independent":
        fit = _fit_independence(data, doc)
        payload, fit_type = fit.to_json_dict(), "independence"
        flags, converged = list(fit.flags), fit.converged
    else:
        fit = _fit_dependent(data, doc, args)
        payload, fit_type = fit.to_json_dict(), "dependent"
        flags, converged = list(fit.flags), fit.converged

    manifest = RunManifest(
        subcommand="fit",
        config={"estimator": args.estimator, "model": doc,
                "format": args.format, "weight": args.weight,
                "qmc": {"n_points": args.qmc_points,
                        "n_shifts": args.qmc_shifts,
                        "seed": args.qmc_seed},
                "threads": args.threads},
        input_digests={str(data_path): _sha256(data_path),
                       str(model_path): _sha256(model_path)},
        seed=None,
        tool_version=__version__,
        duration_seconds=time.perf_counter() - t0)
    envelope = {
        "fit_type": fit_type,
        "estimator": args.estimator,
        "objects": list(data.objects),
        "fit": payload,
        "manifest": manifest.to_json_dict(),
    }
    _write_json(Path(args.out), envelope)
    _check_fit_flags(flags, converged, args.out, "fit")


# ---------------------------------------------------------------------------
# predict


def _parse_pair(arg: str):
    parts = [p.strip() for p in arg.split(",")]
    if len(parts) != 2 or not all(parts):
        raise CliError("--pair expects two comma-separated object labels")
    return parts[0], parts[1]


def _parse_covariates(items) -> dict:
    values = {}
    for item in items or ():
        name, sep, raw = item.partition("=")
        if not sep or not name:
            raise CliError(f"--covariate expects name=value, got {item!r}")
        try:
            values[name] = float(raw)
        except ValueError:
            raise CliError(f"covariate {name!r} value {raw!r} is not a "
                           "number") from None
    return values


def _dependent_pair_probs(fit: DependentFit, objects, first, second):
    for label in (first, second):
        if label not in objects:
            raise CliError(f"unknown object {label!r}")
    i, j = objects.index(first), objects.index(second)
    mirrored = i > j
    if mirrored:
        i, j = j, i
    row = all_pairs(len(objects)).index((i, j))
    std = fit.standardized()
    cuts = np.concatenate([[-np.inf], std.cutpoints[row], [np.inf]])
    probs = np.diff(ndtr(cuts))
    if mirrored:
        probs = probs[::-1]
    return np.clip(probs, 0.0, 1.0)


def _probability_labels(probs: np.ndarray) -> dict:
    H = probs.size
    out = {
        "first_object_preferred": float(probs[H - 1]),
        "second_object_preferred": float(probs[0]),
    }
    if H % 2 == 1:
        out["tie"] = float(probs[(H - 1) // 2])
    return out


def _cmd_predict(args, t0: float):
    fit_path = Path(args.fit)
    if not fit_path.exists():
        raise CliError(f"fit file not found: {args.fit}")
    envelope = _load_json(fit_path)
    first, second = _parse_pair(args.pair)
    covariates = _parse_covariates(args.covariate)
    objects = envelope.get("objects", [])

    if envelope.get("fit_type") == "independence":
        fit = FitResult.from_json_dict(envelope["fit"])
        probs = predict_prob(fit, (first, second), covariates)
    elif envelope.get("fit_type") == "dependent":
        if covariates:
            raise CliError("dependent fits take no prediction covariates")
        fit = DependentFit.from_json_dict(envelope["fit"])
        probs = _dependent_pair_probs(fit, tuple(objects), first, second)
    else:
        raise CliError(f"{args.fit}: not a fit file produced by this tool")

    manifest = RunManifest(
        subcommand="predict",
        config={"pair": [first, second], "covariates": covariates},
        input_digests={str(fit_path): _sha256(fit_path)},
        seed=None, tool_version=__version__,
        duration_seconds=time.perf_counter() - t0)
    doc = {
        "pair": [first, second],
        "categories": list(range(1, probs.size + 1)),
        "probabilities": [float(p) for p in probs],
        **_probability_labels(probs),
        "manifest": manifest.to_json_dict(),
    }
    if args.out:
        _write_json(Path(args.out), doc)
    else:
        print(json.dumps(doc, indent=2))


# ---------------------------------------------------------------------------
# goodness of fit


def _cmd_gof(args, t0: float):
    data_path = _resolve_data_path(args.data)
    fit_path = Path(args.fit)
    if not fit_path.exists():
        raise CliError(f"fit file not found: {args.fit}")
    envelope = _load_json(fit_path)
    if envelope.get("fit_type") != "dependent":
        raise CliError("fit statistics need a fit produced by the ml, li, "
                       "or pl estimators")
    fit = DependentFit.from_json_dict(envelope["fit"])
    data = _load_dataset(data_path, args.format)

    if args.statistic == "m2":
        report = m2_statistic(data, fit)
    else:
        summary = limited_info_summary(data, weight=args.weight)
        report = g_statistic(summary, fit, weight=args.weight)

    manifest = RunManifest(
        subcommand="gof",
        config={"statistic": args.statistic, "weight": args.weight,
                "format": args.format},
        input_digests={str(data_path): _sha256(data_path),
                       str(fit_path): _sha256(fit_path)},
        seed=None, tool_version=__version__,
        duration_seconds=time.perf_counter() - t0)
    doc = {"gof": report.to_json_dict(),
           "manifest": manifest.to_json_dict()}
    print(json.dumps(doc, indent=2))
    if args.out:
        updated = dict(envelope)
        updated["gof"] = report.to_json_dict()
        _write_json(Path(args.out), updated)


# ---------------------------------------------------------------------------
# simulate


def _simulation_inputs(doc: dict):
    for key in ("spec", "strategy", "truth"):
        if key not in doc:
            raise CliError(f"simulation config is missing {key!r}")
    spec = DependenceSpec.from_json_dict(doc["spec"])
    strategy = IdentificationStrategy.from_json_dict(doc["strategy"])
    layout = apply_identification(spec, strategy)
    truth = np.asarray(doc["truth"], dtype=float)
    if truth.shape != (layout.size,):
        raise CliError(f"truth vector must have length {layout.size} for "
                       "this model")
    labels = doc.get("labels")
    if labels is not None:
        labels = tuple(labels)
        if len(labels) != spec.n_objects:
            raise CliError(f"need {spec.n_objects} object labels, got "
                           f"{len(labels)}")
    return spec, strategy, ParameterVector(truth, layout), labels


def _write_long_csv(path: Path, data):
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["subject", "object_i", "object_j", "outcome"])
        for k in range(data.n_records):
            writer.writerow([
                data.subjects[data.subject_idx[k]],
                data.objects[data.pair_i[k]],
                data.objects[data.pair_j[k]],
                int(data.outcome[k]),
            ])


def _cmd_simulate(args, t0: float):
    config_path = Path(args.config)
    if not config_path.exists():
        raise CliError(f"config file not found: {args.config}")
    doc = _load_json(config_path)
    spec, strategy, truth, labels = _simulation_inputs(doc)
    S = int(doc.get("S", 0))
    if S < 1:
        raise CliError("simulation config needs a positive subject count S")
    data = simulate_dataset(spec, strategy, truth, S=S, seed=args.seed,
                            labels=labels)
    out_path = Path(args.out)
    _write_long_csv(out_path, data)
    manifest = RunManifest(
        subcommand="simulate",
        config={"simulation": doc},
        input_digests={str(config_path): _sha256(config_path)},
        seed=args.seed, tool_version=__version__,
        duration_seconds=time.perf_counter() - t0)
    _write_json(out_path.with_name(out_path.name + ".manifest.json"),
                manifest.to_json_dict())


# ---------------------------------------------------------------------------
# study


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, rows: list):
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    columns = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in columns])


def _human_report(summary) -> str:
    lines = []
    levels = summary.config.levels
    header = (["parameter", "truth", "mean", "median", "se", "sd"]
              + [f"cov{level}" for level in levels]
              + ["ok", "fail"])
    for method in summary.config.estimators:
        lines.append(f"estimator: {method}")
        widths = [11, 8, 8, 8, 8, 8] + [9] * len(levels) + [5, 5]
        lines.append("  " + "".join(h.rjust(w)
                                    for h, w in zip(header, widths)))
        for row in summary.table(method):
            cells = [row["parameter"], f"{row['truth']:.3f}",
                     f"{row['mean']:.3f}", f"{row['median']:.3f}",
                     f"{row['se_mean']:.3f}", f"{row['sd']:.3f}"]
            cells += [f"{row[f'coverage_{level}']:.3f}" for level in levels]
            cells += [str(row["n_success"]), str(row["n_failure"])]
            lines.append("  " + "".join(c.rjust(w)
                                        for c, w in zip(cells, widths)))
        lines.append("")
    return "\n".join(lines)


def _cmd_study(args, t0: float):
    config_path = Path(args.config)
    if not config_path.exists():
        raise CliError(f"config file not found: {args.config}")
    doc = _load_json(config_path)
    try:
        config = StudyConfig.from_json_dict(doc)
    except (KeyError, TypeError) as exc:
        raise CliError(f"{config_path}: bad study config ({exc})") from None
    config = replace(config, seed=args.seed)
    summary = run_study(config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "summary.csv", summary.summary_rows())
    _write_csv(out_dir / "raw_estimates.csv", summary.raw_rows())
    _write_json(out_dir / "summary.json", summary.to_json_dict())
    (out_dir / "report.txt").write_text(_human_report(summary),
                                        encoding="utf-8")
    manifest = RunManifest(
        subcommand="study",
        config={"study": config.to_json_dict(), "threads": args.threads},
        input_digests={str(config_path): _sha256(config_path)},
        seed=args.seed, tool_version=__version__,
        duration_seconds=time.perf_counter() - t0)
    _write_json(out_dir / "manifest.json", manifest.to_json_dict())

    total_failures = sum(col.failures for col in summary.columns.values())
    if total_failures == config.R * len(config.estimators):
        _write_partial_flag(args.out, "study", ["all-replicates-failed"],
                            "every replicate failed for every estimator")
        raise NumericalFailure("every replicate failed")


# ---------------------------------------------------------------------------
# transitivity


def _triad_rows(report) -> list:
    excluded = {frozenset(t) for t, _ in report.excluded}
    weak = {frozenset(t): probs for t, probs in report.weak}
    moderate = {frozenset(t): probs for t, probs in report.moderate}
    strong = {frozenset(t): probs for t, probs in report.strong}
    from itertools import combinations

    rows = []
    for triad in combinations(report.objects, 3):
        key = frozenset(triad)
        if key in excluded:
            rows.append({"objects": list(triad), "status": "excluded"})
            continue
        row = {
            "objects": list(triad),
            "status": ("violates-weak" if key in weak else
                       "violates-moderate" if key in moderate else
                       "violates-strong" if key in strong else
                       "consistent"),
            "weak_violation": key in weak,
            "moderate_violation": key in moderate,
            "strong_violation": key in strong,
        }
        worst = strong.get(key) or moderate.get(key) or weak.get(key)
        if worst is not None:
            row["probabilities"] = [float(p) for p in worst]
        rows.append(row)
    return rows


def _cmd_transitivity(args, t0: float):
    data_path = _resolve_data_path(args.data)
    data = _load_dataset(data_path, args.format)
    counts = aggregate_counts(data)
    report = transitivity_report(counts, ties=args.ties)

    manifest = RunManifest(
        subcommand="transitivity",
        config={"ties": args.ties, "format": args.format},
        input_digests={str(data_path): _sha256(data_path)},
        seed=None, tool_version=__version__,
        duration_seconds=time.perf_counter() - t0)
    doc = {
        "objects": list(report.objects),
        **report.summary(),
        "triads": _triad_rows(report),
        "manifest": manifest.to_json_dict(),
    }
    if args.out:
        _write_json(Path(args.out), doc)
    else:
        print(json.dumps(doc, indent=2))


# ---------------------------------------------------------------------------
# argument parsing


def _default_threads() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help="cap worker threads (default: "
                             f"${THREADS_ENV} or library default)")

    parser = argparse.ArgumentParser(
        prog="paircomp",
        description="Paired-comparison model fitting and simulation")
    parser.add_argument("--version", action="version",
                        version=f"paircomp {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    fit = sub.add_parser("fit", parents=[common],
                         help="fit a model to a dataset")
    fit.add_argument("--data", required=True, help="dataset CSV")
    fit.add_argument("--model", required=True,
                     help="JSON model description")
    fit.add_argument("--estimator", required=True,
                     choices=("ml", "li", "pl", "independent"))
    fit.add_argument("--out", required=True, help="output fit JSON")
    fit.add_argument("--format", choices=("auto", "long", "aggregated"),
                     default="auto")
    fit.add_argument("--weight", default="identity",
                     choices=("identity", "inverse-diagonal", "inverse-xi"),
                     help="distance weight for the li estimator")
    fit.add_argument("--qmc-points", type=int, default=509)
    fit.add_argument("--qmc-shifts", type=int, default=4)
    fit.add_argument("--qmc-seed", type=int, default=0)
    fit.set_defaults(handler=_cmd_fit)

    predict = sub.add_parser("predict", parents=[common],
                             help="category probabilities for one pair")
    predict.add_argument("--fit", required=True, help="fit JSON from `fit`")
    predict.add_argument("--pair", required=True,
                         help="two object labels, comma separated")
    predict.add_argument("--covariate", action="append", metavar="NAME=VAL",
                         help="covariate value (repeatable)")
    predict.add_argument("--out", help="write JSON here instead of stdout")
    predict.set_defaults(handler=_cmd_predict)

    gof = sub.add_parser("gof", parents=[common],
                         help="low-order-marginal fit statistics")
    gof.add_argument("--data", required=True)
    gof.add_argument("--fit", required=True)
    gof.add_argument("--statistic", required=True, choices=("g", "m2"))
    gof.add_argument("--weight", default="inverse-xi",
                     choices=("identity", "inverse-diagonal", "inverse-xi"),
                     help="summary weight for the g statistic")
    gof.add_argument("--format", choices=("auto", "long", "aggregated"),
                     default="auto")
    gof.add_argument("--out",
                     help="write the fit JSON with a 'gof' key here")
    gof.set_defaults(handler=_cmd_gof)

    simulate = sub.add_parser("simulate", parents=[common],
                              help="draw one dataset from a model")
    simulate.add_argument("--config", required=True,
                          help="JSON with spec, strategy, truth, S")
    simulate.add_argument("--seed", required=True, type=int)
    simulate.add_argument("--out", required=True, help="output CSV")
    simulate.set_defaults(handler=_cmd_simulate)

    study = sub.add_parser("study", parents=[common],
                           help="replicated simulate-and-fit study")
    study.add_argument("--config", required=True, help="study config JSON")
    study.add_argument("--seed", required=True, type=int)
    study.add_argument("--out", required=True, help="output directory")
    study.set_defaults(handler=_cmd_study)

    transitivity = sub.add_parser("transitivity", parents=[common],
                                  help="triadwise transitivity diagnostics")
    transitivity.add_argument("--data", required=True)
    transitivity.add_argument("--ties", choices=("exclude", "split"),
                              default="exclude")
    transitivity.add_argument("--format",
                              choices=("auto", "long", "aggregated"),
                              default="auto")
    transitivity.add_argument("--out",
                              help="write JSON here instead of stdout")
    transitivity.set_defaults(handler=_cmd_transitivity)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        _apply_thread_cap(args.threads)
        args.handler(args, t0)
        return 0
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _NUMERICAL_ERRORS as exc:
        flag_path = _write_partial_flag(
            getattr(args, "out", None), args.subcommand,
            ["numerical-failure"], str(exc))
        suffix = f" (partial-result flag: {flag_path})" if flag_path else ""
        print(f"error: {exc}{suffix}", file=sys.stderr)
        return 3
    except _VALIDATION_ERRORS as exc:
        message = exc.args[0] if exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 2


def main():  # pragma: no cover - thin wrapper
    sys.exit(run_cli())


if __name__ == "__main__":  # pragma: no cover
    main()
