"""Seeded simulation studies for dependent paired-comparison models.

One generator draws latent comparison vectors from the structured
covariance and thresholds them into categories; a study runner repeats
simulate-and-fit over replicates, tracks failures per estimator, and
summarizes means, medians, standard errors, spreads and interval
coverage against the generating values.  Everything is a pure function
of the configuration and its master seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .depthurst import (
    DependenceSpec,
    IdentificationStrategy,
    apply_identification,
    build_covariance,
    pair_means,
)
from .estdep import (
    DependentFit,
    ParameterVector,
    QmcConfig,
    fit_full_ml,
    fit_limited_info,
    fit_pairwise,
    warm_start,
)
from .pcdata import PairedComparisonDataset, all_pairs

__all__ = [
    "StudyConfig",
    "StudySummary",
    "EstimatorColumn",
    "simulate_dataset",
    "run_study",
    "coverage",
    "ESTIMATOR_NAMES",
]

ESTIMATOR_NAMES = ("limited-information", "pairwise", "full-ml")


def _entropy(seed, *extra) -> list:
    parts = list(seed) if isinstance(seed, (tuple, list)) else [seed]
    return [int(p) for p in parts] + [int(e) for e in extra]


def simulate_dataset(spec: DependenceSpec, strategy: IdentificationStrategy,
                     truth, S: int, seed, labels=None
                     ) -> PairedComparisonDataset:
    """Draw S subjects from the dependence model at the given truth.

    Each subject has an independent substream derived from (seed,
    subject index), so the dataset is identical however the loop is
    scheduled.  Latents are thresholded into categories 1..H with
    category H meaning the first object of the pair is preferred.
    """
    layout = apply_identification(spec, strategy)
    if isinstance(truth, ParameterVector):
        if truth.layout.names != layout.names:
            raise ValueError("truth vector uses a different layout")
        psi = truth.values
    else:
        psi = np.asarray(truth, dtype=float)
    params = layout.extract(psi)
    n = spec.n_objects
    if labels is None:
        labels = tuple(f"object_{k + 1}" for k in range(n))
    from .pcdata import build_design_matrix

    pairs = all_pairs(n)
    design = build_design_matrix(n, pairs)
    sigma_z = build_covariance(spec, params, design)
    m = pair_means(spec, params, design)
    chol = np.linalg.cholesky(sigma_z)
    tau = params.tau if params.tau.size else np.zeros(1)
    N = len(pairs)
    outcomes = np.empty((S, N), dtype=np.int64)
    for s in range(S):
        rng = np.random.default_rng(
            np.random.SeedSequence(_entropy(seed, s)))
        z = m + chol @ rng.standard_normal(N)
        outcomes[s] = np.searchsorted(tau, z, side="left") + 1
    pair_i = np.tile([p[0] for p in pairs], S)
    pair_j = np.tile([p[1] for p in pairs], S)
    return PairedComparisonDataset(
        objects=labels, H=spec.H,
        pair_i=pair_i, pair_j=pair_j,
        outcome=outcomes.ravel(),
        weight=np.ones(S * N),
        subject_idx=np.repeat(np.arange(S), N),
        subjects=tuple(f"subject_{s + 1}" for s in range(S)))


def coverage(estimates, ses, truth, level: float) -> float:
    """Fraction of Wald intervals est +/- z*se covering the truth."""
    estimates = np.asarray(estimates, dtype=float)
    ses = np.asarray(ses, dtype=float)
    ok = np.isfinite(estimates) & np.isfinite(ses)
    if not np.any(ok):
        return math.nan
    z = ndtri(0.5 + level / 2.0)
    hit = np.abs(estimates[ok] - truth) <= z * ses[ok]
    return float(np.mean(hit))


@dataclass(frozen=True)
class StudyConfig:
    """One simulation study: a truth, a sample size, and estimators."""

    spec: DependenceSpec
    strategy: IdentificationStrategy
    truth: np.ndarray
    S: int
    R: int
    estimators: tuple = ("limited-information", "pairwise")
    seed: int = 0
    levels: tuple = (0.95, 0.975, 0.99)
    li_weight: str = "identity"
    qmc: QmcConfig = field(default_factory=QmcConfig)

    def __post_init__(self):
        object.__setattr__(self, "truth",
                           np.asarray(self.truth, dtype=float))
        if self.R < 1:
            raise ValueError("need at least one replicate")
        if self.S < 2:
            raise ValueError("need at least two subjects per replicate")
        unknown = set(self.estimators) - set(ESTIMATOR_NAMES)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")

    def layout(self):
        return apply_identification(self.spec, self.strategy)

    def to_json_dict(self) -> dict:
        return {
            "spec": self.spec.to_json_dict(),
            "strategy": self.strategy.to_json_dict(),
            "truth": self.truth.tolist(),
            "S": self.S, "R": self.R,
            "estimators": list(self.estimators),
            "seed": self.seed,
            "levels": list(self.levels),
            "li_weight": self.li_weight,
            "qmc": {"n_points": self.qmc.n_points,
                    "n_shifts": self.qmc.n_shifts,
                    "seed": self.qmc.seed},
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "StudyConfig":
        qmc = doc.get("qmc", {})
        return cls(
            spec=DependenceSpec.from_json_dict(doc["spec"]),
            strategy=IdentificationStrategy.from_json_dict(doc["strategy"]),
            truth=np.asarray(doc["truth"], dtype=float),
            S=int(doc["S"]), R=int(doc["R"]),
            estimators=tuple(doc.get("estimators",
                                     ("limited-information", "pairwise"))),
            seed=int(doc.get("seed", 0)),
            levels=tuple(doc.get("levels", (0.95, 0.975, 0.99))),
            li_weight=doc.get("li_weight", "identity"),
            qmc=QmcConfig(n_points=int(qmc.get("n_points", 509)),
                          n_shifts=int(qmc.get("n_shifts", 4)),
                          seed=int(qmc.get("seed", 0))))


@dataclass
class EstimatorColumn:
    """Per-replicate estimates and standard errors for one estimator."""

    method: str
    estimates: np.ndarray  # (R, k), NaN rows for failures
    ses: np.ndarray
    failures: int
    failure_reasons: dict

    @property
    def successes(self) -> int:
        return int(np.sum(np.all(np.isfinite(self.estimates), axis=1)))


@dataclass
class StudySummary:
    """Accumulated study results plus the raw per-replicate estimates."""

    config: StudyConfig
    natural_names: tuple
    truth_natural: np.ndarray
    columns: dict

    def table(self, method: str) -> list:
        col = self.columns[method]
        rows = []
        ok = np.all(np.isfinite(col.estimates), axis=1)
        for k, name in enumerate(self.natural_names):
            est = col.estimates[ok, k]
            se = col.ses[ok, k]
            n = est.size
            row = {
                "method": method,
                "parameter": name,
                "truth": float(self.truth_natural[k]),
                "mean": float(np.mean(est)) if n else math.nan,
                "median": float(np.median(est)) if n else math.nan,
                "se_mean": float(np.mean(se)) if n else math.nan,
                "sd": float(np.std(est, ddof=1)) if n > 1 else math.nan,
                "mc_error": (float(np.std(est, ddof=1) / math.sqrt(n))
                             if n > 1 else math.nan),
                "n_success": n,
                "n_failure": col.failures,
            }
            for level in self.config.levels:
                row[f"coverage_{level}"] = coverage(
                    col.estimates[:, k], col.ses[:, k],
                    self.truth_natural[k], level)
            rows.append(row)
        return rows

    def summary_rows(self) -> list:
        rows = []
        for method in self.config.estimators:
            rows.extend(self.table(method))
        return rows

    def raw_rows(self) -> list:
        rows = []
        for method in self.config.estimators:
            col = self.columns[method]
            for r in range(col.estimates.shape[0]):
                row = {"method": method, "replicate": r}
                for k, name in enumerate(self.natural_names):
                    row[f"est_{name}"] = col.estimates[r, k]
                    row[f"se_{name}"] = col.ses[r, k]
                rows.append(row)
        return rows

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "natural_names": list(self.natural_names),
            "truth_natural": self.truth_natural.tolist(),
            "columns": {
                method: {
                    "estimates": col.estimates.tolist(),
                    "ses": col.ses.tolist(),
                    "failures": col.failures,
                    "failure_reasons": col.failure_reasons,
                }
                for method, col in self.columns.items()
            },
        }


_FAILURE_FLAGS = ("not-converged", "stage-3-not-converged",
                  "hessian-not-negative-definite")


def _fit_outcome(fit: DependentFit):
    for flag in _FAILURE_FLAGS:
        if flag in fit.flags:
            return flag
    if not fit.converged:
        return "not-converged"
    return None


def run_study(config: StudyConfig) -> StudySummary:
    """Simulate R datasets and fit every requested estimator to each.

    Estimators run cheapest first and chain starting values: the
    pairwise fit starts from the limited-information solution when
    available, full likelihood from the pairwise solution.  Replicates
    where an estimator fails are excluded from that estimator's moments
    only.
    """
    layout = config.layout()
    truth_natural = layout.natural(config.truth)
    k = truth_natural.size
    order = [m for m in ESTIMATOR_NAMES if m in config.estimators]
    columns = {
        m: EstimatorColumn(method=m,
                           estimates=np.full((config.R, k), np.nan),
                           ses=np.full((config.R, k), np.nan),
                           failures=0, failure_reasons={})
        for m in order
    }
    for rep in range(config.R):
        data = simulate_dataset(config.spec, config.strategy, config.truth,
                                config.S, seed=(config.seed, rep))
        try:
            start = warm_start(data, config.spec, config.strategy).values
        except Exception:
            start = layout.default_start()
        chained = start
        for method in order:
            col = columns[method]
            try:
                if method == "limited-information":
                    fit = fit_limited_info(data, config.spec,
                                           config.strategy,
                                           weight=config.li_weight,
                                           start=chained)
                elif method == "pairwise":
                    fit = fit_pairwise(data, config.spec, config.strategy,
                                       start=chained)
                else:
                    fit = fit_full_ml(data, config.spec, config.strategy,
                                      qmc=config.qmc, start=chained)
            except Exception as err:  # noqa: BLE001 - per-replicate skip
                col.failures += 1
                reason = type(err).__name__
                col.failure_reasons[reason] = \
                    col.failure_reasons.get(reason, 0) + 1
                continue
            problem = _fit_outcome(fit)
            if problem is not None:
                col.failures += 1
                col.failure_reasons[problem] = \
                    col.failure_reasons.get(problem, 0) + 1
                continue
            col.estimates[rep] = fit.estimates
            col.ses[rep] = fit.se
            chained = fit.psi
    return StudySummary(config=config, natural_names=layout.natural_names,
                        truth_natural=truth_natural, columns=columns)
