"""Estimators for dependent paired-comparison models.

Three routes to the same free-parameter vector: full maximum likelihood
over multivariate-normal rectangle probabilities, a three-stage
limited-information minimum-distance fit, and maximum pairwise
likelihood over bivariate margins with a sandwich covariance.  All
three share the identification layouts from ``depthurst`` and report
estimates on the natural scale by the delta method.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr, ndtri

from .depthurst import (
    DependenceSpec,
    IdentificationStrategy,
    NonPositiveDefiniteError,
    ParameterLayout,
    StandardizedModel,
    apply_identification,
    standardize,
)
from .linkmath import (
    OptimizerConfig,
    QMC_DIMENSION_CAP,
    bvn_upper,
    maximize,
    rect_probs_lattice,
    tetrachoric,
)
from .pcdata import (
    DesignMatrix,
    PairedComparisonDataset,
    build_design_matrix,
)

__all__ = [
    "ParameterVector",
    "QmcConfig",
    "SubjectTable",
    "LimitedInfoSummary",
    "SandwichCovariance",
    "DependentFit",
    "subject_table",
    "dedup_patterns",
    "fit_full_ml",
    "fit_limited_info",
    "fit_pairwise",
    "sandwich_covariance",
    "warm_start",
]

_LOG_FLOOR = 1e-300
_WEIGHT_CHOICES = ("identity", "inverse-diagonal", "inverse-xi")


@dataclass(frozen=True)
class ParameterVector:
    """A free-parameter vector tied to the layout that interprets it."""

    values: np.ndarray
    layout: ParameterLayout

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} free parameters, "
                             f"got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("free parameters must be finite")

    @property
    def names(self):
        return self.layout.names

    def params(self):
        return self.layout.extract(self.values)


@dataclass(frozen=True)
class QmcConfig:
    """Lattice budget for the rectangle probabilities inside full ML.

    The point set is fixed given the configuration, so the likelihood
    is a smooth deterministic function of the parameters and finite
    differences of it are clean.
    """

    n_points: int = 509
    n_shifts: int = 4
    seed: int = 0

    def shift_array(self, dim: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.random((self.n_shifts, max(dim, 1)))


# ---------------------------------------------------------------------------
# data preparation


@dataclass(frozen=True)
class SubjectTable:
    """Per-subject response matrix over the observed pair universe.

    ``outcomes[s, r]`` is the category 1..H of subject s on pair r, or 0
    when that subject skipped the pair.
    """

    pairs: tuple
    design: DesignMatrix
    outcomes: np.ndarray
    H: int
    n_objects: int

    @property
    def n_subjects(self) -> int:
        return int(self.outcomes.shape[0])

    @property
    def n_pairs(self) -> int:
        return int(self.outcomes.shape[1])

    @property
    def complete(self) -> bool:
        return bool(np.all(self.outcomes > 0))


def subject_table(data: PairedComparisonDataset) -> SubjectTable:
    """Arrange a multiple-judgment dataset as subjects x pairs.

    Datasets without subject identifiers become a single pseudo-subject,
    which only the pairwise estimator accepts (with flagged standard
    errors).
    """
    if np.any(data.weight != 1.0):
        raise ValueError("dependent-model estimators require unit record "
                         "weights; fit ordinal categories directly instead "
                         "of splitting ties")
    pairs = sorted({(int(i), int(j))
                    for i, j in zip(data.pair_i, data.pair_j)})
    pair_pos = {p: r for r, p in enumerate(pairs)}
    n = len(data.objects)
    if data.subject_idx is None:
        subj = np.zeros(len(data.pair_i), dtype=int)
        n_subjects = 1
    elif data.subjects is not None:
        subj = np.asarray(data.subject_idx, dtype=int)
        n_subjects = len(data.subjects)
    else:
        subj = np.asarray(data.subject_idx, dtype=int)
        n_subjects = int(subj.max()) + 1 if subj.size else 0
    Y = np.zeros((n_subjects, len(pairs)), dtype=np.int64)
    for s, i, j, y in zip(subj, data.pair_i, data.pair_j, data.outcome):
        r = pair_pos[(int(i), int(j))]
        if Y[s, r] != 0:
            raise ValueError(f"subject {s} has more than one record for "
                             f"pair ({data.objects[i]}, {data.objects[j]})")
        Y[s, r] = int(y)
    design = build_design_matrix(n, pairs)
    return SubjectTable(pairs=tuple(pairs), design=design, outcomes=Y,
                        H=data.H, n_objects=n)


def dedup_patterns(outcomes: np.ndarray):
    """Unique response patterns with their multiplicities and inverse map."""
    uniq, inverse, counts = np.unique(outcomes, axis=0, return_inverse=True,
                                      return_counts=True)
    return uniq, counts.astype(float), inverse


# ---------------------------------------------------------------------------
# shared model evaluation


class _ModelContext:
    """Caches the fixed pieces of one estimation problem."""

    def __init__(self, table: SubjectTable, spec: DependenceSpec,
                 strategy: IdentificationStrategy):
        if spec.n_objects != table.n_objects:
            raise ValueError("specification and data disagree on the "
                             "number of objects")
        if spec.H != table.H:
            raise ValueError(f"specification expects H={spec.H} but the "
                             f"data have H={table.H}")
        self.table = table
        self.spec = spec
        self.strategy = strategy
        self.layout = apply_identification(spec, strategy)

    def standardized(self, psi) -> StandardizedModel | None:
        """None when the covariance implied by psi is not admissible.

        OverflowError covers the exponential transforms (log variances,
        log Cholesky diagonals) blowing up at wild trial points; those
        are infeasible, not errors.
        """
        try:
            params = self.layout.extract(psi)
            return standardize(self.spec, params, self.table.design)
        except (NonPositiveDefiniteError, FloatingPointError, OverflowError):
            return None


def _resolve_start(ctx: _ModelContext, start) -> np.ndarray:
    if start is None:
        return ctx.layout.default_start()
    if isinstance(start, ParameterVector):
        if start.layout.names != ctx.layout.names:
            raise ValueError("starting vector uses a different layout")
        return start.values.copy()
    start = np.asarray(start, dtype=float)
    if start.shape != (ctx.layout.size,):
        raise ValueError(f"starting vector must have length "
                         f"{ctx.layout.size}")
    return start.copy()


def _cutpoint_grid(cutpoints: np.ndarray) -> np.ndarray:
    """Category boundaries per pair, padded with infinities: (N, H+1)."""
    N = cutpoints.shape[0]
    neg = np.full((N, 1), -np.inf)
    pos = np.full((N, 1), np.inf)
    return np.concatenate([neg, cutpoints, pos], axis=1)


# ---------------------------------------------------------------------------
# full maximum likelihood


def _pattern_bounds(grid: np.ndarray, patterns: np.ndarray):
    """Rectangle bounds for each response pattern.

    ``grid`` is (N, H+1) with infinities at the ends; ``patterns`` is
    (P, N) with categories 1..H.  Category y occupies the interval
    (grid[r, y-1], grid[r, y]).
    """
    cols = np.arange(grid.shape[0])[None, :]
    lower = grid[cols, patterns - 1]
    upper = grid[cols, patterns]
    return lower, upper


def _ml_pattern_probs(std: StandardizedModel, patterns: np.ndarray,
                      qmc: QmcConfig, shifts: np.ndarray) -> np.ndarray:
    grid = _cutpoint_grid(std.cutpoints)
    lower, upper = _pattern_bounds(grid, patterns)
    probs, _ = rect_probs_lattice(std.correlation.values, lower, upper,
                                  qmc.n_points, shifts)
    return probs


def fit_full_ml(data: PairedComparisonDataset, spec: DependenceSpec,
                strategy: IdentificationStrategy, *,
                qmc: QmcConfig | None = None, start=None,
                config: OptimizerConfig | None = None) -> "DependentFit":
    """Maximize the exact multiple-judgment likelihood.

    Each subject contributes the probability of an N-dimensional
    rectangle of the latent standardized normal; identical response
    patterns are collapsed so cost scales with distinct patterns.
    """
    t0 = time.perf_counter()
    table = subject_table(data)
    ctx = _ModelContext(table, spec, strategy)
    if table.n_pairs > QMC_DIMENSION_CAP:
        raise ValueError(
            f"{table.n_pairs} comparisons exceed the rectangle-integration "
            f"cap of {QMC_DIMENSION_CAP}; use the pairwise estimator")
    if not table.complete:
        raise ValueError("full maximum likelihood requires every subject "
                         "to answer every pair; use the pairwise estimator "
                         "for incomplete designs")
    qmc = qmc or QmcConfig()
    shifts = qmc.shift_array(table.n_pairs - 1)
    patterns, counts, _ = dedup_patterns(table.outcomes)
    config = config or OptimizerConfig(gradient_tol=1e-5, max_iter=300)

    def loglik(psi):
        std = ctx.standardized(psi)
        if std is None:
            return -math.inf
        probs = _ml_pattern_probs(std, patterns, qmc, shifts)
        return float(counts @ np.log(np.clip(probs, _LOG_FLOOR, None)))

    psi0 = _resolve_start(ctx, start)
    result = maximize(loglik, psi0, config=config)
    flags = []
    if not result.converged:
        flags.append("not-converged")
    if not result.hessian_negdef:
        flags.append("hessian-not-negative-definite")
    psi_cov, cov_flags = _invert_information(result.hessian)
    flags.extend(cov_flags)
    return _assemble_fit(ctx, "full-ml", result.x, psi_cov,
                         loglik=result.value, result=result, flags=flags,
                         runtime=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# pairwise likelihood


def _phi2(a: float, b: float, rho: float) -> float:
    """P(Z1 <= a, Z2 <= b) with infinite bounds allowed."""
    if a == -math.inf or b == -math.inf:
        return 0.0
    if a == math.inf:
        return 1.0 if b == math.inf else float(ndtr(b))
    if b == math.inf:
        return float(ndtr(a))
    return bvn_upper(-a, -b, rho)


def _bivariate_cell_probs(grid_r: np.ndarray, grid_t: np.ndarray,
                          rho: float) -> np.ndarray:
    """Joint category probabilities (H, H) for one comparison pair."""
    m = grid_r.size
    F = np.empty((m, m))
    for u in range(m):
        for v in range(m):
            F[u, v] = _phi2(grid_r[u], grid_t[v], rho)
    cells = F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
    return np.clip(cells, 0.0, 1.0)


@dataclass(frozen=True)
class _PairBlock:
    """Joint outcome counts for one pair of comparisons."""

    r: int
    t: int
    counts: np.ndarray  # (H, H), row = category on r, col = category on t


def _pairwise_blocks(table: SubjectTable) -> list:
    Y = table.outcomes
    H = table.H
    blocks = []
    for r in range(table.n_pairs):
        for t in range(r + 1, table.n_pairs):
            both = (Y[:, r] > 0) & (Y[:, t] > 0)
            if not np.any(both):
                continue
            counts = np.zeros((H, H))
            np.add.at(counts, (Y[both, r] - 1, Y[both, t] - 1), 1.0)
            blocks.append(_PairBlock(r=r, t=t, counts=counts))
    return blocks


def _pairwise_cell_logs(std: StandardizedModel, blocks) -> np.ndarray:
    """Stacked log cell probabilities, one (H, H) block per pair."""
    grid = _cutpoint_grid(std.cutpoints)
    corr = std.correlation.values
    H = std.cutpoints.shape[1] + 1
    out = np.empty((len(blocks), H, H))
    for q, blk in enumerate(blocks):
        cells = _bivariate_cell_probs(grid[blk.r], grid[blk.t],
                                      corr[blk.r, blk.t])
        out[q] = np.log(np.clip(cells, _LOG_FLOOR, None))
    return out


def fit_pairwise(data: PairedComparisonDataset, spec: DependenceSpec,
                 strategy: IdentificationStrategy, *, start=None,
                 config: OptimizerConfig | None = None) -> "DependentFit":
    """Maximize the product of bivariate margins over comparison pairs.

    Subjects may skip pairs; each contributes the pairs of comparisons
    it answered.  The covariance is the sandwich assembled from
    per-subject score outer products and the numeric Hessian.
    """
    t0 = time.perf_counter()
    table = subject_table(data)
    ctx = _ModelContext(table, spec, strategy)
    per_subject = (table.outcomes > 0).sum(axis=1)
    if per_subject.max(initial=0) < 2:
        raise ValueError("pairwise likelihood needs at least one subject "
                         "with two or more answered comparisons")
    blocks = _pairwise_blocks(table)
    config = config or OptimizerConfig(gradient_tol=1e-5, max_iter=300)
    flags = []
    single_sequence = data.subject_idx is None
    if single_sequence:
        flags.append("bootstrap-se-required")

    def cell_logs(psi):
        std = ctx.standardized(psi)
        if std is None:
            return None
        return _pairwise_cell_logs(std, blocks)

    def objective(psi):
        logs = cell_logs(psi)
        if logs is None:
            return -math.inf
        return float(sum((blk.counts * logs[q]).sum()
                         for q, blk in enumerate(blocks)))

    psi0 = _resolve_start(ctx, start)
    result = maximize(objective, psi0, config=config)
    if not result.converged:
        flags.append("not-converged")
    if not result.hessian_negdef:
        flags.append("hessian-not-negative-definite")

    scores = _pairwise_subject_scores(ctx, result.x, blocks, cell_logs,
                                      config)
    if single_sequence:
        psi_cov, cov_flags = _invert_information(result.hessian)
        flags.extend(cov_flags)
        sandwich = None
    else:
        sandwich = sandwich_covariance(scores, result.hessian)
        flags.extend(sandwich.flags)
        psi_cov = sandwich.covariance
    return _assemble_fit(ctx, "pairwise", result.x, psi_cov,
                         loglik=result.value, result=result, flags=flags,
                         sandwich=sandwich,
                         runtime=time.perf_counter() - t0)


def _pairwise_subject_scores(ctx, psi_hat, blocks, cell_logs,
                             config) -> np.ndarray:
    """Per-subject score vectors of the pairwise log-likelihood.

    The gradient of every cell log-probability is shared across
    subjects, so one finite-difference sweep over the stacked cell table
    yields all scores by indexing.
    """
    table = ctx.table
    k = psi_hat.size
    base = cell_logs(psi_hat)
    grads = np.zeros((k,) + base.shape)
    for i in range(k):
        h = config.fd_step * max(1.0, abs(psi_hat[i]))
        up = psi_hat.copy()
        up[i] += h
        dn = psi_hat.copy()
        dn[i] -= h
        logs_up = cell_logs(up)
        logs_dn = cell_logs(dn)
        if logs_up is None or logs_dn is None:
            raise RuntimeError("cell probabilities undefined next to the "
                               "optimum; the fit is on a boundary")
        grads[i] = (logs_up - logs_dn) / (2.0 * h)
    Y = table.outcomes
    scores = np.zeros((table.n_subjects, k))
    for q, blk in enumerate(blocks):
        both = (Y[:, blk.r] > 0) & (Y[:, blk.t] > 0)
        rows = np.nonzero(both)[0]
        cat_r = Y[rows, blk.r] - 1
        cat_t = Y[rows, blk.t] - 1
        scores[rows] += grads[:, q, cat_r, cat_t].T
    return scores


@dataclass(frozen=True)
class SandwichCovariance:
    """Robust covariance H^-1 J H^-1 / S from score cross-products.

    ``h_bar`` is the negative mean Hessian, ``j_bar`` the mean outer
    product of per-subject scores; ``naive`` is the plain inverse of the
    negative total Hessian for comparison.
    """

    h_bar: np.ndarray
    j_bar: np.ndarray
    covariance: np.ndarray
    naive: np.ndarray
    n_subjects: int
    flags: tuple = ()


def sandwich_covariance(scores: np.ndarray,
                        hessian_total: np.ndarray) -> SandwichCovariance:
    """Assemble the sandwich from scores at the optimum and the Hessian."""
    scores = np.asarray(scores, dtype=float)
    S = scores.shape[0]
    h_bar = -np.asarray(hessian_total, dtype=float) / S
    j_bar = scores.T @ scores / S
    flags = []
    h_inv, inv_flags = _stable_inverse(h_bar)
    flags.extend(inv_flags)
    cov = h_inv @ j_bar @ h_inv / S
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] < 0.0:
        flags.append("sandwich-floored")
        cov = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
    naive_inv, naive_flags = _stable_inverse(h_bar * S)
    flags.extend(f"naive-{f}" for f in naive_flags)
    return SandwichCovariance(h_bar=h_bar, j_bar=j_bar, covariance=cov,
                              naive=naive_inv, n_subjects=S,
                              flags=tuple(flags))


def _stable_inverse(mat: np.ndarray):
    try:
        inv = np.linalg.inv(mat)
        if np.all(np.isfinite(inv)):
            return inv, []
    except np.linalg.LinAlgError:
        pass
    return np.linalg.pinv(mat), ["singular-hessian-pseudo-inverse"]


def _invert_information(hessian):
    """Model-based covariance from the negative Hessian."""
    if hessian is None or not np.all(np.isfinite(hessian)):
        k = 0 if hessian is None else hessian.shape[0]
        return np.full((k, k), np.nan), ["hessian-not-available"]
    inv, flags = _stable_inverse(-np.asarray(hessian))
    return inv, flags


# ---------------------------------------------------------------------------
# limited information


@dataclass(frozen=True)
class LimitedInfoSummary:
    """Stage-1/stage-2 statistics feeding the minimum-distance fit.

    ``kappa_hat`` stacks the per-pair cutpoints (row-major over pairs,
    then category boundaries) followed by the N(N-1)/2 latent
    correlations in lexicographic pair order.
    """

    kappa_hat: np.ndarray
    n_cutpoints: int
    weight: str
    xi_hat: np.ndarray | None
    n_subjects: int

    def threshold_part(self) -> np.ndarray:
        return self.kappa_hat[: self.n_cutpoints]

    def correlation_part(self) -> np.ndarray:
        return self.kappa_hat[self.n_cutpoints:]


def _stage1_cutpoints(table: SubjectTable, labels) -> np.ndarray:
    """Link quantiles of the cumulative category proportions, (N, H-1)."""
    Y = table.outcomes
    S = table.n_subjects
    cuts = np.empty((table.n_pairs, table.H - 1))
    for r in range(table.n_pairs):
        for h in range(1, table.H):
            p = float(np.mean(Y[:, r] <= h))
            if p <= 0.0 or p >= 1.0:
                i, j = table.pairs[r]
                raise ValueError(
                    f"every subject falls on one side of category {h} for "
                    f"pair ({labels[i]}, {labels[j]}); the threshold for "
                    "this pair is not estimable from marginal proportions")
            cuts[r, h - 1] = ndtri(p)
    return cuts


def _stage2_correlation(table: SubjectTable, cuts: np.ndarray, r: int,
                        t: int) -> float:
    Y = table.outcomes
    H = table.H
    if H == 2:
        p11 = float(np.mean((Y[:, r] == 1) & (Y[:, t] == 1)))
        return tetrachoric(p11, cuts[r, 0], cuts[t, 0])
    counts = np.zeros((H, H))
    np.add.at(counts, (Y[:, r] - 1, Y[:, t] - 1), 1.0)
    grid_r = np.concatenate([[-np.inf], cuts[r], [np.inf]])
    grid_t = np.concatenate([[-np.inf], cuts[t], [np.inf]])

    def neg_ll(rho):
        cells = _bivariate_cell_probs(grid_r, grid_t, rho)
        return -float((counts * np.log(np.clip(cells, _LOG_FLOOR,
                                               None))).sum())

    res = minimize_scalar(neg_ll, bounds=(-0.999, 0.999), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x)


def limited_info_summary(data: PairedComparisonDataset,
                         weight: str = "identity", *,
                         with_xi: bool = True) -> LimitedInfoSummary:
    """Stage-1 cutpoints and stage-2 correlations with their covariance."""
    table = subject_table(data)
    if not table.complete:
        raise ValueError("limited-information estimation requires every "
                         "subject to answer every pair")
    if weight not in _WEIGHT_CHOICES:
        raise ValueError(f"weight must be one of {_WEIGHT_CHOICES}")
    cuts = _stage1_cutpoints(table, data.objects)
    N = table.n_pairs
    rhos = np.empty(N * (N - 1) // 2)
    pos = 0
    for r in range(N):
        for t in range(r + 1, N):
            rhos[pos] = _stage2_correlation(table, cuts, r, t)
            pos += 1
    kappa = np.concatenate([cuts.ravel(), rhos])
    xi = _influence_covariance(table, cuts, rhos) if with_xi else None
    return LimitedInfoSummary(kappa_hat=kappa, n_cutpoints=cuts.size,
                              weight=weight, xi_hat=xi,
                              n_subjects=table.n_subjects)


def _norm_pdf(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _bvn_pdf(a, b, rho):
    om = 1.0 - rho * rho
    z = (a * a - 2.0 * rho * a * b + b * b) / om
    return math.exp(-0.5 * z) / (2.0 * math.pi * math.sqrt(om))


def _influence_covariance(table: SubjectTable, cuts: np.ndarray,
                          rhos: np.ndarray) -> np.ndarray:
    """Per-subject covariance of the stage-1/stage-2 statistics.

    Each statistic is an M-estimator given the earlier stages, so its
    influence function chains the indicator residual with the implicit
    derivative of its estimating equation.  Binary data use the closed
    forms; wider scales difference the bivariate cell probabilities
    numerically.
    """
    if table.H == 2:
        return _influence_covariance_binary(table, cuts, rhos)
    return _influence_covariance_ordinal(table, cuts, rhos)


def _influence_covariance_binary(table: SubjectTable, cuts: np.ndarray,
                                 rhos: np.ndarray) -> np.ndarray:
    Y = table.outcomes
    S = table.n_subjects
    N = table.n_pairs
    tau = cuts[:, 0]
    low = (Y == 1).astype(float)  # indicator of the latent lower region
    p_low = low.mean(axis=0)
    if_tau = (low - p_low) / _norm_pdf(tau)
    cols = [if_tau]
    pos = 0
    for r in range(N):
        for t in range(r + 1, N):
            rho = rhos[pos]
            pos += 1
            joint = low[:, r] * low[:, t]
            p11 = joint.mean()
            root = math.sqrt(1.0 - rho * rho)
            # partial derivatives of the joint orthant probability
            d_tau_r = _norm_pdf(tau[r]) * ndtr((tau[t] - rho * tau[r])
                                               / root)
            d_tau_t = _norm_pdf(tau[t]) * ndtr((tau[r] - rho * tau[t])
                                               / root)
            d_rho = _bvn_pdf(tau[r], tau[t], rho)
            if_rho = (joint - p11
                      - d_tau_r * if_tau[:, r]
                      - d_tau_t * if_tau[:, t]) / d_rho
            cols.append(if_rho[:, None])
    infl = np.concatenate(cols, axis=1)
    return infl.T @ infl / S


def _influence_covariance_ordinal(table: SubjectTable, cuts: np.ndarray,
                                  rhos: np.ndarray) -> np.ndarray:
    Y = table.outcomes
    S = table.n_subjects
    N = table.n_pairs
    Hm1 = table.H - 1
    # cutpoint influences: indicator of falling at or below each boundary
    if_cuts = np.empty((S, N, Hm1))
    for r in range(N):
        for h in range(1, table.H):
            below = (Y[:, r] <= h).astype(float)
            if_cuts[:, r, h - 1] = ((below - below.mean())
                                    / _norm_pdf(cuts[r, h - 1]))
    cols = [if_cuts.reshape(S, N * Hm1)]
    step = 1e-5
    pos = 0
    for r in range(N):
        for t in range(r + 1, N):
            rho = rhos[pos]
            pos += 1
            cat_r = Y[:, r] - 1
            cat_t = Y[:, t] - 1

            def cell_log(rho_v, cuts_r, cuts_t):
                grid_r = np.concatenate([[-np.inf], cuts_r, [np.inf]])
                grid_t = np.concatenate([[-np.inf], cuts_t, [np.inf]])
                cells = _bivariate_cell_probs(grid_r, grid_t, rho_v)
                return np.log(np.clip(cells, _LOG_FLOOR, None))

            def subject_scores(rho_v, cuts_r, cuts_t):
                return cell_log(rho_v, cuts_r, cuts_t)[cat_r, cat_t]

            d_rho = (subject_scores(rho + step, cuts[r], cuts[t])
                     - subject_scores(rho - step, cuts[r], cuts[t])) \
                / (2.0 * step)
            a_rho = float(np.mean(
                (subject_scores(rho + step, cuts[r], cuts[t])
                 - 2.0 * subject_scores(rho, cuts[r], cuts[t])
                 + subject_scores(rho - step, cuts[r], cuts[t]))
                / step ** 2))
            correction = np.zeros(S)
            for which, rr in ((0, r), (1, t)):
                for h in range(Hm1):
                    bumped = cuts[rr].copy()
                    bumped[h] += step
                    dipped = cuts[rr].copy()
                    dipped[h] -= step
                    if which == 0:
                        d_mix = (subject_scores(rho + step, bumped, cuts[t])
                                 - subject_scores(rho - step, bumped,
                                                  cuts[t])
                                 - subject_scores(rho + step, dipped,
                                                  cuts[t])
                                 + subject_scores(rho - step, dipped,
                                                  cuts[t])) \
                            / (4.0 * step * step)
                    else:
                        d_mix = (subject_scores(rho + step, cuts[r], bumped)
                                 - subject_scores(rho - step, cuts[r],
                                                  bumped)
                                 - subject_scores(rho + step, cuts[r],
                                                  dipped)
                                 + subject_scores(rho - step, cuts[r],
                                                  dipped)) \
                            / (4.0 * step * step)
                    correction += float(np.mean(d_mix)) \
                        * if_cuts[:, rr, h]
            if_rho = -(d_rho - np.mean(d_rho) + correction) / a_rho
            cols.append(if_rho[:, None])
    infl = np.concatenate(cols, axis=1)
    return infl.T @ infl / S


def _model_kappa(std: StandardizedModel) -> np.ndarray:
    corr = std.correlation.values
    N = corr.shape[0]
    tri = corr[np.triu_indices(N, k=1)]
    return np.concatenate([std.cutpoints.ravel(), tri])


def fit_limited_info(data: PairedComparisonDataset, spec: DependenceSpec,
                     strategy: IdentificationStrategy,
                     weight: str = "identity", *, start=None,
                     config: OptimizerConfig | None = None,
                     summary: LimitedInfoSummary | None = None
                     ) -> "DependentFit":
    """Three-stage minimum-distance fit to low-order marginal statistics.

    Stage 1 inverts univariate category proportions into cutpoints,
    stage 2 turns bivariate tables into latent correlations, and stage 3
    minimizes the weighted squared distance between those statistics and
    their model-implied values.
    """
    t0 = time.perf_counter()
    table = subject_table(data)
    ctx = _ModelContext(table, spec, strategy)
    if summary is None:
        summary = limited_info_summary(data, weight)
    elif summary.weight != weight:
        raise ValueError("summary was built for a different weight choice")
    W, w_flags = _weight_matrix(summary)
    kappa_hat = summary.kappa_hat
    config = config or OptimizerConfig(gradient_tol=1e-7, max_iter=500)

    def neg_g(psi):
        std = ctx.standardized(psi)
        if std is None:
            return -math.inf
        resid = kappa_hat - _model_kappa(std)
        return -float(resid @ W @ resid)

    psi0 = _resolve_start(ctx, start)
    result = maximize(neg_g, psi0, config=config)
    flags = list(w_flags)
    if not result.converged:
        flags.append("stage-3-not-converged")

    delta = _kappa_jacobian(ctx, result.x)
    psi_cov, cov_flags = _minimum_distance_covariance(
        delta, W, summary.xi_hat, summary.n_subjects)
    flags.extend(cov_flags)
    fit = _assemble_fit(ctx, "limited-information", result.x, psi_cov,
                        result=result, flags=flags,
                        runtime=time.perf_counter() - t0)
    fit.g_min = -result.value
    fit.n_stats = kappa_hat.size
    fit.limited_info = summary
    return fit


def _weight_matrix(summary: LimitedInfoSummary):
    k = summary.kappa_hat.size
    if summary.weight == "identity":
        return np.eye(k), []
    if summary.xi_hat is None:
        raise ValueError("weighting by the statistic covariance requires "
                         "the influence estimate")
    if summary.weight == "inverse-diagonal":
        return np.diag(1.0 / np.diag(summary.xi_hat)), []
    inv, flags = _stable_inverse(summary.xi_hat)
    return 0.5 * (inv + inv.T), ["experimental-full-weight"] + flags


def _kappa_jacobian(ctx: _ModelContext, psi: np.ndarray,
                    rel_step: float = 1e-6) -> np.ndarray:
    """Finite-difference Jacobian of the model statistics in psi."""
    base = _model_kappa(ctx.standardized(psi))
    jac = np.empty((base.size, psi.size))
    for i in range(psi.size):
        h = rel_step * max(1.0, abs(psi[i]))
        up = psi.copy()
        up[i] += h
        dn = psi.copy()
        dn[i] -= h
        std_up = ctx.standardized(up)
        std_dn = ctx.standardized(dn)
        if std_up is None or std_dn is None:
            raise RuntimeError("model statistics undefined next to the "
                               "minimum-distance solution")
        jac[:, i] = (_model_kappa(std_up) - _model_kappa(std_dn)) / (2.0 * h)
    return jac


def _minimum_distance_covariance(delta, W, xi, S):
    bread = delta.T @ W @ delta
    bread_inv, flags = _stable_inverse(bread)
    if xi is None:
        return np.full_like(bread, np.nan), flags + ["xi-not-available"]
    meat = delta.T @ W @ xi @ W @ delta
    cov = bread_inv @ meat @ bread_inv / S
    return 0.5 * (cov + cov.T), flags


# ---------------------------------------------------------------------------
# warm starts and result assembly


def warm_start(data: PairedComparisonDataset, spec: DependenceSpec,
               strategy: IdentificationStrategy) -> ParameterVector:
    """A starting vector anchored at independent-model worth estimates.

    Worths come from an independence fit on the pooled counts, rescaled
    by the typical latent standard deviation of the dependence
    structure at its default parameters; thresholds likewise.
    """
    from .indep import LinearPredictorSpec, WorthTerm, fit_cumulative, \
        fit_linear

    table = subject_table(data)
    ctx = _ModelContext(table, spec, strategy)
    layout = ctx.layout
    pooled = data if data.subject_idx is None else \
        PairedComparisonDataset(objects=data.objects, H=data.H,
                                pair_i=data.pair_i, pair_j=data.pair_j,
                                outcome=data.outcome, weight=data.weight)
    term = WorthTerm(constraint="reference",
                     reference=data.objects[
                         strategy.reference_index(spec.n_objects)])
    if data.H == 2:
        ispec = LinearPredictorSpec(terms=(term,), H=2)
        ifit = fit_linear(pooled, ispec)
    else:
        ispec = LinearPredictorSpec(terms=(term,), H=data.H)
        ifit = fit_cumulative(pooled, ispec)
    worths = np.array([ifit.estimate(lbl) for lbl in data.objects])
    base = layout.extract(layout.default_start())
    sd = np.sqrt(np.diag(
        _covariance_or_identity(ctx, base)))
    scale = float(np.mean(sd))
    worths = worths * scale
    thresholds = None
    if data.H >= 3:
        thresholds = np.asarray(ifit.thresholds) * scale
    if strategy.kind == "reduced-differences":
        ref = spec.n_objects - 1
        worths = worths - worths[ref]
    psi = layout.default_start(worths=worths, thresholds=thresholds)
    return ParameterVector(values=psi, layout=layout)


def _covariance_or_identity(ctx, params):
    from .depthurst import build_covariance

    try:
        return build_covariance(ctx.spec, params, ctx.table.design)
    except NonPositiveDefiniteError:  # pragma: no cover - defensive
        return np.eye(ctx.table.n_pairs)


@dataclass
class DependentFit:
    """A fitted dependent model on the natural parameter scale."""

    method: str
    spec: DependenceSpec
    strategy: IdentificationStrategy
    layout: ParameterLayout
    psi: np.ndarray
    psi_cov: np.ndarray
    natural_names: tuple
    estimates: np.ndarray
    cov: np.ndarray
    n_subjects: int
    n_pairs: int
    H: int
    converged: bool
    iterations: int
    gradient_norm: float
    flags: tuple
    runtime_seconds: float
    loglik: float | None = None
    g_min: float | None = None
    n_stats: int | None = None
    limited_info: LimitedInfoSummary | None = None
    sandwich: SandwichCovariance | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def estimate(self, name: str) -> float:
        return float(self.estimates[self.natural_names.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.natural_names.index(name)])

    def params(self):
        return self.layout.extract(self.psi)

    def standardized(self) -> StandardizedModel:
        design = build_design_matrix(
            self.spec.n_objects,
            [(i, j) for i in range(self.spec.n_objects)
             for j in range(i + 1, self.spec.n_objects)])
        return standardize(self.spec, self.params(), design)

    def to_json_dict(self) -> dict:
        doc = {
            "method": self.method,
            "spec": self.spec.to_json_dict(),
            "strategy": self.strategy.to_json_dict(),
            "psi": self.psi.tolist(),
            "psi_cov": self.psi_cov.tolist(),
            "natural_names": list(self.natural_names),
            "estimates": self.estimates.tolist(),
            "cov": self.cov.tolist(),
            "n_subjects": self.n_subjects,
            "n_pairs": self.n_pairs,
            "H": self.H,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "flags": list(self.flags),
            "runtime_seconds": self.runtime_seconds,
            "loglik": self.loglik,
            "g_min": self.g_min,
            "n_stats": self.n_stats,
        }
        if self.sandwich is not None:
            doc["sandwich"] = {
                "h_bar": self.sandwich.h_bar.tolist(),
                "j_bar": self.sandwich.j_bar.tolist(),
                "covariance": self.sandwich.covariance.tolist(),
                "naive": self.sandwich.naive.tolist(),
                "n_subjects": self.sandwich.n_subjects,
                "flags": list(self.sandwich.flags),
            }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DependentFit":
        spec = DependenceSpec.from_json_dict(doc["spec"])
        strategy = IdentificationStrategy.from_json_dict(doc["strategy"])
        layout = apply_identification(spec, strategy)
        sandwich = None
        if "sandwich" in doc:
            sd = doc["sandwich"]
            sandwich = SandwichCovariance(
                h_bar=np.array(sd["h_bar"]), j_bar=np.array(sd["j_bar"]),
                covariance=np.array(sd["covariance"]),
                naive=np.array(sd["naive"]),
                n_subjects=int(sd["n_subjects"]),
                flags=tuple(sd["flags"]))
        return cls(
            method=doc["method"], spec=spec, strategy=strategy,
            layout=layout, psi=np.array(doc["psi"]),
            psi_cov=np.array(doc["psi_cov"]),
            natural_names=tuple(doc["natural_names"]),
            estimates=np.array(doc["estimates"]),
            cov=np.array(doc["cov"]), n_subjects=int(doc["n_subjects"]),
            n_pairs=int(doc["n_pairs"]), H=int(doc["H"]),
            converged=bool(doc["converged"]),
            iterations=int(doc["iterations"]),
            gradient_norm=float(doc["gradient_norm"]),
            flags=tuple(doc["flags"]),
            runtime_seconds=float(doc["runtime_seconds"]),
            loglik=doc.get("loglik"), g_min=doc.get("g_min"),
            n_stats=doc.get("n_stats"), sandwich=sandwich)


def _natural_jacobian(layout: ParameterLayout, psi: np.ndarray,
                      rel_step: float = 1e-6) -> np.ndarray:
    base = layout.natural(psi)
    jac = np.empty((base.size, psi.size))
    for i in range(psi.size):
        h = rel_step * max(1.0, abs(psi[i]))
        up = psi.copy()
        up[i] += h
        dn = psi.copy()
        dn[i] -= h
        jac[:, i] = (layout.natural(up) - layout.natural(dn)) / (2.0 * h)
    return jac


def _assemble_fit(ctx: _ModelContext, method: str, psi: np.ndarray,
                  psi_cov: np.ndarray, *, result, flags, runtime,
                  loglik=None, sandwich=None) -> DependentFit:
    layout = ctx.layout
    jac = _natural_jacobian(layout, psi)
    cov = jac @ psi_cov @ jac.T
    cov = 0.5 * (cov + cov.T)
    return DependentFit(
        method=method, spec=ctx.spec, strategy=ctx.strategy, layout=layout,
        psi=np.asarray(psi, dtype=float), psi_cov=psi_cov,
        natural_names=layout.natural_names, estimates=layout.natural(psi),
        cov=cov, n_subjects=ctx.table.n_subjects, n_pairs=ctx.table.n_pairs,
        H=ctx.table.H, converged=result.converged,
        iterations=result.iterations, gradient_norm=result.grad_norm,
        flags=tuple(flags), runtime_seconds=runtime, loglik=loglik,
        sandwich=sandwich)
