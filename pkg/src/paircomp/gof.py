"""Goodness-of-fit from low-order marginal moments.

Two routes: the weighted distance between estimation-stage summary
statistics and their model-implied values, and a quadratic form in the
univariate and bivariate moment residuals whose weight matrix projects
out the directions absorbed by parameter estimation.  The latter needs
joint pattern probabilities only up to the enumeration cap, so it
remains practical exactly where the estimators themselves do.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr
from scipy.stats import chi2

from .estdep import (
    DependentFit,
    LimitedInfoSummary,
    QmcConfig,
    subject_table,
    _ml_pattern_probs,
    _model_kappa,
    _ModelContext,
    _weight_matrix,
)
from .linkmath import bvn_upper
from .pcdata import PairedComparisonDataset

__all__ = [
    "GofReport",
    "MarginalWorkspace",
    "g_statistic",
    "m2_statistic",
    "marginal_proportions",
    "marginal_workspace",
]

PATTERN_CAP = 2 ** 10
OBJECT_CAP = 6
EIGEN_FLOOR = 1e-12

_NO_PVALUE_NOTE = ("null distribution is a weighted sum of chi-square "
                   "variables; no p-value is reported without the "
                   "inverse-covariance weight")


@dataclass(frozen=True)
class GofReport:
    """One fit statistic with its reference distribution, if any."""

    statistic: float
    df: int | None
    p_value: float | None
    note: str

    def to_json_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df,
                "p_value": self.p_value, "note": self.note}


@dataclass(frozen=True)
class MarginalWorkspace:
    """Matrices behind the moment-residual statistic.

    ``selection`` maps joint pattern probabilities to the stacked
    univariate and bivariate moments; ``gamma`` is the multinomial
    covariance of the pattern indicators; ``f_r`` their image under the
    selection; ``jacobian`` the derivative of the model moments in the
    free parameters.
    """

    sample_moments: np.ndarray
    model_moments: np.ndarray
    selection: np.ndarray
    jacobian: np.ndarray
    gamma: np.ndarray
    f_r: np.ndarray
    pattern_probs: np.ndarray
    n_subjects: int


def _binary_table(data: PairedComparisonDataset, purpose: str):
    table = subject_table(data)
    if table.H != 2:
        raise ValueError(f"{purpose} works on binary comparisons (H=2); "
                         "collapse or binarize wider scales first")
    if not table.complete:
        raise ValueError(f"{purpose} requires every subject to answer "
                         "every pair")
    return table


def marginal_proportions(data: PairedComparisonDataset, r: int) -> np.ndarray:
    """Sample moments of the high-category indicators up to order r.

    Order 1 gives the per-pair proportions preferring the first object;
    order 2 appends the joint proportions for every pair of comparisons
    in lexicographic order.
    """
    if r not in (1, 2):
        raise ValueError("only first- and second-order marginal "
                         "proportions are supported")
    table = _binary_table(data, "marginal-moment tallying")
    wins = (table.outcomes == 2).astype(float)
    uni = wins.mean(axis=0)
    if r == 1:
        return uni
    N = table.n_pairs
    joint = [float(np.mean(wins[:, a] * wins[:, b]))
             for a in range(N) for b in range(a + 1, N)]
    return np.concatenate([uni, np.array(joint)])


def _enumerate_patterns(N: int) -> np.ndarray:
    return np.array(list(itertools.product((1, 2), repeat=N)), dtype=np.int64)


def _selection_matrix(N: int, patterns: np.ndarray) -> np.ndarray:
    high = patterns == 2
    rows = [high[:, a].astype(float) for a in range(N)]
    rows.extend((high[:, a] & high[:, b]).astype(float)
                for a in range(N) for b in range(a + 1, N))
    return np.vstack(rows)


def _closed_form_moments(std) -> np.ndarray:
    """Exact model moments: univariate then bivariate win probabilities."""
    kappa = std.cutpoints[:, 0]
    corr = std.correlation.values
    N = kappa.size
    uni = 1.0 - ndtr(kappa)
    joint = [bvn_upper(kappa[a], kappa[b], corr[a, b])
             for a in range(N) for b in range(a + 1, N)]
    return np.concatenate([uni, np.array(joint)])


def _moment_jacobian(ctx: _ModelContext, psi: np.ndarray,
                     rel_step: float) -> np.ndarray:
    base = _closed_form_moments(ctx.standardized(psi))
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
            raise RuntimeError("model moments undefined next to the fitted "
                               "parameters")
        jac[:, i] = (_closed_form_moments(std_up)
                     - _closed_form_moments(std_dn)) / (2.0 * h)
    return jac


def marginal_workspace(data: PairedComparisonDataset, fit: DependentFit, *,
                       qmc: QmcConfig | None = None,
                       rel_step: float = 1e-6) -> MarginalWorkspace:
    """Assemble moments, selection, covariance and Jacobian at the fit."""
    table = _binary_table(data, "the moment-residual statistic")
    if table.n_objects > OBJECT_CAP:
        raise ValueError(f"the moment-residual statistic needs four-way "
                         f"model probabilities and is capped at "
                         f"{OBJECT_CAP} objects")
    n_patterns = 2 ** table.n_pairs
    if n_patterns > PATTERN_CAP:
        raise ValueError(f"{n_patterns} response patterns exceed the "
                         f"enumeration cap of {PATTERN_CAP}")
    ctx = _ModelContext(table, fit.spec, fit.strategy)
    if ctx.layout.names != fit.layout.names:
        raise ValueError("fit and data use different parameter layouts")
    std = ctx.standardized(fit.psi)
    if std is None:
        raise ValueError("fitted parameters give no admissible covariance")
    qmc = qmc or QmcConfig()
    patterns = _enumerate_patterns(table.n_pairs)
    shifts = qmc.shift_array(table.n_pairs - 1)
    pattern_probs = _ml_pattern_probs(std, patterns, qmc, shifts)
    selection = _selection_matrix(table.n_pairs, patterns)
    gamma = np.diag(pattern_probs) - np.outer(pattern_probs, pattern_probs)
    f_r = selection @ gamma @ selection.T
    return MarginalWorkspace(
        sample_moments=marginal_proportions(data, 2),
        model_moments=_closed_form_moments(std),
        selection=selection,
        jacobian=_moment_jacobian(ctx, fit.psi, rel_step),
        gamma=gamma,
        f_r=f_r,
        pattern_probs=pattern_probs,
        n_subjects=table.n_subjects)


def _floored_inverse(mat: np.ndarray):
    """Inverse through the eigendecomposition, dropping null directions."""
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    floor = EIGEN_FLOOR * max(vals[-1], EIGEN_FLOOR)
    keep = vals > floor
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return inv, int(np.sum(~keep))


def m2_statistic(data: PairedComparisonDataset, fit: DependentFit, *,
                 qmc: QmcConfig | None = None) -> GofReport:
    """Quadratic form in the moment residuals at a consistent fit.

    The weight projects the inverse moment covariance onto the space
    orthogonal to the model's tangent directions, so the statistic has
    a chi-square reference with (moment count - parameter count)
    degrees of freedom whatever consistent estimator produced the fit.
    """
    ws = marginal_workspace(data, fit, qmc=qmc)
    f_inv, dropped = _floored_inverse(ws.f_r)
    delta = ws.jacobian
    bread = delta.T @ f_inv @ delta
    try:
        bread_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError as err:
        raise ValueError("the moment Jacobian is rank deficient; the "
                         "parameterization is not identified from these "
                         "moments, review the constraints") from err
    c_mat = f_inv - f_inv @ delta @ bread_inv @ delta.T @ f_inv
    resid = ws.sample_moments - ws.model_moments
    statistic = float(ws.n_subjects * resid @ c_mat @ resid)
    statistic = max(statistic, 0.0)
    df = ws.sample_moments.size - fit.layout.size
    notes = []
    if dropped:
        notes.append(f"{dropped} degenerate moment directions dropped")
    if df <= 0:
        notes.append("saturated parameterization leaves no residual "
                     "degrees of freedom")
        return GofReport(statistic=statistic, df=df, p_value=None,
                         note="; ".join(notes))
    notes.append(f"chi-square reference with {df} degrees of freedom")
    return GofReport(statistic=statistic, df=df,
                     p_value=float(chi2.sf(statistic, df)),
                     note="; ".join(notes))


def g_statistic(summary: LimitedInfoSummary, model, weight: str | None = None,
                *, n_params: int | None = None) -> GofReport:
    """Scaled distance between summary statistics and model values.

    ``model`` is either a fitted dependent model or a raw vector of
    model-implied statistics in the summary's layout.  Only the
    inverse-covariance weight admits the chi-square reference; other
    weights report the raw statistic with a calibration note.
    """
    if isinstance(model, DependentFit):
        kappa_model = _model_kappa(model.standardized())
        if n_params is None:
            n_params = model.layout.size
    else:
        kappa_model = np.asarray(model, dtype=float)
    if kappa_model.size != summary.kappa_hat.size:
        raise ValueError(f"summary holds {summary.kappa_hat.size} "
                         f"statistics but the model implies "
                         f"{kappa_model.size}")
    weight = weight or summary.weight
    W, _ = _weight_matrix(replace(summary, weight=weight))
    resid = summary.kappa_hat - kappa_model
    statistic = float(summary.n_subjects * resid @ W @ resid)
    statistic = max(statistic, 0.0)
    if weight != "inverse-xi":
        return GofReport(statistic=statistic, df=None, p_value=None,
                         note=_NO_PVALUE_NOTE)
    if n_params is None:
        return GofReport(statistic=statistic, df=None, p_value=None,
                         note="parameter count unknown; supply it for the "
                              "chi-square reference")
    df = summary.kappa_hat.size - n_params
    if df <= 0:
        return GofReport(statistic=statistic, df=df, p_value=None,
                         note="saturated parameterization leaves no "
                              "residual degrees of freedom")
    return GofReport(statistic=statistic, df=df,
                     p_value=float(chi2.sf(statistic, df)),
                     note=f"chi-square reference with {df} degrees of "
                          "freedom")
