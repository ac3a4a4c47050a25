"""Independence-model fitting: binary and ordinal paired comparisons.

Linear predictors combine a free worth block, object-covariate effects,
subject-object interactions, and comparison-specific covariates.  Ordinal
outcomes use a cumulative link with symmetric thresholds (the category
scale is mirror-symmetric under swapping the objects of a pair).  Wald
contrasts and quasi-variances for the worth block round out the module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .linkmath import Link, OptimizerConfig, PROBIT, maximize
from .pcdata import PairedComparisonDataset

__all__ = [
    "WorthTerm",
    "ObjectCovariateTerm",
    "SubjectObjectTerm",
    "ComparisonTerm",
    "LinearPredictorSpec",
    "CoefficientMeta",
    "FitResult",
    "QuasiVariances",
    "WaldContrast",
    "IdentifiabilityError",
    "SeparationError",
    "fit_linear",
    "fit_cumulative",
    "quasi_variances",
    "wald_contrast",
    "predict_prob",
]


class IdentifiabilityError(ValueError):
    """The requested parameters are not estimable from the data."""


class SeparationError(ValueError):
    """An object won or lost every weighted comparison it appears in."""


# ---------------------------------------------------------------------------
# predictor specification


@dataclass(frozen=True)
class WorthTerm:
    """Free merit parameter per object, pinned down by a constraint.

    ``constraint`` is "reference" (the named object's worth is fixed at 0)
    or "sum" (worths sum to zero).
    """

    constraint: str = "reference"
    reference: str | None = None

    def __post_init__(self):
        if self.constraint not in ("reference", "sum"):
            raise ValueError("constraint must be 'reference' or 'sum'")
        if self.constraint == "reference" and self.reference is None:
            raise ValueError("reference constraint needs a reference object")


@dataclass(frozen=True)
class ObjectCovariateTerm:
    """Effect of one object-covariate column on the worth difference."""

    column: str


@dataclass(frozen=True)
class SubjectObjectTerm:
    """Interaction of a subject covariate with an object loading.

    The loading is either an indicator for a single object (``object``)
    or an object-covariate column (``object_column``); exactly one must
    be given.
    """

    subject_column: str
    object: str | None = None
    object_column: str | None = None
    name: str | None = None

    def __post_init__(self):
        if (self.object is None) == (self.object_column is None):
            raise ValueError("give exactly one of object, object_column")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return f"{self.subject_column}:{self.object or self.object_column}"


@dataclass(frozen=True)
class ComparisonTerm:
    """Effect of a comparison-specific covariate (e.g. presentation order)."""

    column: str


@dataclass(frozen=True)
class LinearPredictorSpec:
    """Ordered model terms plus link and category count."""

    terms: tuple
    link: Link = PROBIT
    H: int = 2

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        worth = [t for t in self.terms if isinstance(t, WorthTerm)]
        if len(worth) > 1:
            raise ValueError("at most one worth block is allowed")
        if self.H < 2:
            raise ValueError("H must be >= 2")

    @property
    def worth_term(self) -> WorthTerm | None:
        for t in self.terms:
            if isinstance(t, WorthTerm):
                return t
        return None

    def validate_against(self, data: PairedComparisonDataset):
        for t in self.terms:
            if isinstance(t, ObjectCovariateTerm):
                if t.column not in data.object_covariate_names:
                    raise ValueError(f"unknown object covariate {t.column!r}")
            elif isinstance(t, SubjectObjectTerm):
                if t.subject_column not in data.subject_covariate_names:
                    raise ValueError(
                        f"unknown subject covariate {t.subject_column!r}")
                if t.object is not None and t.object not in data.objects:
                    raise ValueError(f"unknown object {t.object!r}")
                if t.object_column is not None and \
                        t.object_column not in data.object_covariate_names:
                    raise ValueError(
                        f"unknown object covariate {t.object_column!r}")
            elif isinstance(t, ComparisonTerm):
                if t.column not in data.comparison_covariates:
                    raise ValueError(
                        f"unknown comparison covariate {t.column!r}")
            elif isinstance(t, WorthTerm):
                if t.reference is not None and \
                        t.reference not in data.objects:
                    raise ValueError(
                        f"unknown reference object {t.reference!r}")
            else:
                raise TypeError(f"unknown term type {type(t).__name__}")


@dataclass(frozen=True)
class CoefficientMeta:
    """How one reported coefficient enters the linear predictor.

    kind "object": coefficient times (loading[i] - loading[j]), optionally
    multiplied by a subject covariate value supplied at prediction time.
    kind "comparison": coefficient times a comparison covariate value.
    kind "threshold": a free cutpoint, not part of the predictor.
    ``worth_level`` marks members of the free worth block.
    """

    name: str
    kind: str
    loading: tuple = ()
    subject_covariate: str | None = None
    comparison_covariate: str | None = None
    worth_level: bool = False


# ---------------------------------------------------------------------------
# symmetric thresholds

# Thresholds tau_1 <= ... <= tau_{H-1} satisfy tau_h = -tau_{H-h}; the
# strictly-upper half is free and positive, parameterized as cumulative
# sums of exponentials.


def _free_threshold_indices(H: int) -> list[int]:
    """0-based indices (into tau_1..tau_{H-1}) of the free upper half."""
    return [h for h in range(H - 1) if 2 * (h + 1) > H]


def _thresholds_from_zeta(zeta: np.ndarray, H: int) -> np.ndarray:
    tau = np.zeros(H - 1)
    free = _free_threshold_indices(H)
    upper = np.cumsum(np.exp(zeta))
    for m, h in enumerate(free):
        tau[h] = upper[m]
        tau[H - 2 - h] = -upper[m]
    return tau


def _threshold_jacobian(zeta: np.ndarray, H: int) -> np.ndarray:
    """d tau_full / d zeta, shape (H-1, M)."""
    free = _free_threshold_indices(H)
    M = len(free)
    J = np.zeros((H - 1, M))
    e = np.exp(zeta)
    for m, h in enumerate(free):
        for l in range(m + 1):
            J[h, l] = e[l]
            J[H - 2 - h, l] = -e[l]
    return J


def _free_tau_jacobian(zeta: np.ndarray) -> np.ndarray:
    """d (free natural thresholds) / d zeta, lower triangular, (M, M)."""
    M = zeta.size
    J = np.zeros((M, M))
    e = np.exp(zeta)
    for m in range(M):
        J[m, : m + 1] = e[: m + 1]
    return J


# ---------------------------------------------------------------------------
# identifiability checks


def _connected_components(n: int, pairs) -> list[list[int]]:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    groups: dict = {}
    for k in range(n):
        groups.setdefault(find(k), []).append(k)
    return list(groups.values())


def _check_connected(data: PairedComparisonDataset):
    comps = _connected_components(data.n_objects, data.observed_pairs)
    if len(comps) > 1:
        names = [tuple(data.objects[k] for k in comp) for comp in comps]
        raise IdentifiabilityError(
            f"comparison graph is disconnected; components: {names}")


def _check_separation(data: PairedComparisonDataset):
    wins = np.zeros(data.n_objects)
    losses = np.zeros(data.n_objects)
    first_won = data.outcome == 2
    np.add.at(wins, data.pair_i, np.where(first_won, data.weight, 0.0))
    np.add.at(losses, data.pair_i, np.where(first_won, 0.0, data.weight))
    np.add.at(wins, data.pair_j, np.where(first_won, 0.0, data.weight))
    np.add.at(losses, data.pair_j, np.where(first_won, data.weight, 0.0))
    bad = [data.objects[k] for k in range(data.n_objects)
           if wins[k] == 0 or losses[k] == 0]
    if bad:
        raise SeparationError(
            f"objects with all wins or all losses: {bad}; pass "
            "allow_separation=True to fit anyway")


# ---------------------------------------------------------------------------
# design construction


def _worth_constraint_matrix(n: int, term: WorthTerm, objects) -> np.ndarray:
    """Map free worth parameters (n-1) to all n levels."""
    C = np.zeros((n, n - 1))
    if term.constraint == "reference":
        ref = objects.index(term.reference)
        free = [k for k in range(n) if k != ref]
        for col, k in enumerate(free):
            C[k, col] = 1.0
    else:
        # sum-to-zero: last level is minus the sum of the others
        for col in range(n - 1):
            C[col, col] = 1.0
        C[n - 1, :] = -1.0
    return C


def _object_loadings(data: PairedComparisonDataset, term) -> np.ndarray:
    n = data.n_objects
    if isinstance(term, ObjectCovariateTerm):
        col = data.object_covariate_names.index(term.column)
        return data.object_covariates[:, col].copy()
    if term.object is not None:
        load = np.zeros(n)
        load[data.objects.index(term.object)] = 1.0
        return load
    col = data.object_covariate_names.index(term.object_column)
    return data.object_covariates[:, col].copy()


@dataclass
class _Design:
    D: np.ndarray                       # records x free eta parameters
    n_free_eta: int
    n_zeta: int
    worth_C: np.ndarray | None          # n x (n-1) or None
    worth_slice: slice | None
    report_meta: list
    report_expand_blocks: list          # (free_slice, expander) pairs


def _build_design(data: PairedComparisonDataset,
                  spec: LinearPredictorSpec) -> _Design:
    spec.validate_against(data)
    R = data.n_records
    n = data.n_objects
    cols: list[np.ndarray] = []
    meta: list[CoefficientMeta] = []
    blocks: list = []
    worth_C = None
    worth_slice = None
    pos = 0

    for term in spec.terms:
        if isinstance(term, WorthTerm):
            worth_C = _worth_constraint_matrix(n, term, data.objects)
            diff = np.zeros((R, n))
            diff[np.arange(R), data.pair_i] = 1.0
            diff[np.arange(R), data.pair_j] = -1.0
            block = diff @ worth_C
            for col in range(n - 1):
                cols.append(block[:, col])
            worth_slice = slice(pos, pos + n - 1)
            for k in range(n):
                load = tuple(1.0 if m == k else 0.0 for m in range(n))
                meta.append(CoefficientMeta(name=data.objects[k],
                                            kind="object", loading=load,
                                            worth_level=True))
            blocks.append((worth_slice, worth_C))
            pos += n - 1
        elif isinstance(term, ObjectCovariateTerm):
            load = _object_loadings(data, term)
            cols.append(load[data.pair_i] - load[data.pair_j])
            meta.append(CoefficientMeta(name=term.column, kind="object",
                                        loading=tuple(load)))
            blocks.append((slice(pos, pos + 1), np.eye(1)))
            pos += 1
        elif isinstance(term, SubjectObjectTerm):
            if data.subject_idx is None:
                raise ValueError(
                    f"term {term.label!r} needs subject-level data")
            q = data.subject_covariate_names.index(term.subject_column)
            z = data.subject_covariates[data.subject_idx, q]
            load = _object_loadings(data, term)
            cols.append(z * (load[data.pair_i] - load[data.pair_j]))
            meta.append(CoefficientMeta(
                name=term.label, kind="object", loading=tuple(load),
                subject_covariate=term.subject_column))
            blocks.append((slice(pos, pos + 1), np.eye(1)))
            pos += 1
        elif isinstance(term, ComparisonTerm):
            cols.append(np.asarray(data.comparison_covariates[term.column],
                                   dtype=float))
            meta.append(CoefficientMeta(
                name=term.column, kind="comparison",
                comparison_covariate=term.column))
            blocks.append((slice(pos, pos + 1), np.eye(1)))
            pos += 1

    D = np.column_stack(cols) if cols else np.zeros((R, 0))
    n_zeta = len(_free_threshold_indices(spec.H))
    free = _free_threshold_indices(spec.H)
    for h in free:
        meta.append(CoefficientMeta(name=f"tau_{h + 1}", kind="threshold"))
    return _Design(D=D, n_free_eta=pos, n_zeta=n_zeta, worth_C=worth_C,
                   worth_slice=worth_slice, report_meta=meta,
                   report_expand_blocks=blocks)


# ---------------------------------------------------------------------------
# likelihood


def _loglik_and_gradient(theta, design: _Design, data, link: Link, H: int):
    K = design.n_free_eta
    eta = design.D @ theta[:K] if K else np.zeros(data.n_records)
    zeta = theta[K:]
    tau = _thresholds_from_zeta(zeta, H) if zeta.size else np.zeros(H - 1)
    y = data.outcome
    w = data.weight

    lower_inf = y == 1
    upper_inf = y == H
    a = np.where(lower_inf, 0.0, tau[np.maximum(y - 2, 0)]) - eta
    b = np.where(upper_inf, 0.0, tau[np.minimum(y - 1, H - 2)]) - eta
    Fa = np.where(lower_inf, 0.0, link.cdf(a))
    Fb = np.where(upper_inf, 1.0, link.cdf(b))
    fa = np.where(lower_inf, 0.0, link.density(a))
    fb = np.where(upper_inf, 0.0, link.density(b))
    p = np.clip(Fb - Fa, 1e-300, None)
    ll = float(np.sum(w * np.log(p)))

    grad = np.zeros(theta.size)
    score = w / p
    if K:
        grad[:K] = design.D.T @ (score * (fa - fb))
    if zeta.size:
        g_tau = np.zeros(H - 1)
        np.add.at(g_tau, np.minimum(y - 1, H - 2),
                  np.where(upper_inf, 0.0, score * fb))
        np.add.at(g_tau, np.maximum(y - 2, 0),
                  np.where(lower_inf, 0.0, -score * fa))
        grad[K:] = _threshold_jacobian(zeta, H).T @ g_tau
    return ll, grad


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class QuasiVariances:
    """Additive per-level variance constants for a worth block."""

    levels: tuple
    q: np.ndarray
    max_log_ratio_error: float
    flags: tuple = ()

    @property
    def quasi_se(self) -> np.ndarray:
        return np.sqrt(self.q)


@dataclass(frozen=True)
class FitResult:
    """Named estimates on the natural scale with their covariance."""

    names: tuple
    estimates: np.ndarray
    vcov: np.ndarray
    loglik: float
    H: int
    link: Link
    meta: tuple
    objects: tuple
    converged: bool
    iterations: int
    gradient_norm: float
    flags: tuple = ()
    quasi: QuasiVariances | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def estimate(self, name: str) -> float:
        return float(self.estimates[self.names.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.names.index(name)])

    @property
    def worth_indices(self) -> list:
        return [k for k, m in enumerate(self.meta) if m.worth_level]

    @property
    def thresholds(self) -> np.ndarray:
        """Full tau_1..tau_{H-1} vector rebuilt from the free estimates."""
        tau = np.zeros(self.H - 1)
        free = _free_threshold_indices(self.H)
        for h in free:
            v = self.estimate(f"tau_{h + 1}")
            tau[h] = v
            tau[self.H - 2 - h] = -v
        return tau

    def to_json_dict(self) -> dict:
        return {
            "names": list(self.names),
            "estimates": [float(v) for v in self.estimates],
            "se": [float(v) for v in self.se],
            "quasi_se": ([float(v) for v in self.quasi.quasi_se]
                         if self.quasi is not None else None),
            "quasi_levels": (list(self.quasi.levels)
                             if self.quasi is not None else None),
            "vcov": [float(v) for v in self.vcov.ravel()],
            "loglik": self.loglik,
            "H": self.H,
            "link": self.link.kind,
            "objects": list(self.objects),
            "meta": [
                {
                    "name": m.name,
                    "kind": m.kind,
                    "loading": list(m.loading),
                    "subject_covariate": m.subject_covariate,
                    "comparison_covariate": m.comparison_covariate,
                    "worth_level": m.worth_level,
                }
                for m in self.meta
            ],
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "gradient_norm": self.gradient_norm,
                "flags": list(self.flags),
            },
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FitResult":
        from .linkmath import get_link

        k = len(doc["names"])
        meta = tuple(
            CoefficientMeta(
                name=m["name"], kind=m["kind"],
                loading=tuple(m["loading"]),
                subject_covariate=m["subject_covariate"],
                comparison_covariate=m["comparison_covariate"],
                worth_level=bool(m.get("worth_level", False)),
            )
            for m in doc["meta"]
        )
        quasi = None
        if doc.get("quasi_se") is not None:
            qse = np.asarray(doc["quasi_se"], dtype=float)
            quasi = QuasiVariances(levels=tuple(doc["quasi_levels"]),
                                   q=qse ** 2, max_log_ratio_error=math.nan)
        return cls(
            names=tuple(doc["names"]),
            estimates=np.asarray(doc["estimates"], dtype=float),
            vcov=np.asarray(doc["vcov"], dtype=float).reshape(k, k),
            loglik=float(doc["loglik"]),
            H=int(doc["H"]),
            link=get_link(doc["link"]),
            meta=meta,
            objects=tuple(doc["objects"]),
            converged=bool(doc["convergence"]["converged"]),
            iterations=int(doc["convergence"]["iterations"]),
            gradient_norm=float(doc["convergence"]["gradient_norm"]),
            flags=tuple(doc["convergence"]["flags"]),
            quasi=quasi,
        )


# ---------------------------------------------------------------------------
# fitting


_FIT_CONFIG = OptimizerConfig(gradient_tol=1e-5, max_iter=300)


def _fit_core(data: PairedComparisonDataset, spec: LinearPredictorSpec,
              extra_flags=()) -> FitResult:
    if spec.worth_term is not None:
        _check_connected(data)
    design = _build_design(data, spec)
    K, M = design.n_free_eta, design.n_zeta
    flags = list(extra_flags)

    if M:
        pooled_middle = sum(float(data.weight[data.outcome == y].sum())
                            for y in range(2, data.H))
        if pooled_middle == 0.0:
            flags.append("threshold-boundary")

    def objective(theta):
        return _loglik_and_gradient(theta, design, data, spec.link,
                                    spec.H)[0]

    def gradient(theta):
        return _loglik_and_gradient(theta, design, data, spec.link,
                                    spec.H)[1]

    start = np.zeros(K + M)
    if M:
        start[K:] = math.log(0.3)  # modest initial cutpoint spacing
    res = maximize(objective, start, config=_FIT_CONFIG, gradient=gradient)
    if not res.converged:
        flags.append("not-converged")

    # covariance of the free parameters from observed information
    if res.hessian.size:
        neg_hess = -res.hessian
        try:
            vcov_free = np.linalg.inv(neg_hess)
        except np.linalg.LinAlgError:
            vcov_free = np.full((K + M, K + M), np.nan)
            flags.append("singular-information")
    else:
        vcov_free = np.zeros((0, 0))

    # expand to the natural reporting scale by the delta method
    zeta = res.x[K:]
    n_report = len(design.report_meta)
    J = np.zeros((n_report, K + M))
    est = np.zeros(n_report)
    row = 0
    for free_slice, expander in design.report_expand_blocks:
        nrow = expander.shape[0]
        J[row:row + nrow, free_slice] = expander
        est[row:row + nrow] = expander @ res.x[free_slice]
        row += nrow
    if M:
        tau_free = np.cumsum(np.exp(zeta))
        J[row:row + M, K:] = _free_tau_jacobian(zeta)
        est[row:row + M] = tau_free
        if np.any(np.exp(zeta) < 1e-6) and "threshold-boundary" not in flags:
            flags.append("threshold-boundary")
    vcov = J @ vcov_free @ J.T

    return FitResult(
        names=tuple(m.name for m in design.report_meta),
        estimates=est,
        vcov=vcov,
        loglik=res.value,
        H=spec.H,
        link=spec.link,
        meta=tuple(design.report_meta),
        objects=data.objects,
        converged=res.converged,
        iterations=res.iterations,
        gradient_norm=res.grad_norm,
        flags=tuple(flags),
    )


def fit_linear(data: PairedComparisonDataset, spec: LinearPredictorSpec,
               allow_separation: bool = False) -> FitResult:
    """Maximum likelihood for binary outcomes, win probability F(eta).

    The dataset must be binary (H=2) already; split ties beforehand.
    """
    if data.H != 2:
        raise ValueError("fit_linear needs binary data; use split_ties() "
                         "or a tie-splitting load policy first")
    if spec.H != 2:
        raise ValueError("spec.H must be 2 for fit_linear")
    if spec.worth_term is not None and not allow_separation:
        _check_separation(data)
    flags = ("separation-allowed",) if allow_separation else ()
    return _fit_core(data, spec, extra_flags=flags)


def fit_cumulative(data: PairedComparisonDataset,
                   spec: LinearPredictorSpec) -> FitResult:
    """Maximum likelihood for ordinal outcomes via symmetric cutpoints."""
    if spec.H < 3:
        raise ValueError("fit_cumulative needs H >= 3; use fit_linear for "
                         "binary data")
    if data.H != spec.H:
        raise ValueError(f"data has H={data.H} but spec declares {spec.H}")
    return _fit_core(data, spec)


def refit_with_reference(data, spec: LinearPredictorSpec,
                         reference: str) -> FitResult:
    """Convenience: same model with a different worth reference object."""
    terms = tuple(
        WorthTerm(constraint="reference", reference=reference)
        if isinstance(t, WorthTerm) else t
        for t in spec.terms
    )
    new_spec = LinearPredictorSpec(terms=terms, link=spec.link, H=spec.H)
    if data.H == 2:
        return fit_linear(data, new_spec)
    return fit_cumulative(data, new_spec)


# ---------------------------------------------------------------------------
# quasi-variances


def _worth_block(fit: FitResult):
    idx = fit.worth_indices
    if len(idx) != len(fit.objects):
        raise ValueError("fit has no complete worth block")
    # order levels by their loading position so q aligns with objects
    order = sorted(idx, key=lambda k: fit.meta[k].loading.index(1.0))
    return order


def quasi_variances(fit: FitResult, selector: str = "worth") -> QuasiVariances:
    """Per-level constants q with q_i + q_j tracking contrast variances.

    Minimizes the summed squared log ratio between q_i + q_j and the
    estimated variance of each pairwise worth contrast.
    """
    if selector != "worth":
        raise ValueError("only the worth block supports quasi-variances")
    order = _worth_block(fit)
    V = fit.vcov[np.ix_(order, order)]
    n = len(order)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                d[i, j] = V[i, i] + V[j, j] - 2 * V[i, j]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if any(d[i, j] <= 0 for i, j in pairs):
        raise ValueError("a worth contrast has nonpositive variance; "
                         "quasi-variances are undefined")
    log_d = {p: math.log(d[p]) for p in pairs}
    floor = 1e-12 * min(d[p] for p in pairs)

    # warm start: least squares on q_i + q_j = d_ij, then polish the
    # log-ratio penalty in units of a common scale so BFGS steps are O(1)
    A = np.zeros((len(pairs), n))
    for r, (i, j) in enumerate(pairs):
        A[r, i] = A[r, j] = 1.0
    rhs = np.array([d[p] for p in pairs])
    q0 = np.linalg.lstsq(A, rhs, rcond=None)[0]
    scale = float(np.median(rhs)) / 2.0
    if any(q0[i] + q0[j] <= floor for i, j in pairs):
        q0 = np.full(n, scale)

    def neg_penalty(x):
        s = 0.0
        for i, j in pairs:
            tot = (x[i] + x[j]) * scale
            if tot <= floor:
                return -np.inf
            s += (math.log(tot) - log_d[(i, j)]) ** 2
        return -s

    def neg_grad(x):
        g = np.zeros(n)
        for i, j in pairs:
            tot = (x[i] + x[j]) * scale
            if tot <= floor:
                return np.full(n, np.nan)
            common = 2 * (math.log(tot) - log_d[(i, j)]) / (x[i] + x[j])
            g[i] += common
            g[j] += common
        return -g

    cfg = OptimizerConfig(gradient_tol=1e-8, max_iter=500)
    res = maximize(neg_penalty, q0 / scale, config=cfg, gradient=neg_grad,
                   compute_hessian=False)
    flags: list = []
    q = res.x * scale
    if not res.converged:
        flags.append("quasi-variance-fallback")
        q = np.diag(V).copy()
    elif np.any(q < 0):
        if np.all(q > -1e-8 * scale):
            q = np.clip(q, 0.0, None)
            flags.append("quasi-variance-clipped")
        else:
            flags.append("quasi-variance-fallback")
            q = np.diag(V).copy()
    max_err = max(abs(math.log(q[i] + q[j]) - log_d[(i, j)])
                  for i, j in pairs if q[i] + q[j] > 0)
    labels = tuple(fit.names[k] for k in order)
    return QuasiVariances(levels=labels, q=q,
                          max_log_ratio_error=max_err, flags=tuple(flags))


def with_quasi(fit: FitResult) -> FitResult:
    """Attach quasi-variances for the worth block to a fit."""
    from dataclasses import replace

    return replace(fit, quasi=quasi_variances(fit))


# ---------------------------------------------------------------------------
# contrasts and prediction


@dataclass(frozen=True)
class WaldContrast:
    """A linear worth contrast with exact and quasi-variance inference."""

    estimate: float
    se_exact: float
    se_quasi: float | None
    z_exact: float
    z_quasi: float | None
    p_one_sided: float
    p_two_sided: float
    p_one_sided_quasi: float | None = None


def wald_contrast(fit: FitResult, c, use: str = "exact") -> WaldContrast:
    """Inference for a zero-sum contrast over the worth levels.

    ``c`` has one entry per object, ordered as ``fit.objects``.
    """
    c = np.asarray(c, dtype=float)
    order = _worth_block(fit)
    if c.size != len(order):
        raise ValueError("contrast length must equal the worth level count")
    if abs(c.sum()) > 1e-10:
        raise ValueError("contrast must sum to zero")
    mu = fit.estimates[order]
    V = fit.vcov[np.ix_(order, order)]
    est = float(c @ mu)
    se_exact = float(math.sqrt(max(c @ V @ c, 0.0)))
    quasi = fit.quasi if fit.quasi is not None else quasi_variances(fit)
    se_quasi = float(math.sqrt(float(np.sum(c ** 2 * quasi.q))))
    z_exact = est / se_exact if se_exact > 0 else 0.0
    z_quasi = est / se_quasi if se_quasi > 0 else 0.0
    z = z_quasi if use == "quasi" else z_exact
    p_one = float(1.0 - ndtr(z))
    p_two = float(2.0 * (1.0 - ndtr(abs(z))))
    return WaldContrast(
        estimate=est, se_exact=se_exact, se_quasi=se_quasi,
        z_exact=z_exact, z_quasi=z_quasi,
        p_one_sided=p_one, p_two_sided=p_two,
        p_one_sided_quasi=float(1.0 - ndtr(z_quasi)),
    )


def predict_prob(fit: FitResult, pair, covariates: dict | None = None
                 ) -> np.ndarray:
    """Category probabilities for one comparison.

    ``pair`` gives the two object labels or indices (first, second);
    ``covariates`` supplies subject and comparison covariate values for
    every term that needs one.  The returned vector is ordered from
    "second object preferred" (category 1) to "first preferred" (H).
    """
    covariates = covariates or {}
    labels = fit.objects

    def as_index(obj):
        if isinstance(obj, str):
            if obj not in labels:
                raise KeyError(f"unknown object {obj!r}")
            return labels.index(obj)
        return int(obj)

    i, j = (as_index(o) for o in pair)
    eta = 0.0
    for k, m in enumerate(fit.meta):
        if m.kind == "threshold":
            continue
        coef = float(fit.estimates[k])
        if m.kind == "comparison":
            if m.comparison_covariate not in covariates:
                raise ValueError(
                    f"term {m.name!r} needs covariate "
                    f"{m.comparison_covariate!r}")
            eta += coef * float(covariates[m.comparison_covariate])
            continue
        val = m.loading[i] - m.loading[j]
        if m.subject_covariate is not None:
            if m.subject_covariate not in covariates:
                raise ValueError(
                    f"term {m.name!r} needs covariate "
                    f"{m.subject_covariate!r}")
            val *= float(covariates[m.subject_covariate])
        eta += coef * val

    tau = fit.thresholds
    cum = np.empty(fit.H + 1)
    cum[0] = 0.0
    cum[fit.H] = 1.0
    for y in range(1, fit.H):
        cum[y] = fit.link.cdf(tau[y - 1] - eta)
    probs = np.diff(cum)
    return np.clip(probs, 0.0, 1.0)
