"""Dependent-comparison covariance structures and their identification.

Latent comparison vectors share objects, so their covariance has one of a
few structured forms: stimulus covariance plus pair-specific noise
(A Sigma_T A' + omega^2 I), stimulus covariance plus structured pair
effects (A Sigma_T A' + B Sigma_V B'), or an object random effect
(sigma^2 A A' + I).  Only the standardized model (cutpoints and the
correlation matrix of the standardized latents) is identified; this
module builds covariances, standardizes them, pins down free-parameter
layouts under explicit constraint strategies, and navigates the
rotation family that leaves the standardized model untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .linkmath import CorrelationMatrix
from .pcdata import DesignMatrix, all_pairs, build_design_matrix

__all__ = [
    "DependenceSpec",
    "IdentificationStrategy",
    "StructuralParams",
    "ParameterLayout",
    "StandardizedModel",
    "NonPositiveDefiniteError",
    "default_pair_effect_cov",
    "pair_effect_design",
    "build_covariance",
    "pair_means",
    "standardize",
    "apply_identification",
    "equivalence_rotation",
    "admissible_c_interval",
    "contrast_matrix",
    "PAIR_EFFECT_BUILDERS",
]

SPEC_KINDS = ("takane", "tsai-bockenholt", "object-random-effect",
              "independent")
STRATEGY_KINDS = ("unit-diagonal-omega-fixed", "unit-diagonal-row-sum",
                  "reduced-differences")

PD_EIGEN_FLOOR = 1e-10


class NonPositiveDefiniteError(ValueError):
    """A structured covariance lost positive definiteness."""

    def __init__(self, message, smallest_eigenvalue):
        super().__init__(f"{message} (smallest eigenvalue "
                         f"{smallest_eigenvalue:.3e})")
        self.smallest_eigenvalue = smallest_eigenvalue


# ---------------------------------------------------------------------------
# pair-effect covariance (pluggable)


def default_pair_effect_cov(b: float, n: int) -> np.ndarray:
    """Unit-variance pair effects, correlation b when the judged object
    is the same, zero otherwise.

    Effects are ordered V_{1(2)}, V_{1(3)}, ..., V_{1(n)}, V_{2(1)},
    V_{2(3)}, ..., V_{n(n-1)}: object i judged against each partner.
    """
    m = n * (n - 1)
    first = np.repeat(np.arange(n), n - 1)
    same = first[:, None] == first[None, :]
    cov = np.where(same, b, 0.0)
    np.fill_diagonal(cov, 1.0)
    return cov


PAIR_EFFECT_BUILDERS = {"shared-object": default_pair_effect_cov}


def _v_index(i: int, j: int, n: int) -> int:
    """Position of V_{i(j)} in the pair-effect vector."""
    return i * (n - 1) + (j - 1 if j > i else j)


def pair_effect_design(n: int) -> np.ndarray:
    """Incidence of pair effects in comparisons: row (i, j) carries
    +1 on V_{i(j)} and -1 on V_{j(i)}."""
    pairs = all_pairs(n)
    B = np.zeros((len(pairs), n * (n - 1)))
    for r, (i, j) in enumerate(pairs):
        B[r, _v_index(i, j, n)] = 1.0
        B[r, _v_index(j, i, n)] = -1.0
    return B


# ---------------------------------------------------------------------------
# specs, strategies, parameters


@dataclass(frozen=True)
class DependenceSpec:
    """Which dependence structure is assumed, and its fixed choices."""

    kind: str
    n_objects: int
    H: int = 2
    pair_effect_builder: str = "shared-object"
    n_covariates: int = 0  # object-random-effect mean structure

    def __post_init__(self):
        if self.kind not in SPEC_KINDS:
            raise ValueError(f"kind must be one of {SPEC_KINDS}")
        if self.n_objects < 2:
            raise ValueError("need at least two objects")
        if self.H < 2:
            raise ValueError("H must be >= 2")
        if self.pair_effect_builder not in PAIR_EFFECT_BUILDERS:
            raise ValueError(
                f"unknown pair-effect builder {self.pair_effect_builder!r}")

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "n_objects": self.n_objects,
                "H": self.H, "pair_effect_builder": self.pair_effect_builder,
                "n_covariates": self.n_covariates}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DependenceSpec":
        return cls(kind=doc["kind"], n_objects=int(doc["n_objects"]),
                   H=int(doc.get("H", 2)),
                   pair_effect_builder=doc.get("pair_effect_builder",
                                               "shared-object"),
                   n_covariates=int(doc.get("n_covariates", 0)))


@dataclass(frozen=True)
class IdentificationStrategy:
    """Constraint scheme that makes the structural parameters estimable.

    "unit-diagonal-omega-fixed": Sigma_T is a correlation matrix, the
    pair-noise variance is fixed at 1, one worth is pinned at 0.
    "unit-diagonal-row-sum": Sigma_T is a correlation matrix whose anchor
    row sums to 1 off the diagonal; the pair-noise variance stays free.
    "reduced-differences": means and covariances of the differences from
    the reference object are the parameters themselves.
    """

    kind: str
    reference: int = -1    # worth pinned at zero (-1 means last object)
    anchor: int = 0        # row whose correlations sum to one

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"kind must be one of {STRATEGY_KINDS}")

    def reference_index(self, n: int) -> int:
        return self.reference % n

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "reference": self.reference,
                "anchor": self.anchor}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "IdentificationStrategy":
        return cls(kind=doc["kind"], reference=int(doc.get("reference", -1)),
                   anchor=int(doc.get("anchor", 0)))


@dataclass(frozen=True)
class StructuralParams:
    """Natural-scale structural parameters of a dependence model.

    ``mu`` has length n (takane kinds, reference entry included) or n-1
    (reduced differences).  ``sigma_t`` matches: (n, n) correlation
    matrix or (n-1, n-1) covariance of differences.  Unused fields are
    None.  ``tau`` holds the symmetric thresholds tau_1..tau_{H-1}.
    """

    mu: np.ndarray
    sigma_t: np.ndarray
    tau: np.ndarray
    omega_sq: float | None = None
    b: float | None = None
    sigma_sq: float | None = None
    beta: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma_t",
                           np.asarray(self.sigma_t, dtype=float))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))


# ---------------------------------------------------------------------------
# covariance construction


def _smallest_eig(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(mat)[0])


def build_covariance(spec: DependenceSpec, params: StructuralParams,
                     A: DesignMatrix) -> np.ndarray:
    """Covariance of the latent comparison vector for one subject."""
    Amat = A.values
    N = Amat.shape[0]
    if spec.kind == "independent":
        return np.eye(N)
    if spec.kind == "takane":
        omega_sq = params.omega_sq if params.omega_sq is not None else 1.0
        sigma_z = Amat @ params.sigma_t @ Amat.T + omega_sq * np.eye(N)
    elif spec.kind == "tsai-bockenholt":
        n = spec.n_objects
        if params.sigma_t.shape[0] != n - 1:
            raise ValueError("reduced-difference covariance must have "
                             f"dimension {n - 1}")
        build = PAIR_EFFECT_BUILDERS[spec.pair_effect_builder]
        sigma_v = build(params.b, n)
        B = pair_effect_design(n)
        A_red = Amat[:, : n - 1]
        sigma_z = A_red @ params.sigma_t @ A_red.T + B @ sigma_v @ B.T
    elif spec.kind == "object-random-effect":
        sigma_z = params.sigma_sq * (Amat @ Amat.T) + np.eye(N)
    else:  # pragma: no cover - guarded by DependenceSpec
        raise ValueError(spec.kind)
    if not np.all(np.isfinite(sigma_z)):
        raise NonPositiveDefiniteError(
            "latent covariance has non-finite entries", -math.inf)
    eig = _smallest_eig(sigma_z)
    if eig <= PD_EIGEN_FLOOR:
        raise NonPositiveDefiniteError(
            "latent covariance is not positive definite", eig)
    return sigma_z


def pair_means(spec: DependenceSpec, params: StructuralParams,
               A: DesignMatrix) -> np.ndarray:
    """Mean of the latent comparison vector."""
    Amat = A.values
    if spec.kind == "tsai-bockenholt":
        return Amat[:, : spec.n_objects - 1] @ params.mu
    if spec.kind == "object-random-effect" and params.beta is not None:
        return Amat @ params.mu  # mu already holds X beta per object
    return Amat @ params.mu


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class StandardizedModel:
    """The identified objects: per-pair cutpoints and latent correlations.

    ``cutpoints`` has shape (N, H-1); for binary data the single column
    equals ``tau_star``.  ``tau_star`` is -mean/sd per pair.
    """

    tau_star: np.ndarray
    correlation: CorrelationMatrix
    cutpoints: np.ndarray

    @property
    def n_pairs(self) -> int:
        return int(self.tau_star.size)


def standardize(spec: DependenceSpec, params: StructuralParams,
                A: DesignMatrix) -> StandardizedModel:
    """Scale the latent model to unit variances.

    Cutpoint (r, h) is (tau_h - mean_r) / sd_r; the binary threshold
    tau* is the special case tau_1 = 0.
    """
    sigma_z = build_covariance(spec, params, A)
    m = pair_means(spec, params, A)
    sd = np.sqrt(np.diag(sigma_z))
    D = 1.0 / sd
    try:
        corr = CorrelationMatrix(sigma_z * np.outer(D, D))
    except ValueError as err:
        # rescaling can push the smallest eigenvalue below the matrix
        # class floor even though sigma_z itself passed; same verdict
        raise NonPositiveDefiniteError(
            "standardized covariance is numerically singular",
            float(np.linalg.eigvalsh(sigma_z * np.outer(D, D))[0])) from err
    tau_star = -m * D
    H = spec.H
    tau = params.tau if params.tau.size else np.zeros(1)
    if H == 2:
        cutpoints = tau_star[:, None]
    else:
        cutpoints = (tau[None, :] - m[:, None]) * D[:, None]
    return StandardizedModel(tau_star=tau_star, correlation=corr,
                             cutpoints=cutpoints)


# ---------------------------------------------------------------------------
# identification layouts


def contrast_matrix(n: int) -> np.ndarray:
    """K = [I_{n-1} | -1]: differences from the last object."""
    K = np.zeros((n - 1, n))
    K[:, : n - 1] = np.eye(n - 1)
    K[:, n - 1] = -1.0
    return K


def _corr_pairs(n: int) -> list:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _free_threshold_count(H: int) -> int:
    return sum(1 for h in range(H - 1) if 2 * (h + 1) > H)


def _thresholds_from_zeta(zeta: np.ndarray, H: int) -> np.ndarray:
    tau = np.zeros(H - 1)
    upper = np.cumsum(np.exp(zeta))
    m = 0
    for h in range(H - 1):
        if 2 * (h + 1) > H:
            tau[h] = upper[m]
            tau[H - 2 - h] = -upper[m]
            m += 1
    return tau


def _zeta_from_thresholds(tau: np.ndarray, H: int) -> np.ndarray:
    upper = [tau[h] for h in range(H - 1) if 2 * (h + 1) > H]
    diffs = np.diff([0.0] + upper)
    if np.any(diffs <= 0):
        raise ValueError("thresholds must be symmetric, ordered and "
                         "positive in the upper half")
    return np.log(diffs)


def _determined_corr_entry(strategy: IdentificationStrategy, n: int):
    """The anchor-row correlation implied by the row-sum constraint."""
    if strategy.kind != "unit-diagonal-row-sum":
        return None
    a = strategy.anchor
    partner = max(k for k in range(n) if k != a)
    return (min(a, partner), max(a, partner))


@dataclass(frozen=True)
class ParameterLayout:
    """Bijection between a free vector psi and structural parameters."""

    spec: DependenceSpec
    strategy: IdentificationStrategy
    names: tuple
    natural_names: tuple
    n_constraints: int

    @property
    def size(self) -> int:
        return len(self.names)

    # -- free vector -> structure ---------------------------------------

    def extract(self, psi) -> StructuralParams:
        psi = np.asarray(psi, dtype=float)
        if psi.size != self.size:
            raise ValueError(f"psi has length {psi.size}, expected "
                             f"{self.size}")
        spec, strat = self.spec, self.strategy
        n = spec.n_objects
        H = spec.H
        n_tau = _free_threshold_count(H)
        zeta = psi[self.size - n_tau:] if n_tau else np.zeros(0)
        tau = _thresholds_from_zeta(zeta, H) if n_tau else np.zeros(0)

        if strat.kind == "reduced-differences":
            mu = psi[: n - 1]
            # covariance through its Cholesky factor, log diagonal
            L = np.zeros((n - 1, n - 1))
            pos = n - 1
            for i in range(n - 1):
                for j in range(i + 1):
                    v = psi[pos]
                    L[i, j] = math.exp(v) if i == j else v
                    pos += 1
            sigma = L @ L.T
            b_raw = psi[pos]
            lo = -1.0 / (n - 2) if n > 2 else -1.0
            b = lo + (1.0 - lo) * (math.tanh(b_raw) + 1.0) / 2.0
            return StructuralParams(mu=mu, sigma_t=sigma, tau=tau, b=b)

        ref = strat.reference_index(n)
        mu = np.zeros(n)
        mu[[k for k in range(n) if k != ref]] = psi[: n - 1]
        if spec.kind == "independent":
            return StructuralParams(mu=mu, sigma_t=np.eye(n), tau=tau)
        pos = n - 1
        corr = np.eye(n)
        determined = _determined_corr_entry(strat, n)
        for (i, j) in _corr_pairs(n):
            if (i, j) == determined:
                continue
            corr[i, j] = corr[j, i] = math.tanh(psi[pos])
            pos += 1
        if determined is not None:
            a = strat.anchor
            i, j = determined
            others = sum(corr[a, k] for k in range(n) if k != a)
            # the anchor row sums to one off the diagonal
            corr[i, j] = corr[j, i] = 1.0 - others
        if strat.kind == "unit-diagonal-row-sum":
            omega_sq = math.exp(psi[pos])
            pos += 1
        else:
            omega_sq = 1.0
        return StructuralParams(mu=mu, sigma_t=corr, tau=tau,
                                omega_sq=omega_sq)

    # -- structure -> free vector ---------------------------------------

    def embed(self, params: StructuralParams) -> np.ndarray:
        spec, strat = self.spec, self.strategy
        n = spec.n_objects
        H = spec.H
        psi = np.zeros(self.size)
        n_tau = _free_threshold_count(H)
        if n_tau:
            psi[self.size - n_tau:] = _zeta_from_thresholds(params.tau, H)

        if strat.kind == "reduced-differences":
            psi[: n - 1] = params.mu
            L = np.linalg.cholesky(params.sigma_t)
            pos = n - 1
            for i in range(n - 1):
                for j in range(i + 1):
                    psi[pos] = math.log(L[i, j]) if i == j else L[i, j]
                    pos += 1
            lo = -1.0 / (n - 2) if n > 2 else -1.0
            frac = (params.b - lo) / (1.0 - lo)
            psi[pos] = math.atanh(2.0 * frac - 1.0)
            return psi

        ref = strat.reference_index(n)
        psi[: n - 1] = params.mu[[k for k in range(n) if k != ref]]
        if spec.kind == "independent":
            return psi
        pos = n - 1
        determined = _determined_corr_entry(strat, n)
        for (i, j) in _corr_pairs(n):
            if (i, j) == determined:
                continue
            psi[pos] = math.atanh(params.sigma_t[i, j])
            pos += 1
        if strat.kind == "unit-diagonal-row-sum":
            psi[pos] = math.log(params.omega_sq)
        return psi

    # -- natural-scale reporting -----------------------------------------

    def natural(self, psi) -> np.ndarray:
        """Values aligned with ``natural_names``."""
        params = self.extract(psi)
        spec, strat = self.spec, self.strategy
        n = spec.n_objects
        out = []
        if strat.kind == "reduced-differences":
            out.extend(params.mu)
            for i in range(n - 1):
                out.append(params.sigma_t[i, i])
            for (i, j) in _corr_pairs(n - 1):
                out.append(params.sigma_t[i, j])
            out.append(params.b)
        else:
            ref = strat.reference_index(n)
            out.extend(params.mu[k] for k in range(n) if k != ref)
            if spec.kind != "independent":
                for (i, j) in _corr_pairs(n):
                    out.append(params.sigma_t[i, j])
                if strat.kind == "unit-diagonal-row-sum":
                    out.append(params.omega_sq)
        for h in range(spec.H - 1):
            if 2 * (h + 1) > spec.H:
                out.append(params.tau[h])
        return np.array(out)

    def default_start(self, worths=None, thresholds=None) -> np.ndarray:
        """A feasible, roughly centered free vector for optimizers."""
        spec, strat = self.spec, self.strategy
        n = spec.n_objects
        H = spec.H
        n_tau = _free_threshold_count(H)
        tau = (np.asarray(thresholds, dtype=float) if thresholds is not None
               else _thresholds_from_zeta(np.full(n_tau, math.log(0.3)), H)
               if n_tau else np.zeros(0))
        if strat.kind == "reduced-differences":
            mu = (np.asarray(worths, dtype=float)[: n - 1]
                  if worths is not None else np.zeros(n - 1))
            lo = -1.0 / (n - 2) if n > 2 else -1.0
            mid = lo + (1.0 - lo) / 2.0
            return self.embed(StructuralParams(
                mu=mu, sigma_t=np.eye(n - 1), tau=tau, b=mid))
        mu = (np.asarray(worths, dtype=float) if worths is not None
              else np.zeros(n))
        # equicorrelation at 1/(n-1) is positive definite and satisfies
        # the anchor row-sum constraint exactly
        rho = 1.0 / (n - 1)
        corr = np.full((n, n), rho)
        np.fill_diagonal(corr, 1.0)
        return self.embed(StructuralParams(mu=mu, sigma_t=corr, tau=tau,
                                           omega_sq=1.0))


def apply_identification(spec: DependenceSpec,
                         strategy: IdentificationStrategy) -> ParameterLayout:
    """Free-parameter layout under a constraint strategy.

    Unit-diagonal strategies impose n + 2 scalar constraints on the
    stimulus-covariance model: n unit variances, one worth pinned, and
    either the fixed pair-noise variance or the anchor row sum.
    """
    n = spec.n_objects
    H = spec.H
    tau_names = [f"tau_{h + 1}" for h in range(H - 1) if 2 * (h + 1) > H]

    if strategy.kind == "reduced-differences":
        if spec.kind != "tsai-bockenholt":
            raise ValueError("reduced-differences identification applies "
                             "to the pair-effect model")
        names = [f"mu_diff_{k + 1}" for k in range(n - 1)]
        for i in range(n - 1):
            for j in range(i + 1):
                names.append(f"chol_{i + 1}{j + 1}")
        names.append("b_raw")
        names.extend(f"log_{t}" for t in tau_names)
        nat = [f"mu_diff_{k + 1}" for k in range(n - 1)]
        nat.extend(f"var_diff_{k + 1}" for k in range(n - 1))
        nat.extend(f"cov_diff_{i + 1}{j + 1}"
                   for (i, j) in _corr_pairs(n - 1))
        nat.append("b")
        nat.extend(tau_names)
        # reducing (mu, Sigma_T) to differences absorbs one mean and n
        # covariance degrees of freedom
        return ParameterLayout(spec=spec, strategy=strategy,
                               names=tuple(names), natural_names=tuple(nat),
                               n_constraints=n + 1)

    if spec.kind == "independent":
        if strategy.kind != "unit-diagonal-omega-fixed":
            raise ValueError("the independent model has no covariance "
                             "parameters; use unit-diagonal-omega-fixed "
                             "identification")
        ref = strategy.reference_index(n)
        names = [f"mu_{k + 1}" for k in range(n) if k != ref]
        names.extend(f"log_{t}" for t in tau_names)
        nat = [f"mu_{k + 1}" for k in range(n) if k != ref]
        nat.extend(tau_names)
        return ParameterLayout(spec=spec, strategy=strategy,
                               names=tuple(names), natural_names=tuple(nat),
                               n_constraints=1)
    if spec.kind != "takane":
        raise ValueError(f"{strategy.kind} identification applies to the "
                         "stimulus-covariance model")
    ref = strategy.reference_index(n)
    names = [f"mu_{k + 1}" for k in range(n) if k != ref]
    determined = _determined_corr_entry(strategy, n)
    for (i, j) in _corr_pairs(n):
        if (i, j) == determined:
            continue
        names.append(f"atanh_corr_{i + 1}{j + 1}")
    if strategy.kind == "unit-diagonal-row-sum":
        names.append("log_omega_sq")
    names.extend(f"log_{t}" for t in tau_names)
    nat = [f"mu_{k + 1}" for k in range(n) if k != ref]
    nat.extend(f"corr_{i + 1}{j + 1}" for (i, j) in _corr_pairs(n))
    if strategy.kind == "unit-diagonal-row-sum":
        nat.append("omega_sq")
    nat.extend(tau_names)
    return ParameterLayout(spec=spec, strategy=strategy, names=tuple(names),
                           natural_names=tuple(nat), n_constraints=n + 2)


# ---------------------------------------------------------------------------
# equivalence class of rotations


def admissible_c_interval(sigma_t: np.ndarray, tol: float = 1e-10
                          ) -> tuple:
    """Open interval of c > 0 keeping c*Sigma_T + (1-c)*11' positive
    definite.  The set is an interval containing c = 1."""
    sigma_t = np.asarray(sigma_t, dtype=float)
    n = sigma_t.shape[0]
    ones = np.ones((n, n))

    def ok(c):
        return _smallest_eig(c * sigma_t + (1 - c) * ones) > PD_EIGEN_FLOOR

    if not ok(1.0):
        raise NonPositiveDefiniteError(
            "the given matrix is not positive definite",
            _smallest_eig(sigma_t))

    hi = 1.0
    step = 1.0
    while ok(hi + step) and hi + step < 1e9:
        hi += step
        step *= 2.0
    hi_lo, hi_hi = hi, hi + step
    while hi_hi - hi_lo > tol * max(1.0, hi_hi):
        mid = 0.5 * (hi_lo + hi_hi)
        if ok(mid):
            hi_lo = mid
        else:
            hi_hi = mid

    lo = 1.0
    step = 0.5
    while lo - step > 0 and ok(lo - step):
        lo -= step
        step *= 2.0
    lo_hi, lo_lo = lo, max(lo - step, 0.0)
    while lo_hi - lo_lo > tol:
        mid = 0.5 * (lo_lo + lo_hi)
        if ok(mid):
            lo_hi = mid
        else:
            lo_lo = mid
    return (lo_hi, hi_lo)


def equivalence_rotation(params: StructuralParams, c: float
                         ) -> StructuralParams:
    """The rotated solution (sqrt(c) mu, c Sigma_T + (1-c) 11',
    c omega^2, sqrt(c) tau) fitting identically to the original.

    Valid for unit-diagonal stimulus correlation structures; the rotated
    matrix stays a correlation matrix whenever it stays positive
    definite.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    n = params.sigma_t.shape[0]
    ones = np.ones((n, n))
    rotated = c * params.sigma_t + (1 - c) * ones
    eig = _smallest_eig(rotated)
    if eig <= PD_EIGEN_FLOOR:
        lo, hi = admissible_c_interval(params.sigma_t)
        raise NonPositiveDefiniteError(
            f"c={c} leaves the admissible interval ({lo:.6f}, {hi:.6f})",
            eig)
    omega = params.omega_sq * c if params.omega_sq is not None else None
    return replace(params, mu=math.sqrt(c) * params.mu, sigma_t=rotated,
                   omega_sq=omega, tau=math.sqrt(c) * params.tau)


def full_design(n: int) -> DesignMatrix:
    """Design matrix over all N = n(n-1)/2 pairs in lexicographic order."""
    return build_design_matrix(n, all_pairs(n))
