"""Links, normal rectangle probabilities, tetrachoric solver, maximizer.

Everything downstream (independent fits, dependent-model estimators, the
goodness-of-fit statistics) funnels its numerical work through this module:
univariate links, bivariate rectangles via deterministic quadrature, small
multivariate rectangles via randomized-lattice QMC, a tetrachoric root
finder, and a quasi-Newton maximizer with the non-negative-definite-Hessian
check that the dependent fitters report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, logit as _logit_fn, ndtr, ndtri, roots_legendre

__all__ = [
    "Link",
    "PROBIT",
    "LOGIT",
    "get_link",
    "CorrelationMatrix",
    "OptimizerConfig",
    "MaximizeResult",
    "QmcResult",
    "bvn_rect",
    "bvn_upper",
    "mvn_rect_qmc",
    "tetrachoric",
    "maximize",
    "numeric_hessian",
    "fd_gradient",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


# ---------------------------------------------------------------------------
# links


@dataclass(frozen=True)
class Link:
    """Zero-symmetric response distribution: cdf, density and quantile."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("probit", "logit"):
            raise ValueError(f"unknown link kind {self.kind!r}")

    def cdf(self, x):
        if self.kind == "probit":
            return ndtr(x)
        return expit(x)

    def density(self, x):
        if self.kind == "probit":
            return _norm_pdf(x)
        p = expit(x)
        return p * (1.0 - p)

    def quantile(self, p):
        if self.kind == "probit":
            return ndtri(p)
        return _logit_fn(p)


PROBIT = Link("probit")
LOGIT = Link("logit")


def get_link(kind: str) -> Link:
    if kind == "probit":
        return PROBIT
    if kind == "logit":
        return LOGIT
    raise ValueError(f"unknown link kind {kind!r}")


# ---------------------------------------------------------------------------
# correlation matrices


class CorrelationMatrix:
    """Symmetric unit-diagonal positive definite matrix.

    Positive definiteness is checked on construction (smallest eigenvalue
    above 1e-10); the stored array is read-only.
    """

    __slots__ = ("values", "dimension")

    def __init__(self, values):
        arr = np.array(values, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.allclose(arr, arr.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(arr), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must have a unit diagonal")
        arr = 0.5 * (arr + arr.T)
        np.fill_diagonal(arr, 1.0)
        smallest = float(np.linalg.eigvalsh(arr)[0])
        if smallest <= 1e-10:
            raise ValueError(
                f"correlation matrix is not positive definite "
                f"(smallest eigenvalue {smallest:.3e})"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "dimension", arr.shape[0])

    def __setattr__(self, name, value):  # pragma: no cover - defensive
        raise AttributeError("CorrelationMatrix is immutable")

    def __repr__(self):
        return f"CorrelationMatrix(dimension={self.dimension})"


# ---------------------------------------------------------------------------
# optimizer configuration


@dataclass(frozen=True)
class OptimizerConfig:
    gradient_tol: float = 1e-8
    max_iter: int = 500
    step_halving_limit: int = 40
    fd_step: float = 1e-6
    hessian_fd_step: float = 1e-4

    def __post_init__(self):
        for name in ("gradient_tol", "max_iter", "step_halving_limit",
                     "fd_step", "hessian_fd_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"OptimizerConfig.{name} must be positive")


# ---------------------------------------------------------------------------
# bivariate normal rectangles
#
# bvn_upper is the classic Drezner/Wesolowsky quadrature with Genz's
# double-precision modifications: Gauss-Legendre with 6/12/20 nodes chosen by
# |r|, and a separate expansion for |r| >= 0.925.  Worst-case absolute error
# is below 5e-16, comfortably inside the 1e-12 contract.


def bvn_upper(dh: float, dk: float, r: float) -> float:
    """P(Z1 > dh, Z2 > dk) for standard bivariate normal with correlation r."""
    if dh == math.inf or dk == math.inf:
        return 0.0
    if dh == -math.inf:
        return 1.0 if dk == -math.inf else float(ndtr(-dk))
    if dk == -math.inf:
        return float(ndtr(-dh))
    if r == 0.0:
        return float(ndtr(-dh) * ndtr(-dk))

    tp = 2.0 * math.pi
    h, k = dh, dk
    hk = h * k
    bvn = 0.0
    if abs(r) < 0.3:
        n = 6
    elif abs(r) < 0.75:
        n = 12
    else:
        n = 20
    x, w = _legendre_nodes(n)
    x = 1.0 + x

    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r) / 2.0
        sn = np.sin(asr * x)
        bvn = np.exp((sn * hk - hs) / (1.0 - sn**2)) @ w
        bvn = bvn * asr / tp + ndtr(-h) * ndtr(-k)
        return float(min(1.0, max(0.0, bvn)))

    if r < 0.0:
        k = -k
        hk = -hk
    if abs(r) < 1.0:
        as_ = 1.0 - r * r
        a = math.sqrt(as_)
        bs = (h - k) ** 2
        asr = -(bs / as_ + hk) / 2.0
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 80.0
        if asr > -100.0:
            bvn = a * math.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0
                                       + c * d * as_ * as_)
        if hk > -100.0:
            b = math.sqrt(bs)
            sp = _SQRT_2PI * ndtr(-b / a)
            bvn -= math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
        a = a / 2.0
        xs = np.square(a * x)
        asr = -(bs / xs + hk) / 2.0
        ix = asr > -100.0
        xs = xs[ix]
        sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
        rs = np.sqrt(1.0 - xs)
        ep = np.exp(-(hk / 2.0) * xs / np.square(1.0 + rs)) / rs
        bvn = (a * ((np.exp(asr[ix]) * (sp - ep)) @ w[ix]) - bvn) / tp
    if r > 0.0:
        bvn += ndtr(-max(h, k))
    elif h >= k:
        bvn = -bvn
    else:
        if h < 0.0:
            L = ndtr(k) - ndtr(h)
        else:
            L = ndtr(-h) - ndtr(-k)
        bvn = L - bvn
    return float(min(1.0, max(0.0, bvn)))


@lru_cache(maxsize=8)
def _legendre_nodes(n):
    x, w = roots_legendre(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def bvn_rect(lower, upper, rho: float) -> float:
    """P(lower <= (Z1, Z2) <= upper) under correlation rho, to 1e-12."""
    if not abs(rho) < 1.0:
        raise ValueError(f"correlation must satisfy |rho| < 1, got {rho}")
    xl, yl = float(lower[0]), float(lower[1])
    xu, yu = float(upper[0]), float(upper[1])
    if not (xl < xu and yl < yu):
        raise ValueError("rectangle bounds must satisfy lower < upper")
    p = (bvn_upper(xl, yl, rho) - bvn_upper(xu, yl, rho)
         - bvn_upper(xl, yu, rho) + bvn_upper(xu, yu, rho))
    return float(min(1.0, max(0.0, p)))


# ---------------------------------------------------------------------------
# tetrachoric inversion


def tetrachoric(p11: float, tau_a: float, tau_b: float) -> float:
    """Solve P(Z1 <= tau_a, Z2 <= tau_b; rho) = p11 for rho.

    Safeguarded Newton: the forward map is strictly increasing in rho with
    derivative equal to the bivariate density at (tau_a, tau_b), so Newton
    steps are bracketed by a bisection interval.
    """
    if not (np.isfinite(tau_a) and np.isfinite(tau_b)):
        raise ValueError("tetrachoric thresholds must be finite")
    pa = float(ndtr(tau_a))
    pb = float(ndtr(tau_b))
    frechet_lo = max(0.0, pa + pb - 1.0)
    frechet_hi = min(pa, pb)
    if p11 <= frechet_lo:
        raise ValueError(
            f"joint proportion {p11} at or below the lower Frechet bound "
            f"{frechet_lo} implied by the thresholds"
        )
    if p11 >= frechet_hi:
        raise ValueError(
            f"joint proportion {p11} at or above the upper Frechet bound "
            f"{frechet_hi} implied by the thresholds"
        )

    lo, hi = -1.0 + 1e-14, 1.0 - 1e-14
    rho = 0.0
    f = _cdf2(tau_a, tau_b, rho) - p11
    if f > 0.0:
        hi = rho
    else:
        lo = rho
    for _ in range(200):
        dens = _bvn_density(tau_a, tau_b, rho)
        if dens > 0.0 and np.isfinite(dens):
            step = f / dens
            cand = rho - step
        else:
            cand = math.nan
        if not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        f_cand = _cdf2(tau_a, tau_b, cand) - p11
        if f_cand > 0.0:
            hi = cand
        else:
            lo = cand
        if abs(cand - rho) < 1e-12 or f_cand == 0.0:
            return float(cand)
        rho, f = cand, f_cand
    return float(rho)


def _cdf2(a, b, rho):
    # P(Z1 <= a, Z2 <= b) via the survival-function routine
    return bvn_upper(-a, -b, rho)


def _bvn_density(a, b, rho):
    om = 1.0 - rho * rho
    z = (a * a - 2.0 * rho * a * b + b * b) / om
    return math.exp(-0.5 * z) / (2.0 * math.pi * math.sqrt(om))


# ---------------------------------------------------------------------------
# randomized-lattice QMC for small multivariate rectangles

QMC_DIMENSION_CAP = 12


def _small_primes(limit):
    sieve = np.ones(limit + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(limit**0.5) + 1):
        if sieve[p]:
            sieve[p * p::p] = False
    return np.nonzero(sieve)[0]


def _factorize(n):
    factors = set()
    for p in _small_primes(int(math.isqrt(n)) + 1):
        p = int(p)
        while n % p == 0:
            factors.add(p)
            n //= p
        if n == 1:
            break
    if n != 1:
        factors.add(int(n))
    return sorted(factors)


def _primitive_root(p):
    pm = p - 1
    factors = _factorize(pm)
    n = len(factors)
    r, k = 2, 0
    while k < n:
        d = pm // factors[k]
        if pow(int(r), int(d), int(p)) == 1:
            r += 1
            k = 0
        else:
            k += 1
    return r


@lru_cache(maxsize=64)
def _cbc_lattice(n_dim, n_samples):
    """Rank-1 lattice generator by fast component-by-component construction.

    Returns the generating vector (entries in (0, 1)) and the prime sample
    count actually used (the largest prime <= the request).
    """
    primes = _small_primes(max(n_samples, 7) + 1)
    n_samples = int(primes[-1])
    if n_dim < 1:
        raise ValueError("lattice dimension must be >= 1")
    bt = np.ones(n_dim)
    gm = np.hstack([1.0, 0.8 ** np.arange(n_dim - 1)])
    q = 1.0
    w = 0
    z = np.arange(1, n_dim + 1, dtype=np.int64)
    m = (n_samples - 1) // 2
    g = _primitive_root(n_samples)
    perm = np.ones(m, dtype=np.int64)
    for j in range(m - 1):
        perm[j + 1] = (g * perm[j]) % n_samples
    perm = np.minimum(n_samples - perm, perm)
    pn = perm / n_samples
    c = pn * pn - pn + 1.0 / 6.0
    fc = np.fft.fft(c)
    for s in range(1, n_dim):
        reordered = np.hstack([c[:w + 1][::-1], c[w + 1:m][::-1]])
        q = q * (bt[s - 1] + gm[s - 1] * reordered)
        w = int(np.fft.ifft(fc * np.fft.fft(q)).real.argmin())
        z[s] = perm[w]
    vec = z / n_samples
    vec.setflags(write=False)
    return vec, n_samples


def _sequential_rect(cho, lower, upper, points):
    """Genz sequential-conditioning integrand on a batch of unit-cube points.

    cho is a lower Cholesky factor, bounds are absolute (not yet scaled);
    ``points`` has shape (m-1, n_points) (ignored when m == 1).  Returns the
    per-point product of conditional interval probabilities, shape broadcast
    over the leading axes of ``lower``/``upper``.
    """
    m = cho.shape[0]
    npts = points.shape[1]
    c = ndtr(lower[..., 0] / cho[0, 0])[..., None] + np.zeros(npts)
    d = ndtr(upper[..., 0] / cho[0, 0])[..., None] + np.zeros(npts)
    dc = d - c
    pv = dc.copy()
    ys = []
    for i in range(1, m):
        arg = np.clip(c + points[i - 1] * dc, 1e-300, 1.0 - 1e-16)
        ys.append(ndtri(arg))
        s = cho[i, 0] * ys[0]
        for j in range(1, i):
            s = s + cho[i, j] * ys[j]
        c = ndtr((lower[..., i:i + 1] - s) / cho[i, i])
        d = ndtr((upper[..., i:i + 1] - s) / cho[i, i])
        dc = np.maximum(d - c, 0.0)
        pv = pv * dc
    return pv


def rect_probs_lattice(corr_values, lower, upper, n_points, shifts):
    """Rectangle probabilities for a batch of bounds on a fixed lattice.

    All rectangles share one correlation matrix; ``lower``/``upper`` have
    shape (..., m).  ``shifts`` is an (n_shifts, m-1) array of lattice
    offsets in [0, 1).  The point set is deterministic given (m, n_points,
    shifts), the Cholesky order is the natural one, and evaluation is smooth
    in the bounds and correlations, which keeps finite differences of the
    result clean.  Returns (probabilities, spread) where spread is the
    standard error across shifts (zero when only one shift is supplied).
    """
    corr = np.asarray(corr_values, dtype=float)
    m = corr.shape[0]
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    cho = np.linalg.cholesky(corr)
    if m == 1:
        p = ndtr(upper[..., 0]) - ndtr(lower[..., 0])
        return p, np.zeros_like(p)
    q, n_points = _cbc_lattice(m - 1, n_points)
    j = np.arange(1, n_points + 1, dtype=float)
    base = j[None, :] * q[:, None]  # (m-1, n_points)
    ests = []
    for shift in shifts:
        x = base + np.asarray(shift, dtype=float)[:m - 1, None]
        x -= np.floor(x)
        x = np.abs(2.0 * x - 1.0)  # tent periodization
        pv = _sequential_rect(cho, lower, upper, x)
        ests.append(pv.mean(axis=-1))
    ests = np.stack(ests, axis=0)
    prob = ests.mean(axis=0)
    if ests.shape[0] > 1:
        spread = ests.std(axis=0, ddof=1) / math.sqrt(ests.shape[0])
    else:
        spread = np.zeros_like(prob)
    return prob, spread


@dataclass(frozen=True)
class QmcResult:
    probability: float
    error: float
    n_points: int
    attained: bool


def mvn_rect_qmc(lower, upper, corr: CorrelationMatrix, accuracy: float = 1e-6,
                 seed: int = 0, max_points: int = 2_000_000) -> QmcResult:
    """Rectangle probability for an m-dimensional normal, m <= 12.

    Randomized rank-1 lattice with a variable-reordered Cholesky transform;
    the sample budget grows until the estimated absolute error falls below
    ``accuracy``.  Deterministic for a fixed seed.  If the budget runs out
    first the best estimate is returned with ``attained=False``.
    """
    corr_arr = corr.values if isinstance(corr, CorrelationMatrix) else \
        CorrelationMatrix(corr).values
    m = corr_arr.shape[0]
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != (m,) or upper.shape != (m,):
        raise ValueError("bounds must be vectors matching the matrix dimension")
    if np.any(lower >= upper):
        raise ValueError("rectangle bounds must satisfy lower < upper")
    if m > QMC_DIMENSION_CAP:
        raise ValueError(
            f"dimension {m} exceeds the QMC cap {QMC_DIMENSION_CAP}; "
            "use the pairwise estimator for larger designs"
        )
    if m == 1:
        p = float(ndtr(upper[0]) - ndtr(lower[0]))
        return QmcResult(p, 1e-15, 1, True)

    cho, lo, hi = _permuted_cholesky(corr_arr, lower, upper)
    rng = np.random.default_rng(seed)
    n_batches = 10
    prob, est_error = 0.0, 1.0
    n_used = 0
    n_request = 128 * m
    while True:
        q, n_pts = _cbc_lattice(m - 1, n_request)
        j = np.arange(1, n_pts + 1, dtype=float)
        base = j[None, :] * q[:, None]
        shifts = rng.random((n_batches, m - 1))
        batch = np.empty(n_batches)
        for b in range(n_batches):
            x = base + shifts[b][:, None]
            x -= np.floor(x)
            x = np.abs(2.0 * x - 1.0)
            pv = _scaled_sequential_rect(cho, lo, hi, x)
            batch[b] = pv.mean()
        pi = batch.mean()
        ei = 3.0 * batch.std(ddof=1) / math.sqrt(n_batches)
        n_used += n_pts * n_batches
        wt = 1.0 / (1.0 + (ei / est_error) ** 2) if est_error > 0 else 0.0
        prob += wt * (pi - prob)
        est_error = math.sqrt(wt) * ei if wt > 0 else ei
        if est_error <= accuracy:
            return QmcResult(float(min(1.0, max(0.0, prob))), float(est_error),
                             n_used, True)
        if n_used >= max_points:
            return QmcResult(float(min(1.0, max(0.0, prob))), float(est_error),
                             n_used, False)
        n_request = int(round(math.sqrt(2.0) * n_request))


def _scaled_sequential_rect(cho, lo, hi, points):
    """Sequential integrand for a pre-scaled permuted Cholesky factor.

    ``cho`` rows are already divided by the conditional standard deviations
    (unit diagonal), matching _permuted_cholesky output.
    """
    n = cho.shape[0]
    npts = points.shape[1]
    c = np.full(npts, ndtr(lo[0]))
    d = np.full(npts, ndtr(hi[0]))
    dc = d - c
    pv = dc.copy()
    y = np.zeros((n - 1, npts))
    for i in range(1, n):
        arg = np.clip(c + points[i - 1] * dc, 1e-300, 1.0 - 1e-16)
        y[i - 1] = ndtri(arg)
        s = cho[i, :i] @ y[:i]
        c = ndtr(lo[i] - s)
        d = ndtr(hi[i] - s)
        dc = np.maximum(d - c, 0.0)
        pv = pv * dc
    return pv


def _permuted_cholesky(covar, low, high, tol=1e-10):
    """Scaled, variable-reordered Cholesky factor with transformed bounds.

    At each elimination step the variable with the smallest conditional
    interval probability is pivoted next, which concentrates the sequential
    transform's variation in the early dimensions.  Rows and bounds come out
    scaled by the conditional standard deviations (unit diagonal).
    """
    cho = np.array(covar, dtype=float)
    new_lo = np.array(low, dtype=float)
    new_hi = np.array(high, dtype=float)
    n = cho.shape[0]
    dc = np.sqrt(np.maximum(np.diag(cho), 0.0))
    dc[dc == 0.0] = 1.0
    new_lo /= dc
    new_hi /= dc
    cho /= dc
    cho /= dc[:, None]

    y = np.zeros(n)
    for k in range(n):
        epk = (k + 1) * tol
        im = k
        ck = 0.0
        dem = 1.0
        s = 0.0
        lo_m = hi_m = 0.0
        for i in range(k, n):
            if cho[i, i] > tol:
                ci = math.sqrt(cho[i, i])
                if i > 0:
                    s = cho[i, :k] @ y[:k]
                lo_i = (new_lo[i] - s) / ci
                hi_i = (new_hi[i] - s) / ci
                de = ndtr(hi_i) - ndtr(lo_i)
                if de <= dem:
                    ck = ci
                    dem = de
                    lo_m, hi_m = lo_i, hi_i
                    im = i
        if im > k:
            cho[im, im], cho[k, k] = cho[k, k], cho[im, im]
            _swap(cho, np.s_[im, :k], np.s_[k, :k])
            _swap(cho, np.s_[im + 1:, im], np.s_[im + 1:, k])
            _swap(cho, np.s_[k + 1:im, k], np.s_[im, k + 1:im])
            _swap(new_lo, k, im)
            _swap(new_hi, k, im)
        if ck > epk:
            cho[k, k] = ck
            cho[k, k + 1:] = 0.0
            for i in range(k + 1, n):
                cho[i, k] /= ck
                cho[i, k + 1:i + 1] -= cho[i, k] * cho[k + 1:i + 1, k]
            if abs(dem) > tol:
                y[k] = ((math.exp(-lo_m * lo_m / 2) - math.exp(-hi_m * hi_m / 2))
                        / (_SQRT_2PI * dem))
            else:
                y[k] = (lo_m + hi_m) / 2
                if lo_m < -10:
                    y[k] = hi_m
                elif hi_m > 10:
                    y[k] = lo_m
            cho[k, :k + 1] /= ck
            new_lo[k] /= ck
            new_hi[k] /= ck
        else:
            cho[k:, k] = 0.0
            y[k] = (new_lo[k] + new_hi[k]) / 2
    return cho, new_lo, new_hi


def _swap(x, slc1, slc2):
    t = np.array(x[slc1], copy=True)
    x[slc1] = x[slc2]
    x[slc2] = t


# ---------------------------------------------------------------------------
# finite differences


def fd_gradient(objective, x, rel_step=1e-6):
    """Central-difference gradient with per-coordinate relative steps."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        for attempt in range(3):
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            fp = objective(xp)
            fm = objective(xm)
            if np.isfinite(fp) and np.isfinite(fm):
                g[i] = (fp - fm) / (2.0 * h)
                break
            h *= 1e-2
        else:
            g[i] = np.nan
    return g


def numeric_hessian(objective, point, step=1e-4):
    """Central-difference Hessian, symmetrized; NaN entries propagate."""
    x = np.asarray(point, dtype=float)
    k = x.size
    h = step * np.maximum(1.0, np.abs(x))
    H = np.empty((k, k))
    f0 = objective(x)
    for i in range(k):
        xp = x.copy(); xp[i] += h[i]
        xm = x.copy(); xm[i] -= h[i]
        fp, fm = objective(xp), objective(xm)
        H[i, i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i])
        for jj in range(i + 1, k):
            xpp = x.copy(); xpp[i] += h[i]; xpp[jj] += h[jj]
            xpm = x.copy(); xpm[i] += h[i]; xpm[jj] -= h[jj]
            xmp = x.copy(); xmp[i] -= h[i]; xmp[jj] += h[jj]
            xmm = x.copy(); xmm[i] -= h[i]; xmm[jj] -= h[jj]
            H[i, jj] = (objective(xpp) - objective(xpm)
                        - objective(xmp) + objective(xmm)) / (4.0 * h[i] * h[jj])
            H[jj, i] = H[i, jj]
    return 0.5 * (H + H.T)


def _hessian_from_gradient(gradient, x, step=1e-6):
    """Jacobian of an analytic gradient by central differences, symmetrized."""
    x = np.asarray(x, dtype=float)
    k = x.size
    H = np.empty((k, k))
    for i in range(k):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        H[:, i] = (gradient(xp) - gradient(xm)) / (2.0 * h)
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# quasi-Newton maximizer


@dataclass
class MaximizeResult:
    x: np.ndarray
    value: float
    grad_norm: float
    hessian_negdef: bool
    iterations: int
    converged: bool
    hessian: np.ndarray | None = None
    message: str = ""
    n_evals: int = 0


def maximize(objective, start, config: OptimizerConfig | None = None,
             gradient=None, compute_hessian: bool = True) -> MaximizeResult:
    """Quasi-Newton (BFGS) ascent with Armijo backtracking.

    The line search halves the step on non-finite objective values as well
    as on insufficient increase; persistent failure returns the last iterate
    with ``converged=False`` and a message.  Unless disabled, the numeric
    Hessian at the final point is computed and its negative definiteness is
    reported -- fitters surface that flag because a maximizer stopping where
    the Hessian is not negative definite is a known failure mode here.
    """
    if config is None:
        config = OptimizerConfig()
    x = np.array(start, dtype=float)
    k = x.size
    if k == 0:
        val = float(objective(x))
        return MaximizeResult(x=x, value=val, grad_norm=0.0,
                              hessian_negdef=True, iterations=0,
                              converged=True, hessian=np.zeros((0, 0)),
                              n_evals=1)
    n_evals = 0

    def f(z):
        nonlocal n_evals
        n_evals += 1
        return float(objective(z))

    grad = (lambda z: np.asarray(gradient(z), dtype=float)) if gradient \
        else (lambda z: fd_gradient(objective, z, config.fd_step))

    fx = f(x)
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    g = grad(x)
    B = np.eye(k)
    converged = False
    message = ""
    it = 0
    for it in range(1, config.max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if np.all(np.isfinite(g)) else math.inf
        if gnorm < config.gradient_tol:
            converged = True
            break
        if not np.all(np.isfinite(g)):
            message = "gradient evaluation produced non-finite entries"
            break
        d = B @ g
        gd = float(g @ d)
        if gd <= 0.0:
            B = np.eye(k)
            d = g.copy()
            gd = float(g @ g)
        t = 1.0
        halvings = 0
        fx_new = -math.inf
        while True:
            cand = x + t * d
            fx_new = f(cand)
            if np.isfinite(fx_new) and fx_new >= fx + 1e-4 * t * gd:
                break
            halvings += 1
            if halvings > config.step_halving_limit:
                break
            t *= 0.5
        if halvings > config.step_halving_limit:
            message = ("line search failed after "
                       f"{config.step_halving_limit} step halvings")
            break
        x_new = x + t * d
        g_new = grad(x_new)
        s = x_new - x
        yv = g - g_new  # descent-space difference for the inverse update
        sy = float(s @ yv)
        if np.all(np.isfinite(yv)) and \
                sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho_ = 1.0 / sy
            sB = np.outer(s, yv)
            B = (np.eye(k) - rho_ * sB) @ B @ (np.eye(k) - rho_ * sB.T) \
                + rho_ * np.outer(s, s)
        x, fx, g = x_new, fx_new, g_new
    else:
        message = "iteration limit reached"

    gnorm = float(np.max(np.abs(g))) if np.all(np.isfinite(g)) else math.inf
    if converged is False and gnorm < config.gradient_tol:
        converged = True
        message = ""

    hess = None
    negdef = False
    if compute_hessian:
        if gradient is not None:
            hess = _hessian_from_gradient(
                lambda z: np.asarray(gradient(z), dtype=float), x,
                config.fd_step)
        else:
            hess = numeric_hessian(objective, x, config.hessian_fd_step)
        if np.all(np.isfinite(hess)):
            eigs = np.linalg.eigvalsh(hess)
            # A parameter pushed to the edge of its range leaves a flat
            # direction whose eigenvalue is numerically zero; only flag
            # curvature that is positive relative to the dominant scale.
            tol = 1e-6 * max(1.0, float(abs(eigs[0])))
            negdef = bool(eigs[-1] < tol)
        else:
            negdef = False
    return MaximizeResult(x=x, value=fx, grad_norm=gnorm,
                          hessian_negdef=negdef, iterations=it,
                          converged=converged, hessian=hess,
                          message=message, n_evals=n_evals)
