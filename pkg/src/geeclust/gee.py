"""Working-correlation GEE solver for clustered outcomes.

Fits marginal regression coefficients by modified Fisher scoring on the
clustered estimating equation

    sum_i D_i' V_i^{-1} (y_i - mu_i) = 0,   V_i = phi A_i^{1/2} R_i A_i^{1/2},

alternating a coefficient step with moment refreshes of the dispersion and
working-correlation parameters.  Six correlation patterns are supported:
independent, M-dependent, exchangeable, autoregressive AR-1, unstructured,
and a fixed user-supplied matrix.  Both the model-based covariance (inverse
information) and the robust sandwich covariance are produced; the sandwich
stays consistent under correlation misspecification as long as the mean
model is right, so reported standard errors use it.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import glm
from .errors import (
    InvalidAlpha,
    NoConvergence,
    NoPairs,
    NotPositiveDefinite,
    NegativeVariance,
    PerfectSeparation,
    RankDeficient,
    SizeExceedsTemplate,
    UnderdeterminedLag,
)
from .linalg import spd_factor, spd_inverse, spd_solve

ALPHA_CLAMP = 0.99


def _check_alpha(value):
    a = float(value)
    if not -1.0 < a < 1.0:
        raise InvalidAlpha(f"correlation {a} outside (-1, 1)")
    return a


@dataclass(frozen=True)
class Independent:
    kind = "independent"


@dataclass(frozen=True)
class Exchangeable:
    """Constant correlation alpha between any two observations of a cluster."""

    alpha: float = 0.0

    kind = "exchangeable"

    def __post_init__(self):
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class MDependent:
    """Correlation alpha_s at occasion lag s, zero beyond lag m."""

    m: int = 2
    alphas: tuple = None

    kind = "mdependent"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        alphas = self.alphas if self.alphas is not None else (0.0,) * self.m
        alphas = tuple(_check_alpha(a) for a in alphas)
        if len(alphas) != self.m:
            raise ValueError(f"need {self.m} lag correlations, got {len(alphas)}")
        object.__setattr__(self, "alphas", alphas)


@dataclass(frozen=True)
class AR1:
    """Correlation alpha^s at occasion lag s."""

    alpha: float = 0.0

    kind = "ar1"

    def __post_init__(self):
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class Unstructured:
    """Free symmetric unit-diagonal template over `size` occasions."""

    size: int
    alphas: np.ndarray = None

    kind = "unstructured"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("template size must be >= 1")
        if self.alphas is None:
            a = np.eye(self.size)
        else:
            a = np.array(self.alphas, dtype=float)
        if a.shape != (self.size, self.size):
            raise ValueError(f"template must be {self.size}x{self.size}")
        if np.max(np.abs(a - a.T)) > 1e-12:
            raise ValueError("template must be symmetric")
        if np.max(np.abs(np.diag(a) - 1.0)) > 1e-12:
            raise ValueError("template diagonal must be 1")
        off = a[~np.eye(self.size, dtype=bool)]
        if off.size and (np.min(off) <= -1.0 or np.max(off) >= 1.0):
            raise InvalidAlpha("off-diagonal entries must lie in (-1, 1)")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)


@dataclass(frozen=True)
class Fixed:
    """User-supplied working correlation; must be SPD with unit diagonal."""

    matrix: np.ndarray

    kind = "fixed"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("fixed correlation must be square")
        if np.max(np.abs(np.diag(m) - 1.0)) > 1e-12:
            raise ValueError("fixed correlation diagonal must be 1")
        spd_factor(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


CorrelationStructure = Union[Independent, Exchangeable, MDependent, AR1, Unstructured, Fixed]

STRUCTURE_KINDS = ("independent", "mdependent", "exchangeable", "ar1", "unstructured", "fixed")


def realize_correlation(cs, size, positions=None) -> np.ndarray:
    """Materialize the working correlation for one cluster.

    `positions` are the cluster's occasion indices (1-based); they default to
    1..size.  Lags for the serial structures are occasion differences, and
    the unstructured/fixed templates are subset at those occasions.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if positions is None:
        positions = np.arange(1, size + 1)
    else:
        positions = np.asarray(positions, dtype=int)
        if positions.shape != (size,):
            raise ValueError("positions must have length `size`")
    if isinstance(cs, Independent):
        return np.eye(size)
    if isinstance(cs, Exchangeable):
        r = np.full((size, size), cs.alpha)
        np.fill_diagonal(r, 1.0)
        return r
    lag = np.abs(positions[:, None] - positions[None, :])
    if isinstance(cs, AR1):
        return np.asarray(cs.alpha, dtype=float) ** lag
    if isinstance(cs, MDependent):
        r = np.eye(size)
        for s in range(1, cs.m + 1):
            r[lag == s] = cs.alphas[s - 1]
        return r
    if isinstance(cs, (Unstructured, Fixed)):
        template = cs.alphas if isinstance(cs, Unstructured) else cs.matrix
        if np.max(positions) > cs.size:
            raise SizeExceedsTemplate(
                f"occasion {int(np.max(positions))} exceeds template size {cs.size}"
            )
        index = positions - 1
        return template[np.ix_(index, index)]
    raise TypeError(f"unknown correlation structure {cs!r}")


def estimate_phi(residuals, n_total, p, fix_to_one=False) -> float:
    """Moment estimate of the dispersion: sum r^2 / (n_total - p)."""
    if fix_to_one:
        return 1.0
    residuals = np.asarray(residuals, dtype=float)
    return float(np.sum(residuals**2) / (n_total - p))


def _clamp(a):
    return float(np.clip(a, -ALPHA_CLAMP, ALPHA_CLAMP))


def _lag_moment(cluster_residuals, s, phi, p, subtract_p, label):
    """Average residual cross-products at occasion lag ``s``."""
    num = 0.0
    count = 0
    for resid, positions in cluster_residuals:
        lag = np.abs(positions[:, None] - positions[None, :])
        jj, kk = np.nonzero(np.triu(lag == s, k=1))
        num += float(np.sum(resid[jj] * resid[kk]))
        count += len(jj)
    if count == 0:
        warnings.warn(f"no residual pairs at {label}; estimate set to 0",
                      UnderdeterminedLag, stacklevel=3)
        return 0.0
    denom = count - p if subtract_p else count
    if denom <= 0:
        warnings.warn(
            f"too few pairs at {label} to subtract p; using raw pair count",
            UnderdeterminedLag, stacklevel=3)
        denom = count
    return _clamp(num / (denom * phi))


def _ensure_pd_template(template):
    """Shrink a correlation template toward identity until it is PD.

    Available-pairs moment estimates of an unstructured template need not be
    positive definite when some occasion pairs are observed in few clusters;
    shrinking the off-diagonal block preserves the unit diagonal and
    symmetry while restoring definiteness (every principal submatrix of a PD
    matrix is PD, so realized per-cluster blocks stay usable).
    """
    t = template.shape[0]
    lam = 1.0
    candidate = template
    for _ in range(120):
        try:
            spd_factor(candidate)
            return candidate, lam
        except NotPositiveDefinite:
            lam *= 0.95
            candidate = lam * template + (1.0 - lam) * np.eye(t)
    raise NotPositiveDefinite("unstructured template cannot be made PD")


def estimate_alpha(cs, cluster_residuals, phi, p, subtract_p=True):
    """Moment re-estimate of the working-correlation parameters.

    Parameters
    ----------
    cs : CorrelationStructure
        Current structure; fixes the kind (and template size / lag depth)
        of the estimate.
    cluster_residuals : sequence of (residuals, positions)
        Standardized Pearson residuals per cluster with their occasion
        indices.
    phi : float
        Current dispersion estimate.
    p : int
        Number of regression parameters, subtracted from the pair count in
        the denominator unless `subtract_p` is False.

    Returns
    -------
    CorrelationStructure
        New instance of the same kind; estimates are clamped to
        [-0.99, 0.99], and the exchangeable estimate is additionally floored
        at -1/(max cluster size - 1) to keep realized matrices SPD.
    """
    cluster_residuals = [
        (np.asarray(r, dtype=float), np.asarray(q, dtype=int))
        for r, q in cluster_residuals
    ]
    sizes = [len(r) for r, _ in cluster_residuals]
    n_pairs = sum(n * (n - 1) // 2 for n in sizes)
    if isinstance(cs, (Independent, Fixed)):
        return cs
    if n_pairs == 0:
        raise NoPairs("every cluster has a single row; no pairs to average")

    if isinstance(cs, Exchangeable):
        num = 0.0
        for resid, _ in cluster_residuals:
            num += (float(np.sum(resid)) ** 2 - float(np.sum(resid**2))) / 2.0
        denom = n_pairs - p if subtract_p else n_pairs
        if denom <= 0:
            warnings.warn(
                "too few within-cluster pairs to subtract p; using raw pair count",
                UnderdeterminedLag, stacklevel=2)
            denom = n_pairs
        alpha = _clamp(num / (denom * phi))
        floor = -1.0 / (max(sizes) - 1) + 1e-6
        return Exchangeable(max(alpha, floor))

    if isinstance(cs, AR1):
        return AR1(_lag_moment(cluster_residuals, 1, phi, p, subtract_p, "lag 1"))

    if isinstance(cs, MDependent):
        alphas = tuple(
            _lag_moment(cluster_residuals, s, phi, p, subtract_p, f"lag {s}")
            for s in range(1, cs.m + 1)
        )
        return MDependent(cs.m, alphas)

    if isinstance(cs, Unstructured):
        # occasion-indexed residual layout: products of zeros drop the
        # clusters that miss either occasion, giving available-pairs sums
        t = cs.size
        z = np.zeros((len(cluster_residuals), t))
        mask = np.zeros((len(cluster_residuals), t))
        for i, (resid, positions) in enumerate(cluster_residuals):
            z[i, positions - 1] = resid
            mask[i, positions - 1] = 1.0
        cross = z.T @ z
        counts = mask.T @ mask
        off = ~np.eye(t, dtype=bool)
        never = off & (counts == 0)
        denom = counts - p if subtract_p else counts.copy()
        weak = off & (counts > 0) & (denom <= 0)
        if never.any():
            warnings.warn(
                f"{int(never.sum() // 2)} occasion pairs are never observed "
                "together; entries set to 0", UnderdeterminedLag, stacklevel=2)
        if weak.any():
            warnings.warn(
                f"{int(weak.sum() // 2)} occasion pairs have too few clusters "
                "to subtract p; using raw counts", UnderdeterminedLag,
                stacklevel=2)
            denom[weak] = counts[weak]
        template = np.eye(t)
        usable = off & (counts > 0)
        template[usable] = np.clip(
            cross[usable] / (denom[usable] * phi), -ALPHA_CLAMP, ALPHA_CLAMP
        )
        template, lam = _ensure_pd_template(template)
        if lam < 1.0:
            warnings.warn(
                f"unstructured template shrunk toward identity (factor {lam:.3f}) "
                "to stay positive definite",
                UnderdeterminedLag, stacklevel=2)
        return Unstructured(t, template)

    raise TypeError(f"unknown correlation structure {cs!r}")


@dataclass(frozen=True)
class GeeOptions:
    """Solver options.

    fix_phi=None keeps the dispersion at 1 for binomial responses and
    estimates it otherwise; update_alpha=False freezes the correlation
    parameters at their supplied values (used for fixed-alpha fits and
    oracle comparisons).
    """

    tol: float = 1e-8
    max_iter: int = 60
    fix_phi: Optional[bool] = None
    update_alpha: bool = True
    subtract_p: bool = True


@dataclass(frozen=True)
class GeeFit:
    """Converged (or partial) GEE solution."""

    beta: np.ndarray
    structure: CorrelationStructure
    alpha_estimates: object
    phi: float
    cov_model_based: np.ndarray
    cov_robust: np.ndarray
    quasi_likelihood_independence: float
    iterations: int
    converged: bool
    column_labels: tuple = field(default_factory=tuple)


def _cluster_views(ds):
    views = []
    start = 0
    for c in ds.clusters:
        n = c.size
        views.append((slice(start, start + n), np.asarray(c.positions, dtype=int)))
        start += n
    return views


def _alpha_view(cs):
    if isinstance(cs, Independent):
        return None
    if isinstance(cs, (Exchangeable, AR1)):
        return cs.alpha
    if isinstance(cs, MDependent):
        return cs.alphas
    if isinstance(cs, Unstructured):
        return cs.alphas
    return cs.matrix


def independence_information(x, ds, f, beta, phi=1.0) -> np.ndarray:
    """Information matrix under working independence, (1/phi) sum D'A^{-1}D.

    Evaluated at `beta`; used as the penalty weight inside QIC.
    """
    values = np.asarray(getattr(x, "values", x), dtype=float)
    mu = glm.link_inverse(f, values @ np.asarray(beta, dtype=float))
    w = glm.mean_derivative(f, mu) ** 2 / glm.variance_fn(f, mu)
    return (values.T @ (values * w[:, None])) / phi


def fit_gee(x, ds, f, cs, options: GeeOptions = None) -> GeeFit:
    """Fit a marginal model by modified Fisher scoring.

    Parameters
    ----------
    x : DesignMatrix
        Row-aligned with `ds` (clusters in order, rows in cluster order).
    ds : ClusteredDataset
        Supplies the response, cluster boundaries, and occasion indices.
    f : Family
        Distribution/link pair.
    cs : CorrelationStructure
        Working-correlation choice; parameters are re-estimated by moments
        each iteration unless options.update_alpha is False.

    Returns
    -------
    GeeFit
        With both covariance estimates: model-based
        [sum D'V^{-1}D]^{-1} and the robust sandwich M^{-1} B M^{-1}.

    Raises
    ------
    NoConvergence
        When the coefficient step never drops below options.tol; the
        exception carries the partial fit in its `fit` attribute.
    """
    opts = options or GeeOptions()
    values = np.asarray(getattr(x, "values", x), dtype=float)
    labels = tuple(getattr(x, "column_labels", ()))
    y = ds.response_vector()
    n, p = values.shape
    if n != ds.n_total:
        raise ValueError(f"design has {n} rows but dataset has {ds.n_total}")
    if np.linalg.matrix_rank(values) < p:
        raise RankDeficient("design matrix is rank deficient")
    views = _cluster_views(ds)
    fix_phi = opts.fix_phi if opts.fix_phi is not None else f.distribution == "binomial"

    try:
        beta = glm.irls_fit(values, y, f).beta.copy()
    except NoConvergence as exc:
        beta = exc.fit.beta.copy()

    def moments(beta):
        mu = glm.link_inverse(f, values @ beta)
        resid = (y - mu) / np.sqrt(glm.variance_fn(f, mu))
        return mu, resid

    def refresh(cs, beta):
        mu, resid = moments(beta)
        phi = estimate_phi(resid, n, p, fix_to_one=fix_phi)
        if opts.update_alpha and not isinstance(cs, (Independent, Fixed)):
            grouped = [(resid[sl], pos) for sl, pos in views]
            try:
                cs = estimate_alpha(cs, grouped, phi, p, subtract_p=opts.subtract_p)
            except NoPairs:
                warnings.warn(
                    "all clusters are singletons; correlation parameters kept",
                    UnderdeterminedLag, stacklevel=2)
        return cs, phi

    def assemble(beta, cs, phi):
        """One pass over clusters: information M, score s, sandwich meat B."""
        mu = glm.link_inverse(f, values @ beta)
        if f.distribution == "binomial":
            boundary = np.any(mu <= glm.BOUNDARY_EPS) or np.any(mu >= 1.0 - glm.BOUNDARY_EPS)
        else:
            boundary = False
        a = glm.variance_fn(f, mu)
        if np.any(a == 0.0):
            raise PerfectSeparation(
                "a fitted mean sits exactly on the boundary; the working "
                "covariance is singular"
            )
        dmu = glm.mean_derivative(f, mu)
        info = np.zeros((p, p))
        score = np.zeros(p)
        meat = np.zeros((p, p))
        for sl, pos in views:
            x_i = values[sl]
            d_i = dmu[sl][:, None] * x_i
            s_i = np.sqrt(a[sl])
            r_i = realize_correlation(cs, len(pos), pos)
            v_i = phi * np.outer(s_i, s_i) * r_i
            factor = spd_factor(v_i)
            vinv_d = spd_solve(factor, d_i)
            vinv_r = spd_solve(factor, y[sl] - mu[sl])
            info += d_i.T @ vinv_d
            g_i = d_i.T @ vinv_r
            score += g_i
            meat += np.outer(g_i, g_i)
        return info, score, meat, boundary

    cs_current, phi = refresh(cs, beta)
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        info, score, _, boundary = assemble(beta, cs_current, phi)
        try:
            delta = spd_solve(spd_factor(info), score)
        except NotPositiveDefinite:
            raise RankDeficient("GEE information matrix is not positive definite") from None
        beta = beta + delta
        step = float(np.max(np.abs(delta)))
        if boundary and step >= opts.tol:
            raise PerfectSeparation(
                "fitted probabilities pinned at 0/1 before the step converged"
            )
        cs_current, phi = refresh(cs_current, beta)
        if step < opts.tol:
            converged = True
            break

    info, _, meat, _ = assemble(beta, cs_current, phi)
    minv = spd_inverse(spd_factor(info))
    cov_robust = minv @ meat @ minv
    cov_robust = (cov_robust + cov_robust.T) / 2.0
    fit = GeeFit(
        beta=beta,
        structure=cs_current,
        alpha_estimates=_alpha_view(cs_current),
        phi=phi,
        cov_model_based=minv,
        cov_robust=cov_robust,
        quasi_likelihood_independence=glm.quasi_likelihood(values, beta, y, f),
        iterations=iterations,
        converged=converged,
        column_labels=labels,
    )
    if not converged:
        raise NoConvergence(
            f"GEE did not converge in {opts.max_iter} iterations", fit=fit
        )
    return fit


def robust_se(fit: GeeFit) -> np.ndarray:
    """Standard errors: square roots of the sandwich-covariance diagonal."""
    diag = np.diag(fit.cov_robust).copy()
    if np.any(diag < -1e-10):
        raise NegativeVariance(f"negative variance on the diagonal: {diag.min()}")
    return np.sqrt(np.clip(diag, 0.0, None))
