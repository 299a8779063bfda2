import warnings

import numpy as np
import pytest
from scipy.special import expit

from geeclust import (
    AR1,
    Cluster,
    ClusteredDataset,
    Exchangeable,
    Family,
    Fixed,
    GeeOptions,
    Independent,
    MDependent,
    Row,
    TermCoding,
    Unstructured,
    build_design,
    estimate_alpha,
    estimate_phi,
    fit_gee,
    irls_fit,
    realize_correlation,
    robust_se,
)
from geeclust.errors import (
    InvalidAlpha,
    NoConvergence,
    NoPairs,
    PerfectSeparation,
    RankDeficient,
    SizeExceedsTemplate,
    UnderdeterminedLag,
)
from geeclust.gee import GeeFit

from conftest import MARGINAL_INTERCEPT, MARGINAL_SLOPE, MARGINAL_OR

BINOMIAL = Family("binomial", "logit")


def dataset_from_arrays(cluster_sizes, x_values, y_values, positions=None):
    """Small binomial dataset with one covariate named 'x'."""
    clusters = []
    start = 0
    for cid, size in enumerate(cluster_sizes, start=1):
        rows = []
        for j in range(size):
            pos = positions[start + j] if positions is not None else j + 1
            rows.append(
                Row(int(pos), float(y_values[start + j]), {"x": float(x_values[start + j])})
            )
        rows.sort(key=lambda r: r.position)
        clusters.append(Cluster(str(cid), tuple(rows)))
        start += size
    return ClusteredDataset(tuple(clusters), ("x",), "ID", "Y", None)


def _probit(p):
    from scipy.stats import norm

    return norm.ppf(p)


# ------------------------------------------------------- realize_correlation

def test_realize_independent():
    assert np.allclose(realize_correlation(Independent(), 3), np.eye(3))


def test_realize_exchangeable():
    r = realize_correlation(Exchangeable(0.4), 3)
    expected = np.array([[1.0, 0.4, 0.4], [0.4, 1.0, 0.4], [0.4, 0.4, 1.0]])
    assert np.allclose(r, expected)
    assert np.allclose(realize_correlation(Exchangeable(0.4), 1), [[1.0]])


def test_realize_ar1_powers():
    r = realize_correlation(AR1(0.5), 3)
    expected = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
    assert np.allclose(r, expected)


def test_realize_ar1_with_position_gaps():
    r = realize_correlation(AR1(0.5), 2, positions=[2, 5])
    assert r[0, 1] == pytest.approx(0.5**3)


def test_realize_mdependent_zero_beyond_m():
    r = realize_correlation(MDependent(2, (0.3, 0.1)), 4)
    expected = np.array(
        [
            [1.0, 0.3, 0.1, 0.0],
            [0.3, 1.0, 0.3, 0.1],
            [0.1, 0.3, 1.0, 0.3],
            [0.0, 0.1, 0.3, 1.0],
        ]
    )
    assert np.allclose(r, expected)


def test_realize_unstructured_subsets_template():
    template = np.eye(3)
    template[0, 2] = template[2, 0] = 0.7
    template[0, 1] = template[1, 0] = 0.2
    template[1, 2] = template[2, 1] = 0.4
    cs = Unstructured(3, template)
    r = realize_correlation(cs, 2, positions=[1, 3])
    assert np.allclose(r, [[1.0, 0.7], [0.7, 1.0]])


def test_realize_fixed_subsets_matrix():
    m = np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.1], [0.2, 0.1, 1.0]])
    r = realize_correlation(Fixed(m), 2, positions=[2, 3])
    assert np.allclose(r, [[1.0, 0.1], [0.1, 1.0]])


def test_realize_size_exceeds_template():
    with pytest.raises(SizeExceedsTemplate):
        realize_correlation(Unstructured(2), 3)


def test_invalid_alpha_rejected():
    with pytest.raises(InvalidAlpha):
        Exchangeable(1.0)
    with pytest.raises(InvalidAlpha):
        AR1(-1.5)


# ---------------------------------------------------------------- estimate_phi

def test_phi_fixed_to_one():
    assert estimate_phi([2.0, -3.0], 2, 0, fix_to_one=True) == 1.0


def test_phi_zero_residuals():
    assert estimate_phi(np.zeros(6), 6, 2) == 0.0


def test_phi_direct_formula():
    assert estimate_phi([1.0, -1.0, 1.0, -1.0], 4, 2) == pytest.approx(2.0)


# -------------------------------------------------------------- estimate_alpha

def test_alpha_exchangeable_identical_residuals_clamped():
    # identical residuals inside every cluster push the moment to the
    # perfect-correlation side; the estimate is clamped at 0.99
    grouped = [(np.array([2.0, 2.0]), np.array([1, 2])),
               (np.array([0.5, 0.5, 0.5]), np.array([1, 2, 3]))]
    cs = estimate_alpha(Exchangeable(), grouped, phi=1.0, p=0)
    assert cs.alpha == pytest.approx(0.99)


def test_alpha_exchangeable_hand_value():
    # residual pairs (1,1) and (-1,-1): numerator 2 over 2 pairs -> 1, clamped
    grouped = [(np.array([1.0, 1.0]), np.array([1, 2])),
               (np.array([-1.0, -1.0]), np.array([1, 2]))]
    cs = estimate_alpha(Exchangeable(), grouped, phi=1.0, p=0)
    assert cs.alpha == pytest.approx(0.99)


def test_alpha_independent_residuals_near_zero():
    rng = np.random.default_rng(42)
    grouped = [(rng.standard_normal(2), np.array([1, 2])) for _ in range(10_000)]
    cs = estimate_alpha(Exchangeable(), grouped, phi=1.0, p=2)
    assert abs(cs.alpha) < 0.05


def test_alpha_all_singletons_raises():
    grouped = [(np.array([1.0]), np.array([1]))] * 5
    with pytest.raises(NoPairs):
        estimate_alpha(Exchangeable(), grouped, phi=1.0, p=1)


def test_alpha_ar1_uses_lag_one_pairs():
    grouped = [(np.array([1.0, 1.0, -1.0]), np.array([1, 2, 3]))] * 4
    cs = estimate_alpha(AR1(), grouped, phi=1.0, p=0)
    # lag-1 products: 1*1 + 1*(-1) per cluster -> mean 0
    assert cs.alpha == pytest.approx(0.0)


def test_alpha_mdependent_missing_lag_warns_and_zeroes():
    grouped = [(np.array([1.0, 1.0]), np.array([1, 2]))] * 6
    with pytest.warns(UnderdeterminedLag):
        cs = estimate_alpha(MDependent(2), grouped, phi=1.0, p=0)
    assert cs.alphas[0] == pytest.approx(0.99)   # lag-1 moment 1.0, clamped
    assert cs.alphas[1] == 0.0                   # no lag-2 pairs anywhere


def test_alpha_unstructured_available_pairs():
    grouped = [
        (np.array([1.0, 1.0]), np.array([1, 2])),
        (np.array([1.0, -1.0]), np.array([1, 2])),
        (np.array([2.0, 1.0]), np.array([1, 3])),
    ]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderdeterminedLag)
        cs = estimate_alpha(Unstructured(3), grouped, phi=1.0, p=0)
    # occasions (1,2): products 1 and -1 over 2 clusters -> 0
    assert cs.alphas[0, 1] == pytest.approx(0.0)
    # occasions (2,3): never observed together -> 0
    assert cs.alphas[1, 2] == 0.0
    assert np.allclose(cs.alphas, cs.alphas.T)


# -------------------------------------------------------------------- fit_gee

def test_independent_gee_equals_irls(paper_event_ds, area_design, binomial):
    fit = fit_gee(area_design, paper_event_ds, binomial, Independent())
    base = irls_fit(area_design, paper_event_ds.response_vector(), binomial)
    assert np.max(np.abs(fit.beta - base.beta)) < 1e-8


def test_fit_reproduces_published_univariable_row(paper_event_ds, area_design, binomial):
    fit = fit_gee(area_design, paper_event_ds, binomial, Independent())
    assert fit.converged
    assert fit.beta[0] == pytest.approx(MARGINAL_INTERCEPT, abs=1e-6)
    assert fit.beta[1] == pytest.approx(MARGINAL_SLOPE, abs=1e-6)
    assert np.exp(fit.beta[1]) == pytest.approx(MARGINAL_OR, abs=1e-6)
    assert fit.phi == 1.0


def _estimating_equation(values, ds, f, beta, cs, phi=1.0):
    """Direct evaluation of sum_i D_i' V_i^{-1} (y_i - mu_i)."""
    from geeclust import glm

    y = ds.response_vector()
    mu = glm.link_inverse(f, values @ beta)
    a = glm.variance_fn(f, mu)
    dmu = glm.mean_derivative(f, mu)
    total = np.zeros(values.shape[1])
    start = 0
    for c in ds.clusters:
        sl = slice(start, start + c.size)
        x_i = values[sl]
        d_i = dmu[sl][:, None] * x_i
        s = np.sqrt(a[sl])
        r = realize_correlation(cs, c.size, np.asarray(c.positions))
        v = phi * np.outer(s, s) * r
        total += d_i.T @ np.linalg.solve(v, y[sl] - mu[sl])
        start += c.size
    return total


def brute_force_root(values, ds, f, cs, span=4.0, grid_points=41):
    """Grid search then coordinate bisection on the estimating equation.

    Each component of the equation is strictly decreasing in its own
    coefficient (the Jacobian is negative definite), so one-dimensional
    bisection per coordinate converges from a bracketing interval.
    """
    grid = np.linspace(-span, span, grid_points)
    best, best_norm = None, np.inf
    for b0 in grid:
        for b1 in grid:
            g = _estimating_equation(values, ds, f, np.array([b0, b1]), cs)
            norm = np.max(np.abs(g))
            if norm < best_norm:
                best, best_norm = np.array([b0, b1]), norm
    beta = best.copy()
    for _ in range(200):
        for k in (0, 1):
            lo, hi = beta[k] - 1.0, beta[k] + 1.0
            def fk(t):
                trial = beta.copy()
                trial[k] = t
                return _estimating_equation(values, ds, f, trial, cs)[k]
            while fk(lo) < 0 and lo > -30:
                lo -= 1.0
            while fk(hi) > 0 and hi < 30:
                hi += 1.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if fk(mid) > 0:
                    lo = mid
                else:
                    hi = mid
            beta[k] = 0.5 * (lo + hi)
        if np.max(np.abs(_estimating_equation(values, ds, f, beta, cs))) < 1e-10:
            break
    return beta


def test_fixed_alpha_fit_matches_brute_force_root():
    ds = dataset_from_arrays(
        cluster_sizes=[2, 3, 3],
        x_values=[0, 1, 1, 0, 1, 0, 0, 1],
        y_values=[0, 1, 1, 0, 0, 1, 0, 1],
    )
    x = build_design(ds, [TermCoding("x", "factor", "descending")])
    cs = Exchangeable(0.3)
    options = GeeOptions(update_alpha=False, fix_phi=True)
    fit = fit_gee(x, ds, BINOMIAL, cs, options)
    oracle = brute_force_root(x.values, ds, BINOMIAL, cs)
    residual = _estimating_equation(x.values, ds, BINOMIAL, oracle, cs)
    assert np.max(np.abs(residual)) < 1e-8          # the oracle itself is a root
    assert np.max(np.abs(fit.beta - oracle)) < 1e-4
    assert fit.alpha_estimates == pytest.approx(0.3)  # alpha stayed fixed


def test_singleton_clusters_identical_across_structures():
    rng = np.random.default_rng(5)
    x_values = rng.integers(0, 2, 50).astype(float)
    y_values = (rng.uniform(size=50) < expit(-0.3 + 0.7 * x_values)).astype(float)
    ds = dataset_from_arrays([1] * 50, x_values, y_values)
    x = build_design(ds, [TermCoding("x", "factor", "descending")])
    fits = []
    structures = [Independent(), Exchangeable(), AR1(), MDependent(1),
                  Unstructured(1), Fixed(np.eye(1))]
    for cs in structures:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnderdeterminedLag)
            fits.append(fit_gee(x, ds, BINOMIAL, cs).beta)
    for beta in fits[1:]:
        assert np.max(np.abs(beta - fits[0])) < 1e-12


def test_reference_flip_negates_exactly(paper_ds, binomial):
    from geeclust import recode_response

    first = recode_response(paper_ds, "LOOSENING", "first")
    last = recode_response(paper_ds, "LOOSENING", "last")
    x_first = build_design(first, [TermCoding("AREA1", "factor", "descending")])
    x_last = build_design(last, [TermCoding("AREA1", "factor", "descending")])
    for cs in [Independent(), Exchangeable()]:
        f1 = fit_gee(x_first, first, binomial, cs)
        f2 = fit_gee(x_last, last, binomial, cs)
        assert np.max(np.abs(f1.beta + f2.beta)) < 1e-10
        assert np.allclose(np.exp(f1.beta) * np.exp(f2.beta), 1.0, atol=1e-10)


@pytest.mark.parametrize("seed", range(25))
def test_numerical_hygiene_random_fits(seed):
    """Jacobian, estimating-equation residual, and sandwich PSD checks."""
    from geeclust import glm
    from geeclust.linalg import spd_factor

    rng = np.random.default_rng(seed)
    n_clusters = 25
    sizes = rng.integers(1, 5, n_clusters)
    xs, ys = [], []
    for size in sizes:
        x = rng.integers(0, 2, size).astype(float)
        p = expit(-0.5 + 1.0 * x)
        shared = rng.standard_normal() * 0.6
        y = (shared + rng.standard_normal(size) < _probit(p) * np.sqrt(1.36)).astype(float)
        xs.extend(x)
        ys.extend(y)
    ds = dataset_from_arrays(sizes.tolist(), xs, ys)
    x = build_design(ds, [TermCoding("x", "factor", "descending")])
    cs = Exchangeable()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderdeterminedLag)
        fit = fit_gee(x, ds, BINOMIAL, cs)

    # Jacobian of the mean vector vs central finite differences
    h = 1e-6
    for k in range(x.p):
        up = np.array(fit.beta)
        down = np.array(fit.beta)
        up[k] += h
        down[k] -= h
        fd = (glm.link_inverse(BINOMIAL, x.values @ up)
              - glm.link_inverse(BINOMIAL, x.values @ down)) / (2 * h)
        mu = glm.link_inverse(BINOMIAL, x.values @ fit.beta)
        analytic = glm.mean_derivative(BINOMIAL, mu) * x.values[:, k]
        scale = np.maximum(np.abs(analytic), 1e-8)
        assert np.max(np.abs(fd - analytic) / scale) < 1e-6

    # estimating-equation residual at convergence
    residual = _estimating_equation(
        x.values, ds, BINOMIAL, fit.beta, fit.structure, fit.phi
    )
    assert np.max(np.abs(residual)) < 1e-6

    # sandwich symmetric and PSD (Cholesky with jitter succeeds)
    assert np.max(np.abs(fit.cov_robust - fit.cov_robust.T)) < 1e-10
    bump = 1e-8 * np.mean(np.diag(fit.cov_robust))
    spd_factor(fit.cov_robust + bump * np.eye(x.p))
    spd_factor(fit.cov_model_based + bump * np.eye(x.p))


def test_robust_se_from_published_diagonal():
    fit = GeeFit(
        beta=np.array([-0.655, -0.822]),
        structure=Independent(),
        alpha_estimates=None,
        phi=1.0,
        cov_model_based=np.eye(2),
        cov_robust=np.diag([0.1103, 0.1444]),
        quasi_likelihood_independence=0.0,
        iterations=1,
        converged=True,
    )
    se = robust_se(fit)
    assert se[0] == pytest.approx(0.3321, abs=5e-5)
    assert se[1] == pytest.approx(0.3800, abs=5e-5)


def test_robust_se_identity():
    fit = GeeFit(
        beta=np.zeros(3), structure=Independent(), alpha_estimates=None, phi=1.0,
        cov_model_based=np.eye(3), cov_robust=np.eye(3),
        quasi_likelihood_independence=0.0, iterations=1, converged=True,
    )
    assert np.allclose(robust_se(fit), 1.0)


def test_sandwich_matches_model_based_on_independent_singletons():
    # with singleton clusters and a correct independence model the sandwich
    # converges to the model-based covariance; check at large n
    rng = np.random.default_rng(99)
    n = 4000
    x_values = rng.integers(0, 2, n).astype(float)
    y_values = (rng.uniform(size=n) < expit(-0.4 + 0.6 * x_values)).astype(float)
    ds = dataset_from_arrays([1] * n, x_values, y_values)
    x = build_design(ds, [TermCoding("x", "factor", "descending")])
    fit = fit_gee(x, ds, BINOMIAL, Independent())
    ratio = np.diag(fit.cov_robust) / np.diag(fit.cov_model_based)
    assert np.max(np.abs(ratio - 1.0)) < 0.1


def test_gee_no_convergence_carries_partial_fit(paper_event_ds, area_design, binomial):
    with pytest.raises(NoConvergence) as excinfo:
        fit_gee(area_design, paper_event_ds, binomial, Exchangeable(),
                GeeOptions(max_iter=1, tol=1e-14))
    assert isinstance(excinfo.value.fit, GeeFit)
    assert not excinfo.value.fit.converged


def test_gee_perfect_separation():
    x_values = np.arange(8.0)
    y_values = (x_values >= 4).astype(float)
    ds = dataset_from_arrays([2, 2, 2, 2], x_values, y_values)
    x = build_design(ds, [TermCoding("x", "covariate")])
    with pytest.raises(PerfectSeparation):
        fit_gee(x, ds, BINOMIAL, Independent())


def test_gee_rank_deficient():
    ds = dataset_from_arrays([2, 2], [1, 1, 1, 1], [0, 1, 0, 1])
    x_bad = np.column_stack([np.ones(4), np.ones(4)])
    from geeclust.data import DesignMatrix

    with pytest.raises(RankDeficient):
        fit_gee(DesignMatrix(x_bad, ("(Intercept)", "dup")), ds, BINOMIAL, Independent())
