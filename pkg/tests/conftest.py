import numpy as np
import pytest

from geeclust import Family, TermCoding, build_design, build_paper_marginals, recode_response

# published univariable row: jaw factor, independent working correlation
MARGINAL_INTERCEPT = -0.6554068525770982   # ln(27/52)
MARGINAL_SLOPE = -0.8218592867485190       # ln(42*52 / (184*27))
MARGINAL_OR = 0.4396135265700483


@pytest.fixture(scope="session")
def paper_ds():
    return build_paper_marginals(seed=0)


@pytest.fixture(scope="session")
def paper_event_ds(paper_ds):
    """Paper dataset with the modeled event = LOOSENING=1 (reference first)."""
    return recode_response(paper_ds, "LOOSENING", "first")


@pytest.fixture(scope="session")
def area_design(paper_event_ds):
    """Intercept + AREA1=1 indicator (descending order: mandible reference)."""
    return build_design(paper_event_ds, [TermCoding("AREA1", "factor", "descending")])


@pytest.fixture(scope="session")
def binomial():
    return Family("binomial", "logit")


def random_spd(rng, n, cond=100.0):
    """Random SPD matrix with condition number about `cond`."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigenvalues = np.geomspace(1.0, cond, n)
    return (q * eigenvalues) @ q.T
