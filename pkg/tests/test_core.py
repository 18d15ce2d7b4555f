import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from npebci.core import (
    Dataset,
    Discrete,
    DuplicateId,
    Gaussian,
    GaussianMixture,
    Interval,
    InvalidInput,
    Laplace,
    Level,
    Method,
    NonFiniteValue,
    NonPositiveSigma,
    Observation,
    ScaledStudentT,
    TooFewUnits,
    check_function,
    knight_decomposition,
    validate_dataset,
)

finite = st.floats(-50, 50, allow_nan=False)
taus = st.floats(0.01, 0.99)


@pytest.mark.parametrize("u,tau,expected", [(0, 0.5, 0.0), (2, 0.25, 0.5), (-2, 0.25, 1.5)])
def test_check_function_values(u, tau, expected):
    assert check_function(u, tau) == pytest.approx(expected)


@given(finite, taus)
def test_check_function_reflection(u, tau):
    assert check_function(u, tau) == pytest.approx(check_function(-u, 1 - tau), abs=1e-12)
    assert check_function(u, tau) >= 0


def test_check_function_zero_only_at_origin():
    u = np.array([-1e-3, 0.0, 1e-3])
    assert list(check_function(u, 0.3) == 0) == [False, True, False]


def test_knight_examples():
    assert knight_decomposition(1, 0, 0.5) == (0, 0)
    lin, integ = knight_decomposition(1, 2, 0.5)
    assert (lin, integ) == pytest.approx((-1, 1))
    lin, integ = knight_decomposition(-1, -2, 0.25)
    assert lin + integ == pytest.approx(-0.5)


@settings(max_examples=300)
@given(finite, finite, taus)
def test_knight_identity(x, y, tau):
    lin, integ = knight_decomposition(x, y, tau)
    lhs = check_function(x - y, tau) - check_function(x, tau)
    assert lin + integ == pytest.approx(lhs, abs=1e-12 * (1 + abs(x) + abs(y)))


def test_knight_integral_matches_quadrature():
    x, y = 0.7, 2.3
    s = np.linspace(0, y, 200001)
    f = (x <= s).astype(float) - float(x <= 0)
    assert knight_decomposition(x, y, 0.4)[1] == pytest.approx(np.trapezoid(f, s), abs=1e-4)


def test_validate_dataset_ok():
    ds = Dataset([0.1, 0.2, 0.3], [1, 1, 2], ("a", "b", "c"))
    assert validate_dataset(ds) is ds
    assert ds.n == 3 and ds.label(2) == "c"


@pytest.mark.parametrize(
    "y,s,ids,err",
    [
        ([0, 1], [1, 0], None, NonPositiveSigma),
        ([0], [1], None, TooFewUnits),
        ([0, np.nan], [1, 1], None, NonFiniteValue),
        ([0, 1], [1, np.inf], None, NonFiniteValue),
        ([0, 1], [1, 1], ("a", "a"), DuplicateId),
    ],
)
def test_validate_dataset_errors(y, s, ids, err):
    with pytest.raises(err):
        validate_dataset(Dataset(y, s, ids))


def test_dataset_arrays_read_only():
    ds = Dataset([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        ds.y[0] = 5


def test_observation_validation():
    with pytest.raises(NonPositiveSigma):
        Observation(0.0, -1.0)
    ds = Dataset.from_observations([Observation(1, 2), Observation(3, 4)])
    assert ds.observation(1) == Observation(3, 4)


def test_level_and_interval():
    assert Level(0.05).coverage == pytest.approx(0.95)
    with pytest.raises(InvalidInput):
        Level(1.0)
    iv = Interval(-1, 2, Method.NAIVE, 0)
    assert iv.length == 3 and iv.covers(0) and not iv.covers(3)
    with pytest.raises(InvalidInput):
        Interval(2, 1, Method.NAIVE, 0)


def test_discrete_sorts_and_merges():
    d = Discrete((1.0, -1.0, 1.0), (0.2, 0.5, 0.3))
    assert list(d.support) == [-1.0, 1.0]
    assert list(d.weights) == pytest.approx([0.5, 0.5])


def test_mixture_renormalizes():
    m = GaussianMixture(((2.0, 0.0, 1.0), (2.0, 1.0, 1.0)))
    assert abs(m.weights.sum() - 1) <= 1e-12


@pytest.mark.parametrize(
    "prior",
    [
        Gaussian(0.0, 1.0),
        Laplace(0.0, 1 / np.sqrt(2)),
        ScaledStudentT(np.sqrt(0.2), 2.5),
        GaussianMixture(((0.5, -1.0, 0.5), (0.5, 1.0, 0.5))),
        Discrete((-1.0, 0.0, 2.0), (0.3, 0.4, 0.3)),
    ],
)
def test_prior_cdf_matches_pdf_and_samples(prior, rng):
    x = np.linspace(-3, 3, 7)
    if not isinstance(prior, Discrete):
        grid = np.linspace(-60, 3, 400001)
        num = np.trapezoid(prior.pdf(grid), grid)
        assert prior.cdf(3.0) == pytest.approx(num, abs=2e-3)
    draws = prior.sample(rng, 200000)
    emp = (draws[:, None] <= x).mean(axis=0)
    assert np.max(np.abs(emp - prior.cdf(x))) < 0.01
