import numpy as np
import pytest
from scipy import stats

from npebci.baselines import (
    CvaTable,
    akp_all,
    akp_cva,
    akp_interval,
    akp_worst_coverage,
    cox_morris,
    cox_morris_all,
    estimate_A,
    naive_z,
    truncation_floor,
)
from npebci.core import Dataset, Observation

Z = stats.norm.ppf(0.975)


def lattice_worst_coverage(m, chi, n1=1500, n2=6000):
    """Brute-force minimum of E r(t) over two-point laws of t with E t^2 = m."""
    def r(t):
        return stats.norm.cdf(t + chi) - stats.norm.cdf(t - chi)
    t1 = np.linspace(0, np.sqrt(m), n1)
    t2 = np.linspace(np.sqrt(m), chi + 12 + np.sqrt(m), n2)[1:]
    u1, u2 = np.meshgrid(t1**2, t2**2, indexing="ij")
    p = (u2 - m) / (u2 - u1)
    vals = p * r(np.sqrt(u1)) + (1 - p) * r(np.sqrt(u2))
    return min(vals.min(), r(np.sqrt(m)))


def test_naive_examples():
    iv = naive_z(Observation(0.0, 1.0), 0.05)
    assert (iv.lower, iv.upper) == pytest.approx((-Z, Z))
    iv = naive_z(Observation(3.0, 2.5), 0.1)
    assert iv.length == pytest.approx(2 * stats.norm.ppf(0.95) * 2.5, rel=1e-14)


def test_naive_frequentist_coverage():
    rng = np.random.default_rng(0)
    theta, s = 1.7, 0.8
    y = theta + s * rng.standard_normal(100_000)
    lo, hi = y - Z * s, y + Z * s
    assert abs(np.mean((lo <= theta) & (theta <= hi)) - 0.95) < 0.005


def test_estimate_A():
    ds = Dataset(np.zeros(10), np.linspace(1, 2, 10))
    est = estimate_A(ds)
    assert est.A_hat == est.floor == pytest.approx(truncation_floor(ds.sigma))
    tiny = estimate_A(ds, floor="tiny")
    assert tiny.A_hat == pytest.approx(1e-8 * np.mean(ds.sigma**2))
    rng = np.random.default_rng(1)
    n = 20000
    s = rng.uniform(0.5, 1.5, n)
    y = rng.standard_normal(n) * np.sqrt(1 + s**2)
    est = estimate_A(Dataset(y, s))
    se = np.std(y**2 - s**2) / np.sqrt(n)
    assert abs(est.A_hat - 1) < 3 * se
    perm = rng.permutation(n)
    assert estimate_A(Dataset(y[perm], s[perm])).A_hat == pytest.approx(est.A_hat, rel=1e-12)


def test_cox_morris_examples():
    iv = cox_morris(Observation(2.0, 1.0), 0.05, 1.0)
    assert (iv.lower, iv.upper) == pytest.approx((1 - np.sqrt(0.5) * Z, 1 + np.sqrt(0.5) * Z))
    d = Observation(0.7, 1.3)
    big = cox_morris(d, 0.05, 1e12)
    nz = naive_z(d, 0.05)
    assert (big.lower, big.upper) == pytest.approx((nz.lower, nz.upper), abs=1e-4)
    assert cox_morris(d, 0.05, 3.0).length < nz.length
    w = 3.0 / (3.0 + 1.3**2)
    iv = cox_morris(d, 0.05, 3.0)
    assert (iv.lower + iv.upper) / 2 == pytest.approx(w * 0.7, abs=1e-15)


def test_akp_zero_moment():
    for chi in (1.0, 2.0, 3.5):
        assert akp_worst_coverage(0.0, chi) == pytest.approx(2 * stats.norm.cdf(chi) - 1)
    assert akp_cva(0.0, 0.05) == pytest.approx(1.95996, abs=1e-5)


@pytest.mark.parametrize("m", [0.5, 1.0, 4.0])
@pytest.mark.parametrize("chi", [2.0, 3.0])
def test_akp_matches_lattice(m, chi):
    assert akp_worst_coverage(m, chi) == pytest.approx(lattice_worst_coverage(m, chi), abs=1e-4)


def test_akp_monotone():
    ms = [0, 0.1, 0.5, 1, 2, 5, 10]
    chis = [1.5, 2, 3, 5]
    rho = np.array([[akp_worst_coverage(m, c) for c in chis] for m in ms])
    assert np.all(np.diff(rho, axis=0) <= 1e-9)
    assert np.all(np.diff(rho, axis=1) >= -1e-9)
    cva = [akp_cva(m, 0.05) for m in ms]
    assert np.all(np.diff(cva) >= 0)


@pytest.mark.parametrize("m", [0.1, 1.0, 10.0])
def test_akp_cva_self_consistent(m):
    chi = akp_cva(m, 0.05)
    assert 0.95 <= akp_worst_coverage(m, chi) <= 0.95 + 1e-4


def test_akp_interval_limit_and_ordering():
    d = Observation(1.1, 0.9)
    big = akp_interval(d, 0.05, 1e12)
    nz = naive_z(d, 0.05)
    assert (big.lower, big.upper) == pytest.approx((nz.lower, nz.upper), abs=1e-4)
    for A in (0.05, 0.3, 1, 4, 30):
        for s in (0.3, 1.0, 3.0):
            d = Observation(0.4, s)
            assert akp_interval(d, 0.05, A).length >= cox_morris(d, 0.05, A).length - 1e-12


def test_akp_batch_matches_scalar():
    y = np.array([-1.0, 0.2, 2.5])
    s = np.array([0.4, 1.0, 2.0])
    lo, hi = akp_all(y, s, 0.05, 0.8)
    for k in range(3):
        iv = akp_interval(Observation(y[k], s[k]), 0.05, 0.8)
        assert (iv.lower, iv.upper) == pytest.approx((lo[k], hi[k]), abs=1e-5)
    lo, hi = cox_morris_all(y, s, 0.05, 0.8)
    iv = cox_morris(Observation(y[2], s[2]), 0.05, 0.8)
    assert (iv.lower, iv.upper) == pytest.approx((lo[2], hi[2]))


def test_cva_table_accuracy():
    tab = CvaTable(0.1, (-2.0, 2.0), 81)
    ms = np.array([0.013, 0.37, 2.2, 71.0, 1e-3, 1e3])
    exact = np.array([akp_cva(m, 0.1) for m in ms])
    assert np.max(np.abs(tab(ms) - exact)) < 1e-5


def test_akp_robust_under_two_point_prior():
    rng = np.random.default_rng(3)
    A, s, n = 0.5, 1.0, 100_000
    a, p = 2.0, 0.5 / 4.0  # E theta^2 = p a^2 = A
    theta = np.where(rng.random(n) < p, a, 0.0)
    y = theta + s * rng.standard_normal(n)
    lo, hi = akp_all(y, np.full(n, s), 0.05, A)
    cov = np.mean((lo <= theta) & (theta <= hi))
    assert cov >= 0.95 - 3 * np.sqrt(0.95 * 0.05 / n)
