"""Acceptance criteria, one test and one PASS/FAIL line each."""

import time

import numpy as np
from scipy import stats

from npebci.baselines import akp_all, akp_cva, akp_worst_coverage, cva_table
from npebci.core import Dataset, Gaussian
from npebci.npmle import fit_npmle
from npebci.quantile import (
    QuantileRequest,
    oracle_posterior_cdf,
    oracle_posterior_quantile,
    solve_quantile,
    solve_quantile_spectral,
)
from npebci.simulate import make_design
from npebci.spectral import deconv_density, default_theta_grid, period_theta_grid

from conftest import cached_cell
from test_baselines import lattice_worst_coverage

ANALYTIC = range(1, 7)


def test_c1_oracle_conditional_coverage(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = {}
    for k in ANALYTIC:
        prior = make_design(k).prior
        errs = []
        for y in rng.normal(0, np.sqrt(2), 20):
            lo = oracle_posterior_quantile(prior, 0.025, y, 1.0)
            hi = oracle_posterior_quantile(prior, 0.975, y, 1.0)
            cov = oracle_posterior_cdf(prior, y, 1.0, hi) - oracle_posterior_cdf(prior, y, 1.0, lo)
            errs.append(abs(cov - 0.95))
        worst[k] = max(errs)
    dt = time.perf_counter() - t0
    ok = all(e <= 1e-8 for e in worst.values()) and dt < 10
    detail = "max |cov-0.95| by design " + ", ".join(f"{k}:{v:.1e}" for k, v in worst.items())
    verdict("criterion 1 oracle conditional coverage", ok, detail, dt)


def test_c2_gaussian_closed_form(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    err = 0.0
    for _ in range(200):
        A, s = rng.uniform(0.1, 5), rng.uniform(0.2, 3)
        y, tau = rng.normal(0, np.sqrt(A + s * s)), rng.uniform(0.01, 0.99)
        w = A / (A + s * s)
        exact = w * y + np.sqrt(w) * s * stats.norm.ppf(tau)
        err = max(err, abs(oracle_posterior_quantile(Gaussian(0.0, A), tau, y, s) - exact))
    dt = time.perf_counter() - t0
    verdict("criterion 2 closed-form cross-check", err <= 1e-8 and dt < 5,
            f"max abs error {err:.1e} over 200 points", dt)


def test_c3_spectral_equals_theta_route(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    err = 0.0
    for _ in range(50):
        n = int(rng.integers(30, 400))
        s = rng.uniform(0.3, 2.0, n)
        ds = Dataset(rng.standard_t(5, n) + s * rng.standard_normal(n), s)
        h = float(rng.uniform(0.2, 1.2))
        leave = int(rng.integers(n)) if rng.random() < 0.5 else None
        req = QuantileRequest(float(rng.uniform(0.02, 0.98)), float(rng.choice(ds.y)),
                              float(rng.uniform(0.3, 2.0)))
        th = default_theta_grid(ds)
        a = solve_quantile_spectral(req, ds, h, leave_out=leave, theta_grid=th)
        b = solve_quantile(req, deconv_density(ds, h, th, leave_out=leave), a.grid_used)
        err = max(err, abs(a.q - b.q))
    dt = time.perf_counter() - t0
    verdict("criterion 3 spectral vs theta-space route", err <= 1e-10 and dt < 30,
            f"max |q diff| {err:.1e} over 50 configurations", dt)


def test_c4_gaussian_low_snr_cell(verdict):
    t0 = time.perf_counter()
    m = cached_cell(1, 100, 0.1, 100).methods
    dt = time.perf_counter() - t0
    npc, npl = m["npebci"].avg_coverage, m["npebci"].avg_length_reduction
    cm, akp = m["cox_morris"].avg_coverage, m["akp"].avg_coverage
    ok = (abs(npc - 0.947) <= 0.03 and abs(npl - 53.7) <= 5 and cm < 0.90
          and akp >= 0.93 and dt < 1800)
    verdict("criterion 4 Gaussian cell n=100 snr=0.1", ok,
            f"NP cov {npc:.3f} red {npl:.1f}%, CM cov {cm:.3f}, AKP cov {akp:.3f}", dt)


def test_c5_large_n_length_ordering(verdict):
    t0 = time.perf_counter()
    m = cached_cell(1, 1000, 0.1, 50).methods
    dt = time.perf_counter() - t0
    cm, npl, akp = (m[k].avg_length_reduction for k in ("cox_morris", "npebci", "akp"))
    ok = cm - npl >= 5 and npl - akp >= 5 and dt < 3600
    verdict("criterion 5 length ordering n=1000", ok,
            f"CM {cm:.1f} > NP {npl:.1f} > AKP {akp:.1f}", dt)


def test_c6_akp_two_point_robustness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    table = cva_table(0.05)
    reps, A = 100_000, 1.0
    worst = np.inf
    for _ in range(20):
        # two-point law with E theta^2 = A
        a1, a2 = rng.uniform(0, 6, 2) * rng.choice([-1, 1], 2)
        p = rng.uniform(0.01, 0.99)
        scale = np.sqrt(A / (p * a1**2 + (1 - p) * a2**2))
        theta = np.where(rng.random(reps) < p, a1, a2) * scale
        sigma = np.sqrt(rng.uniform(0.05, 10, reps))
        y = theta + sigma * rng.standard_normal(reps)
        lo, hi = akp_all(y, sigma, 0.05, A, table)
        cov = float(np.mean((lo <= theta) & (theta <= hi)))
        se = np.sqrt(cov * (1 - cov) / reps)
        worst = min(worst, cov + 3 * se - 0.95)
    dt = time.perf_counter() - t0
    verdict("criterion 6 AKP two-point robustness", worst >= 0 and dt < 120,
            f"min (coverage + 3 SE - 0.95) = {worst:.4f} over 20 priors", dt)


def test_c7_akp_calibration_limits(verdict):
    t0 = time.perf_counter()
    c0 = akp_cva(0.0, 0.05)
    err = max(abs(akp_worst_coverage(m, c) - lattice_worst_coverage(m, c))
              for m in (0.5, 1.0, 4.0) for c in (2.0, 3.0))
    dt = time.perf_counter() - t0
    ok = abs(c0 - 1.95996) <= 1e-5 and err <= 1e-4 and dt < 60
    verdict("criterion 7 AKP calibration limits", ok,
            f"cva(0) = {c0:.6f}, max lattice gap {err:.1e}", dt)


def test_c8_monotonicity_suite(verdict):
    t0 = time.perf_counter()
    ys = np.linspace(-4, 4, 50)
    taus = np.linspace(0.02, 0.98, 50)
    worst_drop = 0.0
    for k in ANALYTIC:
        prior = make_design(k).prior
        qy = [oracle_posterior_quantile(prior, 0.5, y, 1.0) for y in ys]
        qt = [oracle_posterior_quantile(prior, t, 0.7, 1.0) for t in taus]
        worst_drop = min(worst_drop, np.min(np.diff(qy)), np.min(np.diff(qt)))
    rng = np.random.default_rng(8)
    mass_err, ll_drop = 0.0, 0.0
    for _ in range(20):
        n = int(rng.integers(40, 400))
        s = rng.uniform(0.3, 2.0, n)
        ds = Dataset(rng.standard_t(4, n) * 1.5 + s * rng.standard_normal(n), s)
        h = float(rng.uniform(0.2, 1.2))
        g = deconv_density(ds, h, period_theta_grid(h, center=float(np.mean(ds.y))))
        mass_err = max(mass_err, abs(g.total_mass() - 1))
        trace = fit_npmle(ds).loglik_trace
        ll_drop = min(ll_drop, float(np.min(np.diff(trace))) if trace.size > 1 else 0.0)
    dt = time.perf_counter() - t0
    ok = worst_drop >= -1e-10 and mass_err <= 1e-6 and ll_drop >= -1e-9 and dt < 120
    verdict("criterion 8 monotonicity suite", ok,
            f"min quantile step {worst_drop:.1e}, max |mass-1| {mass_err:.1e}, "
            f"min loglik step {ll_drop:.1e}", dt)


def test_c9_oracle_gap_shape(verdict):
    t0 = time.perf_counter()
    methods = ("npebci", "oracle_np")
    gauss = cached_cell(1, 500, 0.4, 50, methods=methods).oracle_gap()
    slab = cached_cell(5, 500, 0.4, 50, methods=methods).oracle_gap()
    dt = time.perf_counter() - t0
    verdict("criterion 9 oracle gap shape", gauss < slab and dt < 1800,
            f"Gaussian gap {gauss:.3f} vs spike-and-slab gap {slab:.3f}", dt)
