import functools

import numpy as np
import pytest

from npebci.core import Dataset
from npebci.simulate import CellConfig, run_cell
from npebci.spectral import DeconvEstimate


def gaussian_data(n, seed=0, sigma=1.0, prior_sd=1.0):
    rng = np.random.default_rng(seed)
    theta = prior_sd * rng.standard_normal(n)
    s = np.full(n, float(sigma)) if np.isscalar(sigma) else np.asarray(sigma, float)
    return Dataset(theta + s * rng.standard_normal(n), s), theta


def density_on_grid(pdf, lo=-12.0, hi=12.0, n=4001):
    th = np.linspace(lo, hi, n)
    return DeconvEstimate(th, pdf(th), 1.0)


@functools.lru_cache(maxsize=None)
def cached_cell(design, n, snr, reps, seed=2024, methods=None, fast_bandwidth=False):
    kw = {} if methods is None else {"methods": methods}
    cfg = CellConfig(design, n, snr, reps, seed=seed, fast_bandwidth=fast_bandwidth, **kw)
    return run_cell(cfg, threads=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line for a criterion, then assert it."""
    def emit(label, ok, detail, seconds):
        line = f"{'PASS' if ok else 'FAIL'} {label}: {detail} [{seconds:.1f}s]"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
