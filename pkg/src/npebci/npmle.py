"""Fixed-grid NPMLE of the mixing distribution by EM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from npebci.core import Dataset, InvalidInput, NpebciError, Observation

GRID_SIZE = 300
MAX_ITER = 2000
TOL = 1e-8


class EmptyAfterExclusion(NpebciError):
    pass


class DegenerateLikelihood(NpebciError):
    pass


@dataclass(frozen=True, eq=False)
class NpmleFit:
    support: np.ndarray
    weights: np.ndarray
    loglik_trace: np.ndarray
    iterations: int
    converged: bool

    def cdf(self, x):
        idx = np.searchsorted(self.support, np.asarray(x, dtype=float), side="right")
        return np.concatenate([[0.0], np.cumsum(self.weights)])[idx]


def _log_lik_matrix(y, sigma, support):
    z = (y[:, None] - support[None, :]) / sigma[:, None]
    return -0.5 * z * z - np.log(sigma)[:, None] - 0.5 * np.log(2 * np.pi)


def fit_npmle(ds: Dataset, grid_size: int = GRID_SIZE, max_iter: int = MAX_ITER,
              tol: float = TOL, exclude=None) -> NpmleFit:
    """EM for the mixing weights on a uniform grid over the retained data range.

    Starts from uniform weights and stops after ``max_iter`` iterations or
    when the log-likelihood gain drops below ``tol``.
    """
    if grid_size < 10:
        raise InvalidInput("grid_size must be at least 10")
    keep = np.ones(ds.n, dtype=bool)
    if exclude is not None:
        keep[np.asarray(list(np.atleast_1d(exclude)), dtype=int)] = False
    if keep.sum() < 2:
        raise EmptyAfterExclusion("fewer than 2 units remain after exclusion")
    y, s = ds.y[keep], ds.sigma[keep]
    support = np.linspace(y.min(), y.max(), grid_size)
    logL = _log_lik_matrix(y, s, support)
    # row-wise rescaling keeps the likelihood matrix in range; EM is invariant to it
    shift = logL.max(axis=1, keepdims=True)
    L = np.exp(logL - shift)
    offset = float(shift.sum())
    n = y.size

    p = np.full(grid_size, 1.0 / grid_size)
    f = L @ p
    trace = [float(np.log(f).sum() + offset)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = p * (L.T @ (1.0 / f)) / n
        p /= p.sum()
        f = L @ p
        trace.append(float(np.log(f).sum() + offset))
        if trace[-1] - trace[-2] < tol:
            converged = True
            break
    return NpmleFit(support, p, np.array(trace), it, converged)


def posterior_atoms(fit: NpmleFit, d: Observation) -> np.ndarray:
    """Posterior probabilities of the fitted atoms given one observation."""
    with np.errstate(divide="ignore"):
        logw = np.log(fit.weights) - 0.5 * ((d.y - fit.support) / d.sigma) ** 2
    if not np.any(np.isfinite(logw)):
        raise DegenerateLikelihood("no atom has positive weight")
    top = np.max(logw)
    # likelihood of every atom below exp(-700) relative to a unit-scale density
    if top < -700:
        raise DegenerateLikelihood(f"observation y={d.y} far outside the fitted support")
    return np.exp(logw - special.logsumexp(logw))


def posterior_atoms_batch(fit: NpmleFit, y, sigma) -> np.ndarray:
    y = np.asarray(y, dtype=float)[:, None]
    sigma = np.asarray(sigma, dtype=float)[:, None]
    with np.errstate(divide="ignore"):
        logw = np.log(fit.weights)[None, :] - 0.5 * ((y - fit.support) / sigma) ** 2
    return np.exp(logw - special.logsumexp(logw, axis=1, keepdims=True))


def coverage_under_fit(fit: NpmleFit, d: Observation, interval) -> float:
    lo, hi = interval
    if lo > hi:
        raise InvalidInput("interval lower bound exceeds upper bound")
    pi = posterior_atoms(fit, d)
    inside = (fit.support >= lo) & (fit.support <= hi)
    return float(pi[inside].sum())


def coverage_under_fit_batch(fit: NpmleFit, y, sigma, lower, upper) -> np.ndarray:
    pi = posterior_atoms_batch(fit, y, sigma)
    lower = np.asarray(lower, dtype=float)[:, None]
    upper = np.asarray(upper, dtype=float)[:, None]
    inside = (fit.support[None, :] >= lower) & (fit.support[None, :] <= upper)
    return (pi * inside).sum(axis=1)


__all__ = [
    "DegenerateLikelihood",
    "EmptyAfterExclusion",
    "NpmleFit",
    "coverage_under_fit",
    "coverage_under_fit_batch",
    "fit_npmle",
    "posterior_atoms",
    "posterior_atoms_batch",
]
