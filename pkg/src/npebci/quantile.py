"""Posterior quantiles: feasible check-loss solver, oracle posteriors, intervals."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special, stats

from npebci.core import (
    Dataset,
    Discrete,
    Gaussian,
    GaussianMixture,
    Interval,
    InvalidInput,
    Laplace,
    Method,
    NpebciError,
    ScaledStudentT,
    as_alpha,
)
from npebci.spectral import (
    DeconvEstimate,
    TaperKernelFT,
    TrigBasis,
    cf_ratio_table,
    default_theta_grid,
    density_from_table,
    LooRatios,
)

N_SEARCH = 401
SEARCH_SIGMAS = 4.0
SEARCH_SDS = 2.0
EDGE_STEPS = 2
_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


class GridCoverage(NpebciError):
    pass


class FlatObjective(NpebciError):
    pass


class DegenerateDenominator(NpebciError):
    pass


@dataclass(frozen=True)
class QuantileRequest:
    tau: float
    y: float
    sigma: float

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise InvalidInput(f"tau must lie in (0, 1), got {self.tau}")
        if not self.sigma > 0:
            raise InvalidInput(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class SolveReport:
    q: float
    objective_at_q: float
    grid_used: tuple[float, float, int]
    refined: bool


# ------------------------------------------------------------ feasible path


def _kernel_weights(y, sigma, gh: DeconvEstimate):
    """Trapezoid weight times ``phi((y - theta) / sigma) ghat(theta)``."""
    z = (y - gh.theta_grid) / sigma
    return gh.weights * np.exp(-0.5 * z * z - _LOG_SQRT_2PI) * gh.ghat


def _check_coverage(q, gh: DeconvEstimate):
    th = gh.theta_grid
    margin = EDGE_STEPS * gh.step
    q = np.asarray(q)
    if np.any(q < th[0] + margin) or np.any(q > th[-1] - margin):
        raise GridCoverage(
            f"q within {EDGE_STEPS} grid steps of the theta-grid edge "
            f"[{th[0]:.4g}, {th[-1]:.4g}]"
        )


def objective(q: float, req: QuantileRequest, gh: DeconvEstimate) -> float:
    """Check-loss risk ``int rho_tau(theta - q) phi((y - theta)/sigma) ghat(theta) dtheta``.

    Trapezoid quadrature on the estimate's own grid; with a signed ``ghat``
    the function need not be convex in ``q``.
    """
    _check_coverage(q, gh)
    p = _kernel_weights(req.y, req.sigma, gh)
    u = gh.theta_grid - q
    return float(p @ (u * (req.tau - (u <= 0))))


def objective_curve(qs, req: QuantileRequest, gh: DeconvEstimate) -> np.ndarray:
    qs = np.asarray(qs, dtype=float)
    _check_coverage(qs, gh)
    p = _kernel_weights(req.y, req.sigma, gh)
    u = gh.theta_grid[None, :] - qs[:, None]
    return (u * (req.tau - (u <= 0))) @ p


def _refine(qs: np.ndarray, f: np.ndarray) -> tuple[float, bool]:
    k = int(np.argmin(f))
    if k == 0 or k == qs.size - 1:
        return float(qs[k]), False
    f0, f1, f2 = f[k - 1], f[k], f[k + 1]
    curv = f0 - 2.0 * f1 + f2
    if not curv > 0:
        return float(qs[k]), False
    d = qs[k + 1] - qs[k]
    q = qs[k] + 0.5 * d * (f0 - f2) / curv
    return float(min(max(q, qs[k - 1]), qs[k + 1])), True


def default_search(req: QuantileRequest, sd_y: float, n: int = N_SEARCH):
    half = SEARCH_SIGMAS * req.sigma + SEARCH_SDS * sd_y
    return req.y - half, req.y + half, n


def clip_search(search, gh: DeconvEstimate):
    """Shrink a search window so every node keeps clear of the grid edges."""
    lo, hi, n = search
    th = gh.theta_grid
    margin = (EDGE_STEPS + 1) * gh.step
    return max(lo, th[0] + margin), min(hi, th[-1] - margin), n


def solve_quantile(req: QuantileRequest, gh: DeconvEstimate, search=None) -> SolveReport:
    """Minimize the check-loss risk on a node grid, then refine quadratically.

    The parabola through the best node and its neighbours gives the estimate,
    clamped to the neighbour bracket; ties go to the smallest node.
    """
    if search is None:
        search = clip_search((req.y - 8 * req.sigma, req.y + 8 * req.sigma, N_SEARCH), gh)
    lo, hi, n = search
    if not lo < hi:
        raise InvalidInput(f"empty search window [{lo}, {hi}]")
    if n < 16:
        raise InvalidInput("search grid needs at least 16 nodes")
    qs = np.linspace(lo, hi, int(n))
    f = objective_curve(qs, req, gh)
    if f.max() - f.min() < 1e-14:
        raise FlatObjective("objective is numerically flat over the search window")
    q, refined = _refine(qs, f)
    return SolveReport(q, objective(q, req, gh), (float(lo), float(hi), int(n)), refined)


def _spectral_curve(qs, req: QuantileRequest, basis: TrigBasis, re, im, tw) -> np.ndarray:
    """Objective at ``qs`` from the frequency side.

    The check-loss kernel is projected onto the trig basis first and then
    contracted with the CF-ratio coefficients; exchanging the two sums is
    the discrete Parseval identity, so no density is ever formed.
    """
    z = (req.y - basis.theta_grid) / req.sigma
    lik = tw * np.exp(-0.5 * z * z - _LOG_SQRT_2PI)
    u = basis.theta_grid[None, :] - np.asarray(qs, dtype=float)[:, None]
    k = (u * (req.tau - (u <= 0))) * lik
    return ((k @ basis.cos) @ re + (k @ basis.sin) @ im) / (2.0 * np.pi)


def solve_quantile_spectral(
    req: QuantileRequest, ds: Dataset, h: float, kernel: TaperKernelFT | None = None,
    leave_out=None, search=None, theta_grid=None,
) -> SolveReport:
    """Feasible posterior quantile for ``req`` computed on the Fourier side.

    Uses the same node grid and refinement as ``solve_quantile`` so the two
    routes agree up to rounding.
    """
    if theta_grid is None:
        theta_grid = default_theta_grid(ds)
    table = cf_ratio_table(ds, h, kernel, leave_out)
    basis = TrigBasis(theta_grid, table.grid)
    re, im = basis.coefficients(table.weighted())
    # geometry only: edge checks and trapezoid weights need no density values
    shell = DeconvEstimate(basis.theta_grid, np.zeros(basis.theta_grid.size), h, leave_out)
    if search is None:
        keep = np.ones(ds.n, dtype=bool)
        if leave_out is not None:
            keep[np.atleast_1d(leave_out)] = False
        search = clip_search(default_search(req, float(np.std(ds.y[keep]))), shell)
    lo, hi, n = search
    if not lo < hi:
        raise InvalidInput(f"empty search window [{lo}, {hi}]")
    if n < 16:
        raise InvalidInput("search grid needs at least 16 nodes")
    qs = np.linspace(lo, hi, int(n))
    _check_coverage(qs, shell)
    f = _spectral_curve(qs, req, basis, re, im, shell.weights)
    if f.max() - f.min() < 1e-14:
        raise FlatObjective("objective is numerically flat over the search window")
    q, refined = _refine(qs, f)
    value = float(_spectral_curve([q], req, basis, re, im, shell.weights)[0])
    return SolveReport(q, value, (float(lo), float(hi), int(n)), refined)


def batch_quantiles(
    ghat: np.ndarray, theta_grid: np.ndarray, y, sigma, taus, lo, hi,
    n_search: int = N_SEARCH,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve many quantile problems at once.

    ``ghat`` has one row per problem. The trapezoid risk is piecewise linear
    in ``q``, so it is evaluated from cumulative sums of the posterior
    kernel instead of a dense ``(q, theta)`` product. Returns ``(q, flat)``
    with ``q`` of shape ``(m, len(taus))`` and ``flat`` flagging problems
    whose objective was numerically flat (``q`` is NaN there).
    """
    th = theta_grid
    w = np.empty_like(th)
    dx = np.diff(th)
    w[:] = 0.0
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    y = np.asarray(y, dtype=float)[:, None]
    s = np.asarray(sigma, dtype=float)[:, None]
    z = (y - th[None, :]) / s
    p = w * np.exp(-0.5 * z * z - _LOG_SQRT_2PI) * ghat
    pt = p * th
    c0 = np.concatenate([np.zeros((p.shape[0], 1)), np.cumsum(p, axis=1)], axis=1)
    c1 = np.concatenate([np.zeros((p.shape[0], 1)), np.cumsum(pt, axis=1)], axis=1)
    s0 = c0[:, -1:]
    s1 = c1[:, -1:]

    lo = np.asarray(lo, dtype=float)[:, None]
    hi = np.asarray(hi, dtype=float)[:, None]
    qs = lo + (hi - lo) * np.linspace(0.0, 1.0, n_search)[None, :]
    idx = np.searchsorted(th, qs.ravel(), side="right").reshape(qs.shape)
    p0 = np.take_along_axis(c0, idx, axis=1)
    p1 = np.take_along_axis(c1, idx, axis=1)
    below = p1 - qs * p0

    m = p.shape[0]
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    out = np.empty((m, taus.size))
    flat = np.zeros(m, dtype=bool)
    rows = np.arange(m)
    step = (hi - lo)[:, 0] / (n_search - 1)
    for j, tau in enumerate(taus):
        f = tau * (s1 - qs * s0) - below
        span = f.max(axis=1) - f.min(axis=1)
        flat |= span < 1e-14
        k = np.argmin(f, axis=1)
        inner = (k > 0) & (k < n_search - 1)
        kk = np.clip(k, 1, n_search - 2)
        f0 = f[rows, kk - 1]
        f1 = f[rows, kk]
        f2 = f[rows, kk + 1]
        curv = f0 - 2.0 * f1 + f2
        ok = inner & (curv > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            shift = np.where(ok, 0.5 * step * (f0 - f2) / np.where(ok, curv, 1.0), 0.0)
        shift = np.clip(shift, -step, step)
        out[:, j] = qs[rows, k] + np.where(ok, shift, 0.0)
    out[flat] = np.nan
    return out, flat


# -------------------------------------------------------------- oracle path


def _gauss_posterior(prior: Gaussian, y, sigma):
    w = prior.var / (prior.var + sigma**2)
    return prior.mean + w * (y - prior.mean), np.sqrt(w) * sigma


def _mixture_posterior(prior: GaussianMixture, y, sigma):
    """Posterior component weights, means and sds; broadcasts over ``y``."""
    y = np.asarray(y, dtype=float)[..., None]
    sigma = np.asarray(sigma, dtype=float)[..., None]
    mu, v, pw = prior.means, prior.variances, prior.weights
    tot = v + sigma**2
    logw = np.log(pw) - 0.5 * (y - mu) ** 2 / tot - 0.5 * np.log(tot)
    logw -= special.logsumexp(logw, axis=-1, keepdims=True)
    wk = v / tot
    return np.exp(logw), mu + wk * (y - mu), np.sqrt(wk) * sigma


def _discrete_posterior(prior: Discrete, y, sigma):
    y = np.asarray(y, dtype=float)[..., None]
    sigma = np.asarray(sigma, dtype=float)[..., None]
    logw = np.log(np.where(prior.weights > 0, prior.weights, 1e-300))
    logw = logw - 0.5 * ((y - prior.support) / sigma) ** 2
    logw = np.where(prior.weights > 0, logw, -np.inf)
    logw -= special.logsumexp(logw, axis=-1, keepdims=True)
    return np.exp(logw)


class _QuadPosterior:
    """Posterior for a prior without conjugate structure, by adaptive quadrature."""

    SPAN = 14.0

    def __init__(self, prior, y: float, sigma: float):
        self.prior = prior
        self.y = y
        self.sigma = sigma
        self.lo = y - self.SPAN * sigma
        self.hi = y + self.SPAN * sigma
        grid = np.linspace(self.lo, self.hi, 2001)
        lg = self._log_kernel_raw(grid)
        self.shift = float(np.max(lg))
        self.kinks = [k for k in self._kinks() if self.lo < k < self.hi]
        self.den = self._integral(self.lo, self.hi)

    def _kinks(self):
        if isinstance(self.prior, Laplace):
            return [self.prior.loc]
        return [0.0]

    def _log_kernel_raw(self, u):
        return -0.5 * ((self.y - u) / self.sigma) ** 2 + self.prior.logpdf(u)

    def _f(self, u):
        return np.exp(self._log_kernel_raw(u) - self.shift)

    def _integral(self, a, b):
        if b <= a:
            return 0.0
        pts = [k for k in self.kinks if a < k < b]
        val, _ = integrate.quad(self._f, a, b, points=pts or None, epsabs=1e-14,
                                epsrel=1e-12, limit=400)
        return val

    def cdf(self, x: float) -> float:
        if x <= self.lo:
            return 0.0
        if x >= self.hi:
            return 1.0
        return min(max(self._integral(self.lo, x) / self.den, 0.0), 1.0)

    def quantile(self, tau: float) -> float:
        return optimize.brentq(lambda x: self.cdf(x) - tau, self.lo, self.hi,
                               xtol=1e-11, rtol=4 * np.finfo(float).eps, maxiter=200)


@lru_cache(maxsize=4096)
def _quad_posterior(prior, y: float, sigma: float) -> _QuadPosterior:
    return _QuadPosterior(prior, y, sigma)


def oracle_posterior_cdf(prior, y: float, sigma: float, x: float) -> float:
    """``P(theta <= x | Y = y)`` under a known prior and ``N(theta, sigma^2)`` noise."""
    if not sigma > 0:
        raise InvalidInput("sigma must be positive")
    if isinstance(prior, Gaussian):
        m, s = _gauss_posterior(prior, y, sigma)
        return float(stats.norm.cdf(x, m, s))
    if isinstance(prior, GaussianMixture):
        w, m, s = _mixture_posterior(prior, y, sigma)
        return float(np.sum(w * stats.norm.cdf(x, m, s)))
    if isinstance(prior, Discrete):
        w = _discrete_posterior(prior, y, sigma)
        return float(min(np.sum(w[prior.support <= x]), 1.0))
    if isinstance(prior, (Laplace, ScaledStudentT)):
        return _quad_posterior(prior, float(y), float(sigma)).cdf(float(x))
    raise InvalidInput(f"unsupported prior {type(prior).__name__}")


def _bisect_mixture(w, m, s, tau, tol=1e-12):
    lo = np.min(m - 40 * s, axis=-1)
    hi = np.max(m + 40 * s, axis=-1)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        c = np.sum(w * special.ndtr((mid[..., None] - m) / s), axis=-1)
        below = c < tau
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < tol:
            break
    return hi


def oracle_posterior_quantiles(prior, tau: float, y, sigma) -> np.ndarray:
    """Vectorized :func:`oracle_posterior_quantile` over arrays ``y`` and ``sigma``."""
    if not 0.0 < tau < 1.0:
        raise InvalidInput(f"tau must lie in (0, 1), got {tau}")
    y, sigma = np.broadcast_arrays(np.asarray(y, float), np.asarray(sigma, float))
    if isinstance(prior, Gaussian):
        m, s = _gauss_posterior(prior, y, sigma)
        return m + s * special.ndtri(tau)
    if isinstance(prior, GaussianMixture):
        w, m, s = _mixture_posterior(prior, y, sigma)
        return _bisect_mixture(w, m, s, tau)
    if isinstance(prior, Discrete):
        w = _discrete_posterior(prior, y, sigma)
        cum = np.cumsum(w, axis=-1)
        # tolerate rounding in the cumulative sum at exact atom boundaries
        k = np.argmax(cum >= tau - 1e-14, axis=-1)
        return prior.support[k]
    out = np.empty(y.shape)
    for ix in np.ndindex(y.shape):
        out[ix] = _quad_posterior(prior, float(y[ix]), float(sigma[ix])).quantile(tau)
    return out


def oracle_posterior_quantile(prior, tau: float, y: float, sigma: float) -> float:
    """Generalized inverse ``inf{u : CDF(u) >= tau}`` of the oracle posterior."""
    return float(oracle_posterior_quantiles(prior, tau, y, sigma))


def oracle_np_ebci(unit: int, prior, ds: Dataset, alpha) -> Interval:
    a = as_alpha(alpha)
    y, s = float(ds.y[unit]), float(ds.sigma[unit])
    lo = oracle_posterior_quantile(prior, a / 2, y, s)
    hi = oracle_posterior_quantile(prior, 1 - a / 2, y, s)
    return Interval(lo, hi, Method.ORACLE_NP, unit)


def oracle_np_ebci_all(prior, ds: Dataset, alpha) -> tuple[np.ndarray, np.ndarray]:
    a = as_alpha(alpha)
    lo = oracle_posterior_quantiles(prior, a / 2, ds.y, ds.sigma)
    hi = oracle_posterior_quantiles(prior, 1 - a / 2, ds.y, ds.sigma)
    return lo, hi


# ----------------------------------------------------------- NP-EBCI intervals


def _make_interval(lo, hi, unit, extra=()):
    flags = tuple(extra)
    if lo > hi:
        lo, hi = hi, lo
        flags = flags + ("crossed",)
    return Interval(float(lo), float(hi), Method.NPEBCI, unit, flags)


def np_ebci(unit: int, ds: Dataset, alpha, h: float, kernel: TaperKernelFT | None = None,
            search=None, theta_grid=None) -> Interval:
    """Leave-one-out NP-EBCI for one unit.

    Endpoints that cross are swapped and the interval is flagged ``crossed``.
    """
    a = as_alpha(alpha)
    if ds.n < 2:
        raise InvalidInput("NP-EBCI needs at least 2 units")
    if theta_grid is None:
        theta_grid = default_theta_grid(ds)
    gh = density_from_table(cf_ratio_table(ds, h, kernel, unit), theta_grid)
    y, s = float(ds.y[unit]), float(ds.sigma[unit])
    sd = float(np.std(np.delete(ds.y, unit)))
    ends = []
    for tau in (a / 2, 1 - a / 2):
        req = QuantileRequest(tau, y, s)
        win = search if search is not None else clip_search(default_search(req, sd), gh)
        ends.append(solve_quantile(req, gh, win).q)
    return _make_interval(ends[0], ends[1], unit)


def search_windows(y, sigma, sd_y, theta_grid, n: int = N_SEARCH):
    """Default per-unit search windows clipped to the interior of ``theta_grid``."""
    y = np.asarray(y, dtype=float)
    half = SEARCH_SIGMAS * np.asarray(sigma, dtype=float) + SEARCH_SDS * sd_y
    step = theta_grid[1] - theta_grid[0]
    margin = (EDGE_STEPS + 1) * step
    lo = np.maximum(y - half, theta_grid[0] + margin)
    hi = np.minimum(y + half, theta_grid[-1] - margin)
    return lo, hi


def np_ebci_all(ds: Dataset, alpha, h: float, kernel: TaperKernelFT | None = None,
                theta_grid=None, chunk: int = 256, n_search: int = N_SEARCH):
    """Leave-one-out NP-EBCI for every unit, batched.

    Returns ``(lower, upper, flags)`` arrays; ``flags`` holds a tuple of
    strings per unit (``crossed`` or ``flat``). Units with a flat objective
    get NaN endpoints.
    """
    a = as_alpha(alpha)
    if theta_grid is None:
        theta_grid = default_theta_grid(ds)
    n = ds.n
    lower = np.empty(n)
    upper = np.empty(n)
    flags: list[tuple] = [()] * n
    ratios = LooRatios(ds, h, kernel)
    basis = TrigBasis(theta_grid, ratios.grid)
    y_sum, y_sq = ds.y.sum(), (ds.y**2).sum()
    for start in range(0, n, chunk):
        units = np.arange(start, min(start + chunk, n))
        G = basis.invert(ratios.columns(units)).T
        yu = ds.y[units]
        # leave-one-out sd of Y for the search window
        m1 = (y_sum - yu) / (n - 1)
        sd = np.sqrt(np.maximum((y_sq - yu**2) / (n - 1) - m1**2, 0.0))
        lo, hi = search_windows(yu, ds.sigma[units], sd, theta_grid)
        q, flat = batch_quantiles(G, theta_grid, yu, ds.sigma[units], [a / 2, 1 - a / 2],
                                  lo, hi, n_search)
        for k, i in enumerate(units):
            if flat[k]:
                lower[i] = upper[i] = np.nan
                flags[i] = ("flat",)
                continue
            l, u = q[k]
            if l > u:
                l, u = u, l
                flags[i] = ("crossed",)
            lower[i], upper[i] = l, u
    return lower, upper, flags


def posterior_mean_plugin(y: float, sigma: float, gh: DeconvEstimate) -> float:
    """Plug-in posterior mean ``int theta k ghat / int k ghat`` with a Gaussian kernel ``k``."""
    p = _kernel_weights(y, sigma, gh)
    den = float(p.sum())
    if den <= 1e-12:
        raise DegenerateDenominator(f"posterior normalizer {den:.3g} too small")
    return float(p @ gh.theta_grid) / den


__all__ = [
    "DegenerateDenominator",
    "FlatObjective",
    "GridCoverage",
    "QuantileRequest",
    "SolveReport",
    "batch_quantiles",
    "clip_search",
    "default_search",
    "np_ebci",
    "np_ebci_all",
    "objective",
    "objective_curve",
    "oracle_np_ebci",
    "oracle_np_ebci_all",
    "oracle_posterior_cdf",
    "oracle_posterior_quantile",
    "oracle_posterior_quantiles",
    "posterior_mean_plugin",
    "search_windows",
    "solve_quantile",
    "solve_quantile_spectral",
]
