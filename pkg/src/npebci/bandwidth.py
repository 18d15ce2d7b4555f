"""V-fold bandwidth selection scored against leave-fold-out NPMLE posteriors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from npebci.core import Dataset, InvalidInput, NpebciError, as_alpha
from npebci.npmle import GRID_SIZE, NpmleFit, coverage_under_fit_batch, fit_npmle
from npebci.quantile import N_SEARCH, batch_quantiles, search_windows
from npebci.spectral import (
    TaperKernelFT,
    TrigBasis,
    cf_ratio_table,
    default_theta_grid,
)

N_FOLDS = 5
N_CANDIDATES = 12
CANDIDATE_RANGE = (0.15, 1.5)
LAMBDA = 100.0
MAX_FAIL_FRACTION = 0.05


class BadFoldCount(InvalidInput):
    pass


class Rule(str, enum.Enum):
    HARD = "HardFeasible"
    PENALIZED = "Penalized"


@dataclass(frozen=True)
class BandwidthEval:
    h: float
    C_hat: float
    L_hat: float
    n_failed: int = 0
    n_crossed: int = 0
    feasible_failures: bool = True


@dataclass(frozen=True)
class BandwidthReport:
    candidates: tuple[float, ...]
    C_hat: tuple[float, ...]
    L_hat: tuple[float, ...]
    chosen: float
    rule: Rule
    lam: float | None = None
    fallback: bool = False
    alpha: float = 0.05
    L_naive: float | None = None
    flags: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "rule": self.rule.value,
            "lambda": self.lam,
            "fallback": self.fallback,
            "chosen": self.chosen,
            "L_naive": self.L_naive,
            "candidates": [
                {"h": h, "C_hat": _num(c), "L_hat": _num(l), **dict(f)}
                for h, c, l, f in zip(self.candidates, self.C_hat, self.L_hat,
                                      self.flags or [()] * len(self.candidates))
            ],
        }


def _num(x):
    return None if x is None or not np.isfinite(x) else float(x)


def make_folds(n: int, V: int = N_FOLDS, seed: int = 0) -> list[np.ndarray]:
    """Random partition of ``range(n)`` into ``V`` folds whose sizes differ by at most one."""
    if not 2 <= V <= n:
        raise BadFoldCount(f"need 2 <= V <= n, got V={V}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, V)]


def default_candidates(ds: Dataset, k: int = N_CANDIDATES,
                       rel_range: tuple[float, float] = CANDIDATE_RANGE) -> np.ndarray:
    sd = float(np.std(ds.y))
    return np.geomspace(rel_range[0] * sd, rel_range[1] * sd, k)


def naive_length(ds: Dataset, alpha) -> float:
    z = stats.norm.ppf(1 - as_alpha(alpha) / 2)
    return float(np.mean(2 * z * ds.sigma))


def fold_fits(ds: Dataset, folds, grid_size: int = GRID_SIZE, **em) -> list[NpmleFit]:
    return [fit_npmle(ds, grid_size=grid_size, exclude=f, **em) for f in folds]


def evaluate_bandwidth(
    h: float, ds: Dataset, folds, alpha, kernel: TaperKernelFT | None = None,
    fits: list[NpmleFit] | None = None, theta_grid=None, basis: TrigBasis | None = None,
    n_search: int = N_SEARCH,
) -> BandwidthEval:
    """Average NPMLE-scored conditional coverage and average length at bandwidth ``h``.

    For every fold one CF-ratio table is built from the out-of-fold units and
    reused for all held-out units. Units whose solver fails are dropped from
    the averages; when more than 5% fail the candidate is marked infeasible.
    """
    a = as_alpha(alpha)
    if not h > 0:
        raise InvalidInput("bandwidth must be positive")
    if theta_grid is None:
        theta_grid = default_theta_grid(ds)
    if fits is None:
        fits = fold_fits(ds, folds)
    cover = np.full(ds.n, np.nan)
    length = np.full(ds.n, np.nan)
    n_crossed = 0
    for fold, fit in zip(folds, fits):
        table = cf_ratio_table(ds, h, kernel, leave_out=fold)
        if basis is None or basis.grid.h != h:
            basis = TrigBasis(theta_grid, table.grid)
        ghat = basis.invert(table.weighted())[None, :]
        train = np.ones(ds.n, dtype=bool)
        train[fold] = False
        sd = float(np.std(ds.y[train]))
        y, s = ds.y[fold], ds.sigma[fold]
        lo, hi = search_windows(y, s, sd, theta_grid)
        q, flat = batch_quantiles(ghat, theta_grid, y, s, [a / 2, 1 - a / 2], lo, hi,
                                  n_search)
        ql, qu = q[:, 0], q[:, 1]
        crossed = ~flat & (ql > qu)
        n_crossed += int(crossed.sum())
        ql, qu = np.where(crossed, qu, ql), np.where(crossed, ql, qu)
        ok = ~flat
        cv = np.full(fold.size, np.nan)
        if ok.any():
            cv[ok] = coverage_under_fit_batch(fit, y[ok], s[ok], ql[ok], qu[ok])
        cover[fold] = cv
        length[fold] = qu - ql
    failed = np.isnan(cover)
    n_failed = int(failed.sum())
    if n_failed == ds.n:
        raise NpebciError(f"every unit failed at h={h:.4g}")
    return BandwidthEval(
        float(h),
        float(np.mean(cover[~failed])),
        float(np.mean(length[~failed])),
        n_failed,
        n_crossed,
        n_failed <= MAX_FAIL_FRACTION * ds.n,
    )


def _order(candidates):
    h = np.asarray(candidates, dtype=float)
    if h.size == 0:
        raise InvalidInput("at least one candidate bandwidth is required")
    return h


def select_bandwidth_penalized(candidates, C_hat, L_hat, alpha, L_naive: float,
                               lam: float = LAMBDA, usable=None) -> BandwidthReport:
    """Minimize ``L/L_naive + lam * max(1 - alpha - C, 0)^2``; ties go to the smaller ``h``."""
    a = as_alpha(alpha)
    if lam < 0:
        raise InvalidInput("lambda must be nonnegative")
    h = _order(candidates)
    C = np.asarray(C_hat, dtype=float)
    L = np.asarray(L_hat, dtype=float)
    ok = np.isfinite(C) & np.isfinite(L)
    if usable is not None:
        ok &= np.asarray(usable, dtype=bool)
    if not ok.any():
        raise NpebciError("no candidate bandwidth produced usable estimates")
    with np.errstate(invalid="ignore"):
        crit = L / L_naive + lam * np.maximum((1 - a) - C, 0.0) ** 2
    crit = np.where(ok, crit, np.inf)
    best = crit.min()
    pick = min(h[crit == best])
    return BandwidthReport(tuple(h.tolist()), tuple(C.tolist()), tuple(L.tolist()),
                           float(pick), Rule.PENALIZED, lam, False, a, L_naive)


def select_bandwidth_hard(candidates, C_hat, L_hat, alpha, L_naive: float | None = None,
                          lam: float = LAMBDA, usable=None) -> BandwidthReport:
    """Shortest average length among candidates meeting the coverage target.

    Falls back to the penalized rule (and records it) when none qualify.
    """
    a = as_alpha(alpha)
    h = _order(candidates)
    C = np.asarray(C_hat, dtype=float)
    L = np.asarray(L_hat, dtype=float)
    ok = np.isfinite(C) & np.isfinite(L)
    if usable is not None:
        ok &= np.asarray(usable, dtype=bool)
    feasible = ok & (C >= 1 - a)
    if not feasible.any():
        if L_naive is None:
            raise InvalidInput("L_naive is required for the penalized fallback")
        rep = select_bandwidth_penalized(h, C, L, a, L_naive, lam, usable=ok)
        return BandwidthReport(rep.candidates, rep.C_hat, rep.L_hat, rep.chosen,
                               Rule.PENALIZED, lam, True, a, L_naive)
    Lf = np.where(feasible, L, np.inf)
    pick = min(h[Lf == Lf.min()])
    return BandwidthReport(tuple(h.tolist()), tuple(C.tolist()), tuple(L.tolist()),
                           float(pick), Rule.HARD, None, False, a, L_naive)


def select_bandwidth(
    ds: Dataset, alpha=0.05, candidates=None, V: int = N_FOLDS, seed: int = 0,
    rule: str | Rule = Rule.HARD, lam: float = LAMBDA, kernel: TaperKernelFT | None = None,
    grid_size: int = GRID_SIZE, theta_grid=None,
) -> BandwidthReport:
    """Run the full V-fold selector and apply the requested rule."""
    a = as_alpha(alpha)
    rule = Rule(rule)
    folds = make_folds(ds.n, V, seed)
    fits = fold_fits(ds, folds, grid_size)
    h = np.sort(default_candidates(ds) if candidates is None else np.asarray(candidates, float))
    if theta_grid is None:
        theta_grid = default_theta_grid(ds)
    C = np.full(h.size, np.nan)
    L = np.full(h.size, np.nan)
    usable = np.zeros(h.size, dtype=bool)
    flags = []
    for k, hk in enumerate(h):
        try:
            ev = evaluate_bandwidth(hk, ds, folds, a, kernel, fits, theta_grid)
        except NpebciError as exc:
            flags.append((("error", type(exc).__name__),))
            continue
        C[k], L[k], usable[k] = ev.C_hat, ev.L_hat, ev.feasible_failures
        flags.append((("failed", ev.n_failed), ("crossed", ev.n_crossed)))
    Ln = naive_length(ds, a)
    if rule is Rule.HARD:
        rep = select_bandwidth_hard(h, C, L, a, Ln, lam, usable)
    else:
        rep = select_bandwidth_penalized(h, C, L, a, Ln, lam, usable)
    return BandwidthReport(rep.candidates, rep.C_hat, rep.L_hat, rep.chosen, rep.rule,
                           rep.lam, rep.fallback, a, Ln, tuple(flags))


__all__ = [
    "BadFoldCount",
    "BandwidthEval",
    "BandwidthReport",
    "Rule",
    "default_candidates",
    "evaluate_bandwidth",
    "fold_fits",
    "make_folds",
    "naive_length",
    "select_bandwidth",
    "select_bandwidth_hard",
    "select_bandwidth_penalized",
]
