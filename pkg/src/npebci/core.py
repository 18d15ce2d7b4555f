"""Domain types, dataset validation and check-loss primitives."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats


class NpebciError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(NpebciError, ValueError):
    pass


class NonFiniteValue(InvalidInput):
    pass


class NonPositiveSigma(InvalidInput):
    pass


class TooFewUnits(InvalidInput):
    pass


class DuplicateId(InvalidInput):
    pass


class Method(str, enum.Enum):
    NAIVE = "naive"
    COX_MORRIS = "cox_morris"
    AKP = "akp"
    NPEBCI = "npebci"
    ORACLE_NP = "oracle_np"


@dataclass(frozen=True)
class Observation:
    y: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.y) and np.isfinite(self.sigma)):
            raise NonFiniteValue(f"non-finite observation ({self.y}, {self.sigma})")
        if self.sigma <= 0:
            raise NonPositiveSigma(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Noisy estimates ``y`` with known noise standard deviations ``sigma``.

    Arrays are copied and frozen on construction; use :func:`validate_dataset`
    to check the model invariants.
    """

    y: np.ndarray
    sigma: np.ndarray
    ids: tuple | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        s = np.array(self.sigma, dtype=float).ravel()
        if y.shape != s.shape:
            raise InvalidInput(f"y and sigma lengths differ ({y.size} vs {s.size})")
        y.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", s)
        if self.ids is not None:
            ids = tuple(self.ids)
            if len(ids) != y.size:
                raise InvalidInput("ids must align 1:1 with observations")
            object.__setattr__(self, "ids", ids)

    @classmethod
    def from_observations(cls, obs: Sequence[Observation], ids=None) -> "Dataset":
        return cls([o.y for o in obs], [o.sigma for o in obs], ids)

    def __len__(self) -> int:
        return self.y.size

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def obs(self) -> list[Observation]:
        return [Observation(float(a), float(b)) for a, b in zip(self.y, self.sigma)]

    def observation(self, i: int) -> Observation:
        return Observation(float(self.y[i]), float(self.sigma[i]))

    def label(self, i: int):
        return self.ids[i] if self.ids is not None else i

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        ids = None if self.ids is None else tuple(self.ids[j] for j in idx)
        return Dataset(self.y[idx], self.sigma[idx], ids)


def validate_dataset(ds: Dataset) -> Dataset:
    """Return ``ds`` unchanged, or raise if any model invariant fails."""
    bad = ~(np.isfinite(ds.y) & np.isfinite(ds.sigma))
    if bad.any():
        raise NonFiniteValue(f"non-finite value in row {int(np.argmax(bad))}")
    nonpos = ds.sigma <= 0
    if nonpos.any():
        i = int(np.argmax(nonpos))
        raise NonPositiveSigma(f"sigma must be positive (row {i}: {ds.sigma[i]})")
    if ds.n < 2:
        raise TooFewUnits(f"need at least 2 units, got {ds.n}")
    if ds.ids is not None and len(set(ds.ids)) != len(ds.ids):
        seen = set()
        for i in ds.ids:
            if i in seen:
                raise DuplicateId(f"duplicate unit id {i!r}")
            seen.add(i)
    return ds


@dataclass(frozen=True)
class Level:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def coverage(self) -> float:
        return 1.0 - self.alpha


def as_alpha(alpha) -> float:
    if isinstance(alpha, Level):
        return alpha.alpha
    return Level(float(alpha)).alpha


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    method: Method
    unit: int
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise InvalidInput(f"interval lower {self.lower} exceeds upper {self.upper}")
        object.__setattr__(self, "method", Method(self.method))

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, x: float) -> bool:
        return self.lower <= x <= self.upper


# ---------------------------------------------------------------- priors


def _normalize(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInput("weights must be a nonempty 1-d sequence")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInput("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise InvalidInput("weights sum to zero")
    return w / total


@dataclass(frozen=True)
class Gaussian:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0:
            raise InvalidInput("Gaussian variance must be positive")

    def pdf(self, x):
        return stats.norm.pdf(x, self.mean, np.sqrt(self.var))

    def cdf(self, x):
        return stats.norm.cdf(x, self.mean, np.sqrt(self.var))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * rng.standard_normal(size)

    def variance(self) -> float:
        return self.var

    def mean_value(self) -> float:
        return self.mean


@dataclass(frozen=True)
class Laplace:
    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidInput("Laplace scale must be positive")

    def pdf(self, x):
        return stats.laplace.pdf(x, self.loc, self.scale)

    def logpdf(self, x):
        return -np.abs(x - self.loc) / self.scale - math.log(2.0 * self.scale)

    def cdf(self, x):
        return stats.laplace.cdf(x, self.loc, self.scale)

    def sample(self, rng, size):
        return rng.laplace(self.loc, self.scale, size)

    def variance(self) -> float:
        return 2.0 * self.scale**2

    def mean_value(self) -> float:
        return self.loc


@dataclass(frozen=True)
class ScaledStudentT:
    scale: float
    dof: float

    def __post_init__(self):
        if not (self.scale > 0 and self.dof > 0):
            raise InvalidInput("scaled t needs positive scale and dof")

    def pdf(self, x):
        return stats.t.pdf(x, self.dof, scale=self.scale)

    def logpdf(self, x):
        v = self.dof
        const = (math.lgamma((v + 1) / 2) - math.lgamma(v / 2)
                 - 0.5 * math.log(v * math.pi) - math.log(self.scale))
        return const - 0.5 * (v + 1) * np.log1p((x / self.scale) ** 2 / v)

    def cdf(self, x):
        return stats.t.cdf(x, self.dof, scale=self.scale)

    def sample(self, rng, size):
        return self.scale * rng.standard_t(self.dof, size)

    def variance(self) -> float:
        if self.dof <= 2:
            return float("inf")
        return self.scale**2 * self.dof / (self.dof - 2)

    def mean_value(self) -> float:
        return 0.0


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Finite Gaussian mixture; ``components`` holds ``(weight, mean, var)``."""

    components: tuple

    def __post_init__(self):
        comps = [tuple(map(float, c)) for c in self.components]
        if not comps:
            raise InvalidInput("mixture needs at least one component")
        w = _normalize([c[0] for c in comps])
        if any(c[2] <= 0 for c in comps):
            raise InvalidInput("mixture component variances must be positive")
        object.__setattr__(
            self, "components", tuple((wk, c[1], c[2]) for wk, c in zip(w, comps))
        )

    @property
    def weights(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c[1] for c in self.components])

    @property
    def variances(self) -> np.ndarray:
        return np.array([c[2] for c in self.components])

    def pdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(
            self.weights * stats.norm.pdf(x, self.means, np.sqrt(self.variances)), -1
        )

    def cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(
            self.weights * stats.norm.cdf(x, self.means, np.sqrt(self.variances)), -1
        )

    def sample(self, rng, size):
        k = rng.choice(len(self.components), size=size, p=self.weights)
        return self.means[k] + np.sqrt(self.variances[k]) * rng.standard_normal(size)

    def variance(self) -> float:
        m = self.mean_value()
        return float(np.sum(self.weights * (self.variances + self.means**2)) - m**2)

    def mean_value(self) -> float:
        return float(np.sum(self.weights * self.means))


@dataclass(frozen=True, eq=False)
class Discrete:
    """Finitely supported prior.

    Support points are sorted on construction and duplicates merged by summing
    their weights, so ``support`` is always strictly increasing.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=float).ravel()
        w = _normalize(np.asarray(self.weights, dtype=float).ravel())
        if s.shape != w.shape:
            raise InvalidInput("support and weights must align")
        if not np.all(np.isfinite(s)):
            raise InvalidInput("support points must be finite")
        s_u, inv = np.unique(s, return_inverse=True)
        w_u = np.bincount(inv, weights=w, minlength=s_u.size)
        w_u = w_u / w_u.sum()
        s_u.flags.writeable = False
        w_u.flags.writeable = False
        object.__setattr__(self, "support", s_u)
        object.__setattr__(self, "weights", w_u)

    def pdf(self, x):
        raise TypeError("a discrete prior has no Lebesgue density")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.support, x, side="right")
        return np.concatenate([[0.0], np.cumsum(self.weights)])[idx]

    def sample(self, rng, size):
        return rng.choice(self.support, size=size, p=self.weights)

    def variance(self) -> float:
        m = self.mean_value()
        return float(np.sum(self.weights * self.support**2) - m**2)

    def mean_value(self) -> float:
        return float(np.sum(self.weights * self.support))


Prior = Gaussian | Laplace | ScaledStudentT | GaussianMixture | Discrete


# ------------------------------------------------------------ check loss


def check_function(u, tau: float):
    """Check (pinball) loss ``u * (tau - 1{u <= 0})``; broadcasts over ``u``."""
    if not 0.0 < tau < 1.0:
        raise InvalidInput(f"tau must lie in (0, 1), got {tau}")
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u <= 0))
    return float(out) if out.ndim == 0 else out


def knight_decomposition(x: float, y: float, tau: float) -> tuple[float, float]:
    """Split ``rho_tau(x - y) - rho_tau(x)`` into its linear and integral terms.

    The integral ``int_0^y (1{x <= s} - 1{x <= 0}) ds`` is piecewise linear in
    ``y`` and evaluated in closed form.
    """
    if not 0.0 < tau < 1.0:
        raise InvalidInput(f"tau must lie in (0, 1), got {tau}")
    linear = -y * (tau - (1.0 if x <= 0 else 0.0))
    if x > 0:
        integral = max(y - x, 0.0)
    else:
        integral = max(x - y, 0.0)
    return linear, integral


__all__ = [
    "Dataset",
    "Discrete",
    "DuplicateId",
    "Gaussian",
    "GaussianMixture",
    "Interval",
    "InvalidInput",
    "Laplace",
    "Level",
    "Method",
    "NonFiniteValue",
    "NonPositiveSigma",
    "NpebciError",
    "Observation",
    "Prior",
    "ScaledStudentT",
    "TooFewUnits",
    "as_alpha",
    "check_function",
    "knight_decomposition",
    "validate_dataset",
]
