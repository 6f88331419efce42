"""Target distributions and flow priors for 2D toy problems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_JITTER = 1e-6


# --- targets ---------------------------------------------------------------

@dataclass(frozen=True)
class Gaussian:
    mean: tuple
    var: float

    def __post_init__(self):
        if self.var <= 0:
            raise ValueError("Gaussian variance must be positive")

    @property
    def dim(self):
        return len(self.mean)


@dataclass(frozen=True)
class GaussianMixture:
    weights: tuple
    means: tuple  # tuple of mean vectors
    var: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if self.var <= 0:
            raise ValueError("mixture variance must be positive")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if len(self.weights) != len(self.means):
            raise ValueError("one mean per mixture weight")

    @property
    def dim(self):
        return len(self.means[0])


@dataclass(frozen=True)
class SwissRoll2D:
    noise: float = 0.0
    scale: float = 2.0

    def __post_init__(self):
        if self.noise < 0 or self.scale <= 0:
            raise ValueError("swiss roll needs noise >= 0 and scale > 0")

    dim = 2


@dataclass(frozen=True)
class TwoMoons:
    noise: float = 0.0

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("two-moons noise must be >= 0")

    dim = 2


def sample_target(spec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(spec, Gaussian):
        mu = np.asarray(spec.mean, dtype=float)
        return mu + np.sqrt(spec.var) * rng.standard_normal((n, mu.size))
    if isinstance(spec, GaussianMixture):
        means = np.asarray(spec.means, dtype=float)
        comp = rng.choice(len(spec.weights), size=n, p=np.asarray(spec.weights, dtype=float))
        return means[comp] + np.sqrt(spec.var) * rng.standard_normal((n, means.shape[1]))
    if isinstance(spec, SwissRoll2D):
        # sklearn.datasets.make_swiss_roll's t-range and (t cos t, t sin t), rescaled
        t = 1.5 * np.pi * (1.0 + 2.0 * rng.uniform(size=n))
        pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) * (spec.scale / (4.5 * np.pi))
        return pts + spec.noise * rng.standard_normal((n, 2))
    if isinstance(spec, TwoMoons):
        # sklearn.datasets.make_moons layout, centred at the origin
        upper = rng.uniform(size=n) < 0.5
        th = np.pi * rng.uniform(size=n)
        x = np.where(upper, np.cos(th), 1.0 - np.cos(th))
        y = np.where(upper, np.sin(th), 0.5 - np.sin(th))
        pts = np.stack([x - 0.5, y - 0.25], axis=1)
        return pts + spec.noise * rng.standard_normal((n, 2))
    raise TypeError(f"unknown target spec {spec!r}")


# --- priors ----------------------------------------------------------------

@dataclass(frozen=True)
class UniformBox:
    low: tuple
    high: tuple

    def __post_init__(self):
        if len(self.low) != len(self.high) or any(a >= b for a, b in zip(self.low, self.high)):
            raise ValueError("uniform box needs low < high in every dimension")

    @property
    def dim(self):
        return len(self.low)

    @property
    def density(self) -> float:
        return float(1.0 / np.prod(np.subtract(self.high, self.low)))


@dataclass(frozen=True)
class StdGaussian:
    d: int

    @property
    def dim(self):
        return self.d


@dataclass(frozen=True, eq=False)
class DataDependentGaussian:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True, eq=False)
class Empirical:
    points: np.ndarray
    name: str = "empirical"

    def __post_init__(self):
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ValueError("empirical prior needs a non-empty (m, d) array")

    @property
    def dim(self):
        return self.points.shape[1]


class CholeskyError(np.linalg.LinAlgError):
    pass


def fit_ddp(points, jitter: float = DEFAULT_JITTER) -> DataDependentGaussian:
    """Gaussian fitted to a dataset: mean and population (1/m) covariance."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("fit_ddp needs at least two points in an (m, d) array")
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    mu = X.mean(axis=0)
    C = X - mu
    cov = C.T @ C / len(X)
    cov = 0.5 * (cov + cov.T)
    try:
        L = np.linalg.cholesky(cov + jitter * np.eye(len(mu)))
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(f"covariance is not positive definite with jitter={jitter}; "
                            "try a larger jitter") from exc
    return DataDependentGaussian(mu, cov, L)


def sample_prior(prior, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(prior, UniformBox):
        return rng.uniform(prior.low, prior.high, size=(n, prior.dim))
    if isinstance(prior, StdGaussian):
        return rng.standard_normal((n, prior.d))
    if isinstance(prior, DataDependentGaussian):
        z = rng.standard_normal((n, prior.dim))
        return prior.mean + z @ prior.chol.T
    if isinstance(prior, Empirical):
        idx = rng.integers(0, len(prior.points), size=n)
        return prior.points[idx].copy()
    raise TypeError(f"unknown prior {prior!r}")


def prior_name(prior) -> str:
    if isinstance(prior, Empirical):
        return prior.name
    return {UniformBox: "uniform", StdGaussian: "std_gaussian",
            DataDependentGaussian: "ddp"}[type(prior)]
