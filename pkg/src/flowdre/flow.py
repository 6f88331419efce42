"""Euler-Maruyama simulation of the stale-ratio gradient flow.

One step moves every particle as

    x <- x - eta * grad_x f'(r(x)) + nu * xi,    xi ~ N(0, I)

where ``r`` is the (frozen) density-ratio network.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .divergences import FDivergence, ConfigError, f_prime_dlogr
from .nn_core import DensityRatioModel, mlp_value_and_input_grad
from .priors import prior_name, sample_prior


class FlowError(FloatingPointError):
    def __init__(self, msg, step=None, particle=None):
        super().__init__(msg)
        self.step = step
        self.particle = particle


@dataclass(frozen=True)
class FlowConfig:
    divergence: FDivergence = FDivergence.PEARSON_CHI2
    eta: float = 3.0
    nu: float = 1e-2
    K: int = 100
    kappa: int = 20
    langevin_consistent: bool = False
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "divergence", FDivergence(self.divergence))
        if not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if self.K < 0 or self.kappa < 0:
            raise ConfigError("K and kappa must be >= 0")
        if self.langevin_consistent:
            if not self.gamma > 0:
                raise ConfigError("gamma must be > 0")
            object.__setattr__(self, "nu", float(np.sqrt(2.0 * self.gamma * self.eta)))
        elif self.nu < 0:
            raise ConfigError("nu must be >= 0")


@dataclass
class ParticleBatch:
    points: np.ndarray
    steps_taken: int = 0
    source: str = ""
    seed: int | None = None
    snapshots: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2:
            raise ValueError("particles must be an (n, d) array")
        if self.steps_taken < 0:
            raise ValueError("steps_taken must be >= 0")

    @property
    def mean(self):
        return self.points.mean(axis=0)


def _check_pairing(model: DensityRatioModel, div: FDivergence):
    if div is FDivergence.PEARSON_CHI2:
        if model.head != "direct":
            raise ConfigError("pearson_chi2 flow needs a direct-ratio head (lsif)")
    elif model.head != "log":
        raise ConfigError(f"{div.value} flow needs a log-ratio head (lr)")


def drift(model: DensityRatioModel, div, X) -> np.ndarray:
    """grad_x f'(r(x)) per particle, by the chain rule through the network."""
    div = FDivergence(div)
    _check_pairing(model, div)
    if div is FDivergence.PEARSON_CHI2:
        def factor(out):
            return np.full_like(out, 2.0)
    else:
        def factor(out):
            return f_prime_dlogr(div, out)
    out, g = mlp_value_and_input_grad(model, X, factor)
    if not np.all(np.isfinite(out)):
        bad = int(np.argmin(np.isfinite(out)))
        raise FlowError(f"non-finite network output at particle {bad}", particle=bad)
    return g


def flow_step(X, drift_vals, eta: float, nu: float, rng: np.random.Generator) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != np.shape(drift_vals):
        raise ValueError(f"particles {X.shape} and drift {np.shape(drift_vals)} differ in shape")
    with np.errstate(over="ignore", invalid="ignore"):
        out = X - eta * drift_vals
        if nu > 0:
            out = out + nu * rng.standard_normal(X.shape)
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise FlowError(f"particle {i} became non-finite", particle=i)
    return out


def simulate_with(drift_fn, X0: ParticleBatch, steps: int, eta: float, nu: float,
                  rng, snapshot_every: int = 0) -> ParticleBatch:
    """Run ``steps`` Euler-Maruyama steps using an arbitrary drift callable."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    X = X0.points
    snaps = []
    for k in range(steps):
        try:
            X = flow_step(X, drift_fn(X), eta, nu, rng)
        except FlowError as exc:
            exc.step = X0.steps_taken + k
            exc.args = (f"step {exc.step}: {exc.args[0]}",)
            raise
        if snapshot_every and (k + 1) % snapshot_every == 0:
            snaps.append((X0.steps_taken + k + 1, X.copy()))
    return replace(X0, points=X, steps_taken=X0.steps_taken + steps, snapshots=snaps)


def simulate(model: DensityRatioModel, X0: ParticleBatch, steps: int, cfg: FlowConfig,
             rng, snapshot_every: int = 0) -> ParticleBatch:
    div = cfg.divergence
    _check_pairing(model, div)
    return simulate_with(lambda X: drift(model, div, X), X0, steps, cfg.eta, cfg.nu, rng,
                         snapshot_every)


def sample(model: DensityRatioModel, prior, cfg: FlowConfig, n: int, rng,
           snapshot_every: int = 0, drift_fn=None) -> ParticleBatch:
    """Draw from the prior, then run K bridging plus kappa refinement steps."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if drift_fn is None:
        _check_pairing(model, cfg.divergence)
        drift_fn = lambda X: drift(model, cfg.divergence, X)  # noqa: E731
    x0 = ParticleBatch(sample_prior(prior, n, rng), 0, prior_name(prior))
    return simulate_with(drift_fn, x0, cfg.K + cfg.kappa, cfg.eta, cfg.nu, rng, snapshot_every)


# --- particle files --------------------------------------------------------

def write_particles(path, batch: ParticleBatch, seed: int | None = None) -> None:
    path = Path(path)
    d = batch.points.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(d)])
        for row in batch.points:
            w.writerow([repr(float(v)) for v in row])
    meta = {"steps_taken": batch.steps_taken, "source": batch.source,
            "seed": seed if seed is not None else batch.seed}
    sidecar(path).write_text(json.dumps(meta, indent=2))


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_points(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty particle file")
    header = rows[0]
    if header != [f"x{i}" for i in range(len(header))]:
        raise ValueError(f"{path}: expected header x0,x1,..., got {header}")
    pts = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    return pts.reshape(-1, len(header))


def read_particles(path) -> ParticleBatch:
    pts = read_points(path)
    meta = {}
    if sidecar(path).exists():
        meta = json.loads(sidecar(path).read_text())
    return ParticleBatch(pts, meta.get("steps_taken", 0), meta.get("source", Path(path).stem),
                         meta.get("seed"))
