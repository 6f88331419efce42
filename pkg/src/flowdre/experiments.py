"""Experiment runners shared by the CLI, the scripts and the acceptance suite.

Functions here return plain results and never touch the filesystem.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .conditional import AnalyticBayes, ConditionalSpec, conditional_sample, train_softmax_classifier
from .config import RunConfig, _sub_rng
from .evaluation import energy_distance, histogram_mode_1d, nn_distance
from .flow import FlowConfig, ParticleBatch, sample, simulate
from .priors import Empirical, Gaussian, GaussianMixture, sample_prior, sample_target
from .trainer import Mode, TrainConfig, TrainingDiverged, train

NN_QUANTILES = (0.1, 0.5, 0.9)


def sampling_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def reference_draws(target, n: int, seed: int) -> np.ndarray:
    if isinstance(target, Empirical):
        return target.points
    return sample_target(target, n, _sub_rng(seed, "eval"))


def sample_metrics(points, reference, mode_bin: float | None = None) -> dict:
    nn = nn_distance(points, reference)
    out = {"energy_distance": energy_distance(points, reference),
           "nn_distance_quantiles": {str(q): float(np.quantile(nn, q)) for q in NN_QUANTILES}}
    if mode_bin is not None and np.shape(points)[1] == 1:
        out["mode"] = histogram_mode_1d(np.asarray(points)[:, 0], mode_bin)
    return out


# --- chasm -----------------------------------------------------------------

@dataclass
class StaleResult:
    which: str
    status: str  # "ok" or "diverged"
    target_mean: tuple
    K: int
    x0: np.ndarray | None = None
    xK: np.ndarray | None = None
    losses: list = field(default_factory=list)
    diverged_step: int | None = None

    @property
    def distance(self) -> float:
        if self.xK is None:
            return float("nan")
        return float(np.linalg.norm(self.xK.mean(axis=0) - np.asarray(self.target_mean)))


def chasm_source(cfg: RunConfig) -> Empirical:
    c = cfg["chasm"]
    d = len(c["near_mean"])
    pts = np.sqrt(c["source_var"]) * _sub_rng(cfg.seed, "source").standard_normal((c["source_n"], d))
    return Empirical(pts, "source")


def stale_config(cfg: RunConfig, K: int) -> TrainConfig:
    c, t = cfg["chasm"], cfg["train"]
    steps = c["stale_steps"]
    milestones = tuple(sorted({m for m in (int(0.8 * steps), int(0.9 * steps)) if 0 < m < steps}))
    return TrainConfig(objective=c["stale_objective"],
                       flow=FlowConfig(c["stale_divergence"], c["stale_eta"], c["stale_nu"], K, 0),
                       batch_size=t["batch_size"], steps=steps, lr=c["stale_lr"],
                       lr_decay=t["lr_decay"], milestones=milestones,
                       ema_decay=t["ema_decay"], mode=Mode.STALE_BASELINE, seed=cfg.seed,
                       log_every=t["log_every"], hidden=t["hidden"], activation=t["activation"],
                       out_scale=t["out_scale"])


def chasm_stale(cfg: RunConfig, which: str) -> StaleResult:
    """Fit the stale estimator source/target, then flow fresh source draws."""
    c = cfg["chasm"]
    mean = c[f"{which}_mean"]
    K = c[f"{which}_K"]
    tc = stale_config(cfg, K)
    source = chasm_source(cfg)
    res = StaleResult(which, "ok", tuple(mean), K)
    try:
        state = train(tc, Gaussian(mean, c["target_var"]), source)
    except TrainingDiverged as exc:
        res.status, res.diverged_step, res.losses = "diverged", exc.step, exc.history
        return res
    res.losses = [h["loss"] for h in state.history]
    model = state.eval_model(cfg["experiment"]["use_ema"])
    rng = sampling_rng(cfg.seed)
    x0 = ParticleBatch(sample_prior(source, cfg["experiment"]["n_samples"], rng), 0, "source")
    try:
        out = simulate(model, x0, K, tc.flow, rng)
    except FloatingPointError:
        res.status = "diverged"
        res.x0 = x0.points
        return res
    res.x0, res.xK = x0.points, out.points
    return res


def chasm_flow_guided(cfg: RunConfig, callback=None):
    """Flow-guided training on the far pair; returns the final state."""
    c = cfg["chasm"]
    target = Gaussian(c["far_mean"], c["target_var"])
    return train(cfg.train_config(), target, chasm_source(cfg), callback=callback)


def monotone_closer(distances, tol: float) -> bool:
    """Every later distance is at most the running minimum plus ``tol``."""
    best = np.inf
    for d in distances:
        if d > best + tol:
            return False
        best = min(best, d)
    return True


# --- sweeps ----------------------------------------------------------------

def k_sweep(model, prior, flow: FlowConfig, reference, totals, n: int, seed: int):
    """Energy distance after each total flow length, continuing one particle batch."""
    totals = sorted(totals)
    rng = sampling_rng(seed)
    batch = ParticleBatch(sample_prior(prior, n, rng), 0, "prior")
    rows = []
    for total in totals:
        batch = simulate(model, batch, total - batch.steps_taken, flow, rng)
        rows.append((total, energy_distance(batch.points, reference)))
    return rows


# --- conditional -----------------------------------------------------------

def sample_mixture_labeled(mix: GaussianMixture, n: int, rng):
    means = np.asarray(mix.means, dtype=float)
    comp = rng.choice(len(mix.weights), size=n, p=np.asarray(mix.weights, dtype=float))
    return means[comp] + np.sqrt(mix.var) * rng.standard_normal((n, means.shape[1])), comp


def build_classifier(cfg: RunConfig, target):
    if not isinstance(target, GaussianMixture):
        raise ValueError("conditional sampling needs a mixture target")
    c = cfg["conditional"]
    if c["classifier"] == "analytic":
        return AnalyticBayes(target)
    X, y = sample_mixture_labeled(target, 10_000, _sub_rng(cfg.seed, "classifier"))
    return train_softmax_classifier(X, y, len(target.weights), hidden=c["classifier_hidden"],
                                    steps=c["classifier_steps"], seed=cfg.seed)


def conditional_pair(model, clf, cfg: RunConfig, prior, n: int):
    """Conditional and unconditional samples drawn under the same seed."""
    c = cfg["conditional"]
    flow = cfg.flow_config()
    spec = ConditionalSpec(c["class"], c["phi"])
    cond = conditional_sample(model, clf, spec, prior, flow, n, sampling_rng(cfg.seed))
    plain = sample(model, prior, flow, n, sampling_rng(cfg.seed))
    return cond, plain


def fraction_nearest(points, means, n: int) -> float:
    d = np.linalg.norm(np.asarray(points)[:, None, :] - np.asarray(means)[None], axis=2)
    return float(np.mean(d.argmin(axis=1) == n))


# --- translation -----------------------------------------------------------

def translate_batch(model, source: Empirical, flow: FlowConfig, n: int, seed: int):
    rng = sampling_rng(seed)
    x0 = ParticleBatch(sample_prior(source, n, rng), 0, source.name)
    return x0, simulate(model, x0, flow.K + flow.kappa, flow, rng)


def cross_diameter(A, B) -> float:
    """Largest distance between a point of ``A`` and a point of ``B``."""
    return float(cdist(A, B).max())
