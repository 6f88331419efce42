"""Training loop for the flow-guided ratio estimator.

Each iteration draws a data batch and a prior batch, pushes the prior batch
``K`` flow steps under the *current* network (no gradient through the flow),
and takes an Adam step on the Bregman loss between the two batches.  The
stale baseline skips the flow and fits the ratio prior/data directly.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .divergences import BregmanObjective, ConfigError, bregman_loss, pairing_check
from .flow import FlowConfig, ParticleBatch, simulate
from .nn_core import (AdamState, DensityRatioModel, EmaParams, adam_step, ema_update,
                      init_mlp, mlp_forward, mlp_grads)
from .priors import Empirical, prior_name, sample_prior, sample_target

log = logging.getLogger(__name__)


class Mode(str, Enum):
    FLOW_GUIDED = "flow_guided"
    STALE_BASELINE = "stale_baseline"


class TrainingDiverged(FloatingPointError):
    """Loss (or the flowed batch) went non-finite during training."""

    def __init__(self, step: int, history, cause: str = ""):
        super().__init__(f"training diverged at step {step}" + (f": {cause}" if cause else ""))
        self.step = step
        self.history = list(history)


@dataclass(frozen=True)
class TrainConfig:
    objective: BregmanObjective = BregmanObjective.LSIF
    flow: FlowConfig = field(default_factory=FlowConfig)
    batch_size: int = 256
    steps: int = 1000
    lr: float = 1e-4
    lr_decay: float = 0.1
    milestones: tuple = (800, 900)
    ema_decay: float = 0.998
    mode: Mode = Mode.FLOW_GUIDED
    seed: int = 0
    log_every: int = 1
    hidden: tuple = (128, 128, 128)
    activation: str = "softplus"
    out_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "objective", BregmanObjective(self.objective))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        pairing_check(self.objective, self.flow.divergence)
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        ms = self.milestones
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m >= self.steps or m < 0 for m in ms):
            raise ConfigError("milestones must be strictly increasing and inside [0, steps)")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.mode is Mode.FLOW_GUIDED and self.flow.K < 1:
            raise ConfigError("flow-guided training needs K >= 1")

    def lr_at(self, step: int) -> float:
        n = sum(step >= m for m in self.milestones)
        return self.lr * self.lr_decay ** n


@dataclass
class TrainState:
    model: DensityRatioModel
    adam: AdamState
    ema: EmaParams
    step: int = 0
    history: list = field(default_factory=list)  # dicts: step, loss, lr, flowed_mean

    def eval_model(self, use_ema: bool = True) -> DensityRatioModel:
        return self.model.with_params(self.ema.params) if use_ema else self.model


def _draw_data(target, n, rng):
    if isinstance(target, Empirical):
        return sample_prior(target, n, rng)
    return sample_target(target, n, rng)


def init_state(cfg: TrainConfig, dim: int) -> TrainState:
    dims = [dim, *cfg.hidden, 1]
    model = init_mlp(dims, seed=cfg.seed, activation=cfg.activation,
                     head=cfg.objective.head, out_scale=cfg.out_scale)
    params = model.params()
    return TrainState(model, AdamState.zeros_like(params),
                      EmaParams([p.copy() for p in params], cfg.ema_decay))


def train(cfg: TrainConfig, target, prior, rng=None, state: TrainState | None = None,
          callback=None) -> TrainState:
    """Run ``cfg.steps`` iterations and return the final state.

    ``rng`` defaults to ``np.random.default_rng(cfg.seed)``.  ``callback`` is
    called as ``callback(state, x_flowed)`` after every logged step.
    Raises :class:`TrainingDiverged` on a non-finite loss or flowed batch.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    dim = prior.dim
    if target.dim != dim:
        raise ConfigError(f"target dimension {target.dim} differs from prior dimension {dim}")
    if state is None:
        state = init_state(cfg, dim)
    recent = deque(maxlen=20)
    source = prior_name(prior)

    for tau in range(state.step, cfg.steps):
        x_p = _draw_data(target, cfg.batch_size, rng)
        x0 = ParticleBatch(sample_prior(prior, cfg.batch_size, rng), 0, source)
        if cfg.mode is Mode.FLOW_GUIDED:
            try:
                x_k = simulate(state.model, x0, cfg.flow.K, cfg.flow, rng).points
            except FloatingPointError as exc:
                raise TrainingDiverged(tau, recent, str(exc)) from exc
        else:
            x_k = x0.points

        both = np.concatenate([x_p, x_k])
        with np.errstate(over="ignore", invalid="ignore"):
            out = mlp_forward(state.model, both)  # non-finite outputs are caught by the loss
        n_p = len(x_p)
        try:
            loss, d_p, d_q = bregman_loss(cfg.objective, out[:n_p], out[n_p:])
        except FloatingPointError as exc:
            raise TrainingDiverged(tau, recent, str(exc)) from exc
        if not np.isfinite(loss):
            raise TrainingDiverged(tau, recent, "non-finite loss")
        recent.append(loss)

        grads, _ = mlp_grads(state.model, both, np.concatenate([d_p, d_q]), need_inputs=False)
        lr = cfg.lr_at(tau)
        try:
            params, state.adam = adam_step(state.adam, state.model.params(), grads, lr)
        except FloatingPointError as exc:
            raise TrainingDiverged(tau, recent, str(exc)) from exc
        state.model = state.model.with_params(params)
        state.ema = ema_update(state.ema, params)
        state.step = tau + 1

        if tau % cfg.log_every == 0 or tau == cfg.steps - 1:
            state.history.append({"step": tau, "loss": loss, "lr": lr,
                                  "flowed_mean": x_k.mean(axis=0)})
            if callback is not None:
                callback(state, x_k)
    return state


def trajectory_of_means(state: TrainState):
    """``[(step, mean_of_flowed_batch), ...]`` in logging order."""
    if not state.history:
        raise ValueError("no logged steps to extract")
    return [(h["step"], np.asarray(h["flowed_mean"])) for h in state.history]
