"""f-divergence derivatives and the two Bregman ratio-fitting losses."""
from __future__ import annotations

from enum import Enum

import numpy as np

LOG2 = float(np.log(2.0))


class ConfigError(ValueError):
    """Invalid combination of configuration values."""


class FDivergence(str, Enum):
    PEARSON_CHI2 = "pearson_chi2"
    KL = "kl"
    JS = "js"
    LOGD = "logd"


class BregmanObjective(str, Enum):
    LSIF = "lsif"
    LR = "lr"

    @property
    def head(self) -> str:
        """Network head this objective trains: raw ratio or log-ratio."""
        return "direct" if self is BregmanObjective.LSIF else "log"


PAIRINGS = {
    (BregmanObjective.LSIF, FDivergence.PEARSON_CHI2),
    (BregmanObjective.LR, FDivergence.KL),
    (BregmanObjective.LR, FDivergence.JS),
    (BregmanObjective.LR, FDivergence.LOGD),
}


def log_sigmoid(x):
    """log(1 / (1 + exp(-x))) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    # each branch only sees the half of the domain where it is stable
    xp = np.where(pos, x, 0.0)
    xn = np.where(pos, 0.0, x)
    return np.where(pos, -np.log1p(np.exp(-xp)), xn - np.log1p(np.exp(xn)))


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def f_prime(div, r):
    div = FDivergence(div)
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("f' is only defined for r > 0")
    if div is FDivergence.PEARSON_CHI2:
        return 2.0 * (r - 1.0)
    if div is FDivergence.KL:
        return np.log(r) + 1.0
    if div is FDivergence.JS:
        return np.log(2.0 * r / (r + 1.0))
    return np.log(r + 1.0) + 1.0


def _require_log_form(div):
    div = FDivergence(div)
    if div is FDivergence.PEARSON_CHI2:
        raise ConfigError("pearson_chi2 has no log-ratio form; pair it with a direct-ratio head")
    return div


def f_prime_from_logr(div, s):
    """f'(exp(s)) evaluated stably from the log-ratio ``s``."""
    div = _require_log_form(div)
    s = np.asarray(s, dtype=np.float64)
    if div is FDivergence.KL:
        return s + 1.0
    if div is FDivergence.JS:
        return LOG2 + log_sigmoid(s)
    return 1.0 - log_sigmoid(-s)


def f_prime_dlogr(div, s):
    """d f'(exp(s)) / ds: the chain factor multiplying grad s in the drift."""
    div = _require_log_form(div)
    s = np.asarray(s, dtype=np.float64)
    if div is FDivergence.KL:
        return np.ones_like(s)
    if div is FDivergence.JS:
        return sigmoid(-s)
    return sigmoid(s)


def pairing_check(obj, div) -> None:
    obj, div = BregmanObjective(obj), FDivergence(div)
    if (obj, div) not in PAIRINGS:
        raise ConfigError(f"objective {obj.value!r} cannot be paired with divergence {div.value!r}")


def bregman_loss(obj, out_p, out_q):
    """Bregman loss on raw outputs for data (``out_p``) and flowed (``out_q``) samples.

    LSIF: ``0.5 * mean(r_p**2) - mean(r_q)``.
    LR:   ``-mean(LS(-s_p)) - mean(LS(s_q))``.
    Model-independent constants are dropped.  Returns the loss and its
    partial derivatives with respect to each output.
    """
    obj = BregmanObjective(obj)
    out_p = np.asarray(out_p, dtype=np.float64)
    out_q = np.asarray(out_q, dtype=np.float64)
    if out_p.size == 0 or out_q.size == 0:
        raise ValueError("bregman_loss needs non-empty batches")
    for name, a in (("data", out_p), ("flowed", out_q)):
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite model output on the {name} batch")
    n_p, n_q = out_p.size, out_q.size
    if obj is BregmanObjective.LSIF:
        loss = 0.5 * np.mean(out_p ** 2) - np.mean(out_q)
        return float(loss), out_p / n_p, np.full(n_q, -1.0 / n_q)
    loss = -np.mean(log_sigmoid(-out_p)) - np.mean(log_sigmoid(out_q))
    # d/ds[-LS(-s)] = sigmoid(s); d/ds[-LS(s)] = -sigmoid(-s)
    return float(loss), sigmoid(out_p) / n_p, -sigmoid(-out_q) / n_q
