"""Class-conditional sampling by composing the ratio network with a classifier.

A classifier's posterior is itself a ratio, ``N p(y=n|x) = p(x|y=n) / p(x)``,
so dividing the unconditional ratio by it targets one class.  With a
log-ratio head and the KL flow the conditional drift is

    grad_x [ s(x) - phi * log p(y=n|x) ]

where ``phi`` rescales the classifier gradient.  The ``-log N`` constant has
zero gradient and is dropped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, logsumexp

from .divergences import ConfigError, FDivergence
from .flow import FlowConfig, ParticleBatch, drift, simulate_with
from .nn_core import AdamState, DensityRatioModel, adam_step, init_mlp
from .priors import GaussianMixture, prior_name, sample_prior


@dataclass(frozen=True)
class AnalyticBayes:
    """Exact posterior of an isotropic Gaussian mixture."""

    mixture: GaussianMixture

    @property
    def n_classes(self):
        return len(self.mixture.weights)

    def _joint_logits(self, X):
        mix = self.mixture
        means = np.asarray(mix.means, dtype=np.float64)
        with np.errstate(divide="ignore"):
            logw = np.log(np.asarray(mix.weights, dtype=np.float64))
        sq = ((X[:, None, :] - means[None]) ** 2).sum(-1)
        return logw - 0.5 * sq / mix.var, means

    def log_prob(self, X):
        logits, _ = self._joint_logits(X)
        return logits - logsumexp(logits, axis=1, keepdims=True)

    def grad_log_prob(self, n, X):
        logits, means = self._joint_logits(X)
        post = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        # grad log p(y=n|x) = grad l_n - sum_k post_k grad l_k,  grad l_k = (mu_k - x) / var
        grads = (means[None] - X[:, None, :]) / self.mixture.var
        return grads[:, n] - np.einsum("nk,nkd->nd", post, grads)


@dataclass
class LearnedSoftmax:
    """MLP classifier with ``n_classes`` logits, trained by cross-entropy."""

    weights: list
    biases: list

    @property
    def n_classes(self):
        return self.weights[-1].shape[0]

    def _logits_cache(self, X):
        hs, zs = [X], []
        h = X
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W.T + b
            if i == len(self.weights) - 1:
                return z, hs, zs
            zs.append(z)
            h = np.logaddexp(0.0, z)
            hs.append(h)

    def log_prob(self, X):
        return log_softmax(self._logits_cache(X)[0], axis=1)

    def _backprop(self, X, d_logits):
        _, hs, zs = self._logits_cache(X)
        g = d_logits
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = g.T @ hs[i]
            grads[2 * i + 1] = g.sum(0)
            g = g @ self.weights[i]
            if i > 0:
                g = g * expit(zs[i - 1])
        return grads, g

    def grad_log_prob(self, n, X):
        logits, _, _ = self._logits_cache(X)
        post = np.exp(log_softmax(logits, axis=1))
        d = -post
        d[:, n] += 1.0
        return self._backprop(X, d)[1]

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out


def train_softmax_classifier(X, y, n_classes, hidden=(64, 64), steps=2000, lr=1e-2,
                             batch_size=256, seed=0) -> LearnedSoftmax:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    base = init_mlp([X.shape[1], *hidden, 1], seed=seed)
    Ws, bs = base.weights[:-1], base.biases[:-1]
    Ws = Ws + [rng.standard_normal((n_classes, hidden[-1])) * np.sqrt(1.0 / hidden[-1])]
    bs = bs + [np.zeros(n_classes)]
    clf = LearnedSoftmax(Ws, bs)
    state = AdamState.zeros_like(clf.params())
    for _ in range(steps):
        idx = rng.integers(0, len(X), size=batch_size)
        xb, yb = X[idx], y[idx]
        logits, _, _ = clf._logits_cache(xb)
        d = np.exp(log_softmax(logits, axis=1))
        d[np.arange(len(yb)), yb] -= 1.0
        grads, _ = clf._backprop(xb, d / len(yb))
        params, state = adam_step(state, clf.params(), grads, lr)
        clf = LearnedSoftmax(params[0::2], params[1::2])
    return clf


@dataclass(frozen=True)
class ConditionalSpec:
    class_index: int
    phi: float = 0.1

    def __post_init__(self):
        if self.phi < 0:
            raise ConfigError("phi must be >= 0")
        if self.class_index < 0:
            raise ConfigError("class index must be >= 0")


def _validate(model, div, clf, spec):
    if model.head != "log":
        raise ConfigError("conditional flow needs a log-ratio head")
    if FDivergence(div) is not FDivergence.KL:
        raise ConfigError("conditional flow is defined for the kl divergence only")
    if spec.class_index >= clf.n_classes:
        raise ConfigError(f"class index {spec.class_index} out of range for "
                          f"{clf.n_classes} classes")


def class_log_prob(clf, n: int, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if not 0 <= n < clf.n_classes:
        raise ConfigError(f"class index {n} out of range for {clf.n_classes} classes")
    return clf.log_prob(X)[:, n]


def conditional_drift(model: DensityRatioModel, div, clf, spec: ConditionalSpec, X):
    _validate(model, div, clf, spec)
    X = np.asarray(X, dtype=np.float64)
    base = drift(model, div, X)
    if spec.phi == 0:
        return base
    return base - spec.phi * clf.grad_log_prob(spec.class_index, X)


def conditional_sample(model, clf, spec: ConditionalSpec, prior, cfg: FlowConfig,
                       n: int, rng) -> ParticleBatch:
    _validate(model, cfg.divergence, clf, spec)
    if n < 1:
        raise ValueError("n must be >= 1")
    fn = lambda X: conditional_drift(model, cfg.divergence, clf, spec, X)  # noqa: E731
    x0 = ParticleBatch(sample_prior(prior, n, rng), 0, prior_name(prior))
    return simulate_with(fn, x0, cfg.K + cfg.kappa, cfg.eta, cfg.nu, rng)
