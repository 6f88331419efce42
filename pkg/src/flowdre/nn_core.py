"""Small numpy MLP with hand-written backprop, Adam and EMA tracking.

The network maps ``R^d -> R``.  Its raw output is interpreted by callers,
either as the ratio ``r(x)`` itself (``head="direct"``) or as ``log r(x)``
(``head="log"``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

ACTIVATIONS = ("softplus", "leaky_relu")
HEADS = ("direct", "log")
LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    """Raised when array shapes do not match the model contract."""


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, index: int):
        super().__init__(f"non-finite gradient in parameter {index}")
        self.index = index


def _act(kind, z):
    """Activation value plus whatever the derivative needs later."""
    if kind == "softplus":
        e = np.exp(-np.abs(z))
        return np.maximum(z, 0.0) + np.log1p(e), e
    return np.where(z > 0, z, LEAKY_SLOPE * z), None


def _act_deriv(kind, z, aux):
    if kind == "softplus":
        # logistic sigmoid from the cached exp(-|z|)
        return np.where(z >= 0, 1.0, aux) / (1.0 + aux)
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


@dataclass
class DensityRatioModel:
    """Feed-forward network; ``weights[i]`` has shape ``(out, in)``.

    Note: LeakyReLU is piecewise linear, so finite-difference checks across
    a kink can disagree with the analytic gradient.  Use softplus for tests.
    """

    weights: list
    biases: list
    activation: str = "softplus"
    head: str = "direct"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer {i}: weight {W.shape} / bias {b.shape}")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} expects {W.shape[1]} inputs, "
                                 f"previous layer gives {self.weights[i - 1].shape[0]}")
        if self.weights[-1].shape[0] != 1:
            raise ShapeError("final layer must output a scalar")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [W.shape[0] for W in self.weights]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def with_params(self, params) -> "DensityRatioModel":
        return DensityRatioModel(
            weights=[np.array(p, dtype=np.float64) for p in params[0::2]],
            biases=[np.array(p, dtype=np.float64) for p in params[1::2]],
            activation=self.activation,
            head=self.head,
        )

    def copy(self) -> "DensityRatioModel":
        return self.with_params(self.params())


def init_mlp(dims, seed: int = 0, activation: str = "softplus",
             head: str = "direct", out_scale: float = 1.0) -> DensityRatioModel:
    """He-style fan-in initialisation, deterministic in ``seed``.

    ``dims`` runs from the input dimension to the final scalar, e.g.
    ``[2, 128, 128, 128, 1]``.  ``out_scale`` shrinks the last layer.
    """
    dims = list(dims)
    if dims[-1] != 1:
        raise ShapeError("last entry of dims must be 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        W = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        if i == len(dims) - 2:
            W *= out_scale
        weights.append(W)
        biases.append(np.zeros(n_out))
    return DensityRatioModel(weights, biases, activation, head)


def _check_input(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"expected (n, {model.input_dim}) input, got {X.shape}")
    return X


def _forward_cache(model, X):
    pre, aux, post = [], [], [X]
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W.T + b
        if i == last:
            return z[:, 0], (pre, aux, post)
        h, a = _act(model.activation, z)
        pre.append(z)
        aux.append(a)
        post.append(h)


def mlp_forward(model: DensityRatioModel, X) -> np.ndarray:
    """Raw scalar network output per row of ``X``."""
    X = _check_input(model, X)
    return _forward_cache(model, X)[0]


def mlp_grads(model: DensityRatioModel, X, cotangent, need_params: bool = True,
              need_inputs: bool = True):
    """Reverse-mode gradients of ``sum(cotangent * output)``.

    Returns ``(param_grads, input_grads)``: parameter gradients summed over
    the batch (same layout as :meth:`DensityRatioModel.params`), and input
    gradients per sample.  Either part can be skipped (returned as None).
    """
    X = _check_input(model, X)
    _, cache = _forward_cache(model, X)
    return _backward(model, cache, cotangent, need_params, need_inputs)


def mlp_value_and_input_grad(model: DensityRatioModel, X, cotangent_fn):
    """Output and input gradient of ``sum(c * output)`` with ``c = cotangent_fn(output)``.

    Needs one forward pass only; the flow uses it because its chain factor
    depends on the output.
    """
    X = _check_input(model, X)
    out, cache = _forward_cache(model, X)
    return out, _backward(model, cache, cotangent_fn(out), False, True)[1]


def _backward(model, cache, cotangent, need_params, need_inputs):
    pre, aux, post = cache
    c = np.asarray(cotangent, dtype=np.float64)
    if c.shape != (post[0].shape[0],):
        raise ShapeError(f"cotangent shape {c.shape} does not match batch {post[0].shape[0]}")

    g = c[:, None]  # d/d(layer output), shape (n, out)
    pgrads = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        W = model.weights[i]
        if need_params:
            pgrads[2 * i] = g.T @ post[i]
            pgrads[2 * i + 1] = g.sum(axis=0)
        if i == 0 and not need_inputs:
            break
        g = g @ W
        if i > 0:
            g = g * _act_deriv(model.activation, pre[i - 1], aux[i - 1])
    return (pgrads if need_params else None), (g if need_inputs else None)


@dataclass
class AdamState:
    m1: list
    m2: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params, grads, lr: float):
    """One bias-corrected Adam update.  Returns new ``(params, state)``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not (len(params) == len(grads) == len(state.m1)):
        raise ShapeError("params, grads and optimiser state differ in length")
    for i, (p, g, m) in enumerate(zip(params, grads, state.m1)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {i}: shapes {p.shape}, {g.shape}, {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(i)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m1 = [b1 * m + (1 - b1) * g for m, g in zip(state.m1, grads)]
    m2 = [b2 * v + (1 - b2) * g * g for v, g in zip(state.m2, grads)]
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    new = [p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
           for p, m, v in zip(params, m1, m2)]
    return new, AdamState(m1, m2, t, b1, b2, state.eps)


@dataclass
class EmaParams:
    params: list
    decay: float = 0.998

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ValueError("EMA decay must lie in [0, 1)")


def ema_update(ema: EmaParams, params) -> EmaParams:
    if len(ema.params) != len(params):
        raise ShapeError("EMA and model have different parameter counts")
    m = ema.decay
    out = []
    for i, (e, p) in enumerate(zip(ema.params, params)):
        if e.shape != p.shape:
            raise ShapeError(f"parameter {i}: EMA {e.shape} vs model {p.shape}")
        out.append(m * e + (1.0 - m) * p)
    return EmaParams(out, m)


# --- checkpoints -----------------------------------------------------------

@dataclass
class Checkpoint:
    model: DensityRatioModel
    adam: AdamState | None = None
    ema: EmaParams | None = None
    rng_seed: int | None = None
    extra: dict = field(default_factory=dict)


def _tolist(arrs):
    # repr of a Python float is the shortest string that round-trips exactly
    return [a.tolist() for a in arrs]


def _fromlist(lists):
    return [np.array(a, dtype=np.float64) for a in lists]


def checkpoint_to_dict(ck: Checkpoint) -> dict:
    m = ck.model
    doc = {
        "format_version": FORMAT_VERSION,
        "arch": {"dims": m.dims, "activation": m.activation, "head": m.head},
        "params": _tolist(m.params()),
        "adam": None,
        "ema_params": None,
        "ema_decay": None,
        "rng_seed": ck.rng_seed,
    }
    if ck.adam is not None:
        a = ck.adam
        doc["adam"] = {"m1": _tolist(a.m1), "m2": _tolist(a.m2), "t": a.t,
                       "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps}
    if ck.ema is not None:
        doc["ema_params"] = _tolist(ck.ema.params)
        doc["ema_decay"] = ck.ema.decay
    doc.update(ck.extra)
    return doc


def checkpoint_from_dict(doc: dict) -> Checkpoint:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    arch = doc["arch"]
    params = _fromlist(doc["params"])
    model = DensityRatioModel(params[0::2], [b.reshape(-1) for b in params[1::2]],
                              arch["activation"], arch["head"])
    if model.dims != list(arch["dims"]):
        raise ShapeError(f"checkpoint dims {arch['dims']} disagree with params {model.dims}")
    adam = None
    if doc.get("adam"):
        a = doc["adam"]
        adam = AdamState(_fromlist(a["m1"]), _fromlist(a["m2"]), int(a["t"]),
                         a["beta1"], a["beta2"], a["eps"])
    ema = None
    if doc.get("ema_params") is not None:
        ema = EmaParams(_fromlist(doc["ema_params"]), doc["ema_decay"])
    known = {"format_version", "arch", "params", "adam", "ema_params", "ema_decay", "rng_seed"}
    extra = {k: v for k, v in doc.items() if k not in known}
    return Checkpoint(model, adam, ema, doc.get("rng_seed"), extra)


def save_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_text(json.dumps(checkpoint_to_dict(ck)))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_dict(json.loads(Path(path).read_text()))
