import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flowdre.nn_core import (AdamState, Checkpoint, DensityRatioModel, EmaParams,
                             NonFiniteGradientError, ShapeError, adam_step,
                             checkpoint_from_dict, checkpoint_to_dict, ema_update,
                             init_mlp, load_checkpoint, mlp_forward, mlp_grads,
                             save_checkpoint)


def linear_model(w, b=0.0, head="direct"):
    return DensityRatioModel([np.array([w], dtype=float)], [np.array([b])], head=head)


def loop_forward(model, x):
    """Straight-line per-sample evaluation, independent of the vectorised path."""
    h = [float(v) for v in x]
    n_layers = len(model.weights)
    for li, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = [sum(W[o, i] * h[i] for i in range(len(h))) + b[o] for o in range(W.shape[0])]
        if li == n_layers - 1:
            return z[0]
        if model.activation == "softplus":
            h = [max(v, 0.0) + math.log1p(math.exp(-abs(v))) for v in z]
        else:
            h = [v if v > 0 else 0.2 * v for v in z]


def test_forward_linear():
    m = linear_model([2.0, -1.0])
    assert mlp_forward(m, [[1.0, 1.0]])[0] == 1.0


def test_forward_zero_network():
    m = init_mlp([2, 8, 8, 1], seed=3)
    m = m.with_params([np.zeros_like(p) for p in m.params()])
    X = np.random.default_rng(0).standard_normal((5, 2))
    assert np.all(mlp_forward(m, X) == 0.0)


@pytest.mark.parametrize("activation", ["softplus", "leaky_relu"])
def test_forward_matches_loop_oracle(activation):
    rng = np.random.default_rng(11)
    m = init_mlp([3, 7, 5, 1], seed=4, activation=activation)
    m = m.with_params([p + 0.1 * rng.standard_normal(p.shape) for p in m.params()])
    X = rng.standard_normal((6, 3))
    got = mlp_forward(m, X)
    want = [loop_forward(m, x) for x in X]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_forward_dimension_mismatch():
    m = init_mlp([2, 4, 1])
    with pytest.raises(ShapeError):
        mlp_forward(m, np.zeros((3, 3)))


def test_layer_dims_checked():
    with pytest.raises(ShapeError):
        DensityRatioModel([np.zeros((4, 2)), np.zeros((1, 3))], [np.zeros(4), np.zeros(1)])
    with pytest.raises(ShapeError):
        DensityRatioModel([np.zeros((2, 2))], [np.zeros(2)])


def test_linear_input_grad():
    m = linear_model([2.0, -1.0])
    X = np.random.default_rng(0).standard_normal((4, 2))
    _, gx = mlp_grads(m, X, np.ones(4))
    np.testing.assert_array_equal(gx, np.tile([2.0, -1.0], (4, 1)))


def test_zero_cotangent_gives_zero_grads():
    m = init_mlp([2, 6, 1], seed=1)
    X = np.ones((3, 2))
    gp, gx = mlp_grads(m, X, np.zeros(3))
    assert all(np.all(g == 0) for g in gp)
    assert np.all(gx == 0)


def _fd_check(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    dims = [d] + [int(h) for h in rng.integers(2, 7, size=rng.integers(1, 3))] + [1]
    m = init_mlp(dims, seed=seed)
    m = m.with_params([p + 0.3 * rng.standard_normal(p.shape) for p in m.params()])
    X = rng.standard_normal((3, d))
    c = rng.standard_normal(3)
    gp, gx = mlp_grads(m, X, c)

    def objective(model, Xv):
        return float(c @ mlp_forward(model, Xv))

    h = 1e-5
    fd_x = np.zeros_like(X)
    for i in np.ndindex(X.shape):
        Xp, Xm = X.copy(), X.copy()
        Xp[i] += h
        Xm[i] -= h
        fd_x[i] = (objective(m, Xp) - objective(m, Xm)) / (2 * h)
    fd_p = []
    params = m.params()
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][i] += h
            minus[k][i] -= h
            g[i] = (objective(m.with_params(plus), X) - objective(m.with_params(minus), X)) / (2 * h)
        fd_p.append(g)
    return (gx, fd_x), list(zip(gp, fd_p))


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-8)


def test_gradients_match_finite_differences_100_models():
    for seed in range(100):
        (gx, fd_x), pairs = _fd_check(seed)
        assert _rel_err(gx, fd_x) < 1e-4, seed
        for g, fd in pairs:
            assert _rel_err(g, fd) < 1e-4, seed


def test_forward_deterministic():
    m = init_mlp([2, 16, 16, 1], seed=5)
    X = np.random.default_rng(2).standard_normal((50, 2))
    assert mlp_forward(m, X).tobytes() == mlp_forward(m, X).tobytes()


def test_init_deterministic_in_seed():
    a, b = init_mlp([2, 8, 1], seed=9), init_mlp([2, 8, 1], seed=9)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


# --- Adam ----------------------------------------------------------------

def test_adam_zero_grads():
    p = [np.array([1.0, -2.0])]
    st_ = AdamState.zeros_like(p)
    new, st2 = adam_step(st_, p, [np.zeros(2)], lr=0.1)
    np.testing.assert_array_equal(new[0], p[0])
    assert st2.t == 1


def test_adam_first_step_hand_computed():
    st_ = AdamState.zeros_like([np.zeros(1)], beta1=0.9, beta2=0.999, eps=1e-8)
    new, st2 = adam_step(st_, [np.zeros(1)], [np.ones(1)], lr=0.1)
    # bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps)
    assert new[0][0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-15)
    assert st2.t == 1


def test_adam_second_step_not_larger():
    p = [np.zeros(1)]
    st_ = AdamState.zeros_like(p)
    p1, st_ = adam_step(st_, p, [np.ones(1)], lr=0.1)
    p2, st_ = adam_step(st_, p1, [np.ones(1)], lr=0.1)
    first = abs(p1[0][0] - p[0][0])
    second = abs(p2[0][0] - p1[0][0])
    assert second <= first * 1.01
    assert st_.t == 2


def test_adam_rejects_nonfinite_with_index():
    p = [np.zeros(2), np.zeros(3)]
    with pytest.raises(NonFiniteGradientError) as ei:
        adam_step(AdamState.zeros_like(p), p, [np.zeros(2), np.array([0, np.nan, 0])], 0.1)
    assert ei.value.index == 1


def test_adam_rejects_bad_lr():
    p = [np.zeros(1)]
    with pytest.raises(ValueError):
        adam_step(AdamState.zeros_like(p), p, [np.zeros(1)], 0.0)


# --- EMA -----------------------------------------------------------------

def test_ema_default_decay():
    out = ema_update(EmaParams([np.zeros(1)], 0.998), [np.ones(1)])
    assert out.params[0][0] == pytest.approx(0.002, abs=1e-15)


def test_ema_fixed_point_and_zero_decay():
    theta = [np.array([1.5, -3.0])]
    assert np.array_equal(ema_update(EmaParams([theta[0].copy()], 0.9), theta).params[0], theta[0])
    assert np.array_equal(ema_update(EmaParams([np.zeros(2)], 0.0), theta).params[0], theta[0])


def test_ema_shape_mismatch():
    with pytest.raises(ShapeError):
        ema_update(EmaParams([np.zeros(2)], 0.5), [np.zeros(3)])


vec = arrays(np.float64, 4, elements=st.floats(-1e3, 1e3))


@given(vec, vec, st.floats(0.0, 0.999))
def test_ema_contraction(e, theta, m):
    new = ema_update(EmaParams([e], m), [theta]).params[0]
    assert np.linalg.norm(new - theta) <= m * np.linalg.norm(e - theta) * (1 + 1e-12) + 1e-9


# --- checkpoints ---------------------------------------------------------

def test_checkpoint_roundtrip_exact(tmp_path):
    m = init_mlp([2, 5, 3, 1], seed=2, head="log")
    rng = np.random.default_rng(0)
    m = m.with_params([p + rng.standard_normal(p.shape) / 3 for p in m.params()])
    st_ = AdamState.zeros_like(m.params())
    params, st_ = adam_step(st_, m.params(), [rng.standard_normal(p.shape) for p in m.params()], 1e-3)
    m = m.with_params(params)
    ck = Checkpoint(m, st_, EmaParams([p * 0.5 for p in params], 0.998), rng_seed=17)
    path = tmp_path / "ck.json"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.model.dims == [2, 5, 3, 1]
    assert back.model.head == "log"
    for a, b in zip(back.model.params(), m.params()):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(back.adam.m2, st_.m2):
        assert a.tobytes() == b.tobytes()
    assert back.adam.t == 1 and back.rng_seed == 17
    for a, b in zip(back.ema.params, ck.ema.params):
        assert a.tobytes() == b.tobytes()


def test_checkpoint_document_layout():
    doc = checkpoint_to_dict(Checkpoint(init_mlp([2, 3, 1])))
    assert {"format_version", "arch", "params", "adam", "ema_params", "rng_seed"} <= doc.keys()
    assert doc["arch"] == {"dims": [2, 3, 1], "activation": "softplus", "head": "direct"}
    assert checkpoint_from_dict(doc).model.dims == [2, 3, 1]
