from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from hcp.errors import DimensionError, StateError
from hcp.nn import (IDENTITY, SELU, SELU_ALPHA, SELU_LAMBDA, TANH, AdamConfig, Mlp, MlpSpec, NetParams,
                    adam_step, adam_update, load_checkpoint, net_arrays, net_from_arrays, save_checkpoint, selu,
                    soft_update)


def selu_fixed_point():
    """Solve for (lambda, alpha) such that a standard normal input keeps mean 0 and variance 1."""
    phi = lambda z: math.exp(-z * z / 2) / math.sqrt(2 * math.pi)  # noqa: E731

    def moments(p):
        lam, alpha = p
        f = lambda z: lam * (z if z > 0 else alpha * math.expm1(z))  # noqa: E731
        m1 = sum(integrate.quad(lambda z: f(z) * phi(z), a, b, epsabs=1e-14, epsrel=1e-14)[0]
                 for a, b in ((-np.inf, 0), (0, np.inf)))
        m2 = sum(integrate.quad(lambda z: f(z) ** 2 * phi(z), a, b, epsabs=1e-14, epsrel=1e-14)[0]
                 for a, b in ((-np.inf, 0), (0, np.inf)))
        return [m1, m2 - 1.0]

    return optimize.fsolve(moments, [1.0, 1.5], xtol=1e-12)


def test_selu_constants_from_fixed_point():
    lam, alpha = selu_fixed_point()
    assert round(lam, 10) == round(SELU_LAMBDA, 10)
    assert round(alpha, 10) == round(SELU_ALPHA, 10)


def test_selu_values():
    assert selu(np.array(0.0)) == 0.0
    assert selu(np.array(1.0)) == pytest.approx(SELU_LAMBDA, abs=1e-15)
    net = Mlp(MlpSpec((3, 3, 3), (SELU, IDENTITY)), dtype=np.float64)
    net.W[0][...] = np.eye(3)
    net.W[1][...] = np.eye(3)
    x = np.array([[-1.0, 0.0, 2.0]])
    np.testing.assert_allclose(net.forward(x), selu(x), atol=1e-15)


def test_zero_weights_zero_output():
    net = Mlp(MlpSpec.make(5, (7, 7), 2))
    assert np.all(net.forward(np.random.default_rng(0).normal(size=(4, 5))) == 0.0)


def test_linear_gradient():
    net = Mlp(MlpSpec((3, 1, 1), (IDENTITY, IDENTITY)))
    net.W[0][...] = [[0.5, -1.0, 2.0]]
    net.W[1][...] = 1.0
    x = np.array([[1.0, 2.0, 3.0]])
    net.forward(x)
    gx, _ = net.backward(np.ones((1, 1)))
    np.testing.assert_array_equal(net.gW[0], x)
    np.testing.assert_array_equal(gx, net.W[0])


def _random_net(rng, inject):
    n_in = int(rng.integers(2, 7))
    hidden = tuple(int(h) for h in rng.integers(2, 9, size=int(rng.integers(1, 4))))
    n_out = int(rng.integers(1, 4))
    out_act = [IDENTITY, TANH][int(rng.integers(2))]
    if inject and len(hidden) >= 2:
        spec = MlpSpec.make(n_in, hidden, n_out, out_act=out_act, inject_at=1, inject_dim=2)
    else:
        spec = MlpSpec.make(n_in, hidden, n_out, out_act=out_act)
    net = Mlp(spec, rng=rng, dtype=np.float64)
    net.params.values[...] += rng.normal(0, 0.1, net.params.values.size)  # nonzero biases
    return net


def _rel_err(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))


def check_gradients(net, rng, h=1e-5):
    B = 3
    x = rng.normal(size=(B, net.spec.layer_sizes[0]))
    e = rng.normal(size=(B, net.spec.injection_dim)) if net.spec.action_injection_layer is not None else None
    R = rng.normal(size=(B, net.spec.layer_sizes[-1]))
    loss = lambda: float(np.sum(net.forward(x, e, cache=False) * R))  # noqa: E731
    net.zero_grad()
    net.forward(x, e)
    gx, ge = net.backward(R)
    p = net.params.values
    num = np.empty_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + h
        up = loss()
        p[i] = old - h
        dn = loss()
        p[i] = old
        num[i] = (up - dn) / (2 * h)
    worst = _rel_err(net.params.grads, num)
    for arr, g in ((x, gx), (e, ge)):
        if arr is None:
            continue
        n = np.empty_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            dn = loss()
            arr[idx] = old
            n[idx] = (up - dn) / (2 * h)
        worst = max(worst, _rel_err(g, n))
    return worst


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    worst = max(check_gradients(_random_net(rng, inject=k % 2 == 0), rng) for k in range(20))
    assert worst < 1e-4


def test_backward_before_forward():
    with pytest.raises(StateError):
        Mlp(MlpSpec.make(2, (3,), 1), rng=np.random.default_rng(0)).backward(np.ones((1, 1)))


def test_dimension_errors():
    net = Mlp(MlpSpec.make(2, (3, 3), 1, inject_at=1, inject_dim=2), rng=np.random.default_rng(0))
    with pytest.raises(DimensionError):
        net.forward(np.ones((1, 3)), np.ones((1, 2)))
    with pytest.raises(DimensionError):
        net.forward(np.ones((1, 2)))
    with pytest.raises(DimensionError):
        Mlp(MlpSpec.make(2, (3,), 1), params=NetParams.zeros(4))


def test_adam_zero_grad_no_change():
    p = NetParams(np.arange(5.0), np.zeros(5), np.zeros(5), np.zeros(5))
    before = p.values.copy()
    adam_step(p, 0.1)
    np.testing.assert_array_equal(p.values, before)


def test_adam_first_step_is_lr_sign():
    g = np.array([0.3, -2.0, 1e-3, -5.0])
    p = NetParams(np.zeros(4), g.copy(), np.zeros(4), np.zeros(4))
    adam_step(p, 1e-3)
    np.testing.assert_allclose(p.values, -1e-3 * np.sign(g), rtol=1e-4)
    assert np.all(p.grads == 0)


def test_adam_two_step_hand_trace():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x, m, v = 1.0, 0.0, 0.0
    trace = []
    for t, g in ((1, 0.5), (2, 0.5)):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        trace.append(x)
    vals, mm, vv = np.array([1.0]), np.zeros(1), np.zeros(1)
    step = 0
    for t in range(2):
        step = adam_update(vals, np.array([0.5]), mm, vv, step, lr)
        assert vals[0] == pytest.approx(trace[t], abs=1e-12)
    assert step == 2


def test_decoupled_weight_decay():
    vals = np.array([2.0, 2.0])
    adam_update(vals, np.zeros(2), np.zeros(2), np.zeros(2), 0, 0.1, weight_decay=0.5, decay_mask=np.array([1.0, 0.0]))
    np.testing.assert_allclose(vals, [2.0 - 0.1 * 0.5 * 2.0, 2.0])


def test_soft_update_examples():
    t, s = np.array([0.0]), np.array([1.0])
    soft_update(t, s, 0.01)
    assert t[0] == pytest.approx(0.01)
    a = Mlp(MlpSpec.make(2, (3,), 1), rng=np.random.default_rng(0))
    b = Mlp(MlpSpec.make(2, (3,), 1), rng=np.random.default_rng(1))
    before = a.params.values.copy()
    soft_update(a, b, 0.0)
    np.testing.assert_array_equal(a.params.values, before)
    soft_update(a, b, 1.0)
    np.testing.assert_array_equal(a.params.values, b.params.values)
    with pytest.raises(DimensionError):
        soft_update(np.zeros(2), np.zeros(3), 0.5)


@settings(max_examples=50, deadline=None)
@given(tau=st.floats(0.0, 1.0), n=st.integers(0, 50))
def test_soft_update_contracts_gap(tau, n):
    rng = np.random.default_rng(n)
    t, s = rng.normal(size=10), rng.normal(size=10)
    gap0 = np.linalg.norm(t - s)
    for _ in range(n):
        soft_update(t, s, tau)
    assert np.linalg.norm(t - s) <= (1 - tau) ** n * gap0 + 1e-12


def test_init_deterministic():
    spec = MlpSpec.make(4, (8, 8), 2)
    a = Mlp(spec, rng=np.random.default_rng(3))
    b = Mlp(spec, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(a.params.values, b.params.values)


def test_checkpoint_roundtrip(tmp_path):
    spec = MlpSpec.make(4, (8, 8), 2, inject_at=1, inject_dim=3)
    net = Mlp(spec, rng=np.random.default_rng(3), dtype=np.float32)
    net.forward(np.ones((2, 4)), np.ones((2, 3)))
    net.backward(np.ones((2, 2)))
    net.adam_step(AdamConfig(lr=1e-3))
    save_checkpoint(tmp_path / "ck.npz", net_arrays("net", net), {"spec": spec.to_dict(), "rng": {"seed": 3}})
    arrays, meta = load_checkpoint(tmp_path / "ck.npz")
    back = net_from_arrays("net", MlpSpec.from_dict(meta["spec"]), arrays)
    for a, b in ((net.params.values, back.params.values), (net.params.m, back.params.m),
                 (net.params.v, back.params.v)):
        np.testing.assert_array_equal(a, b)
    assert back.params.step == 1 and meta["format_version"] == 1 and meta["rng"] == {"seed": 3}
