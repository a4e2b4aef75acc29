"""Small dense networks with hand-written reverse mode and Adam.

All parameters of a network live in one flat vector (``NetParams.values``);
layer weights and biases are views into it, so optimizers and soft updates
act on a single array. Weights are stored ``(out, in)`` and inputs are
batched row-wise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import DimensionError, StateError

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

SELU, TANH, IDENTITY = "selu", "tanh", "identity"
CHECKPOINT_VERSION = 1


def selu(x):
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0)))


def _selu_inplace(z):
    """SELU computed with in-place passes (returns a new array, ``z`` untouched)."""
    neg = np.minimum(z, 0)
    np.expm1(neg, out=neg)
    neg *= z.dtype.type(SELU_ALPHA)
    neg += np.maximum(z, 0)
    neg *= z.dtype.type(SELU_LAMBDA)
    return neg


@numba.njit(cache=True, fastmath=True)
def _selu_backprop(g, z, y, c):
    # c = (lambda, lambda * alpha) in the array dtype
    out = np.empty_like(g)
    gf, zf, yf, of = g.ravel(), z.ravel(), y.ravel(), out.ravel()
    for i in range(gf.size):
        of[i] = gf[i] * (c[0] if zf[i] > 0 else yf[i] + c[1])
    return out


def _act(name, z):
    if name == SELU:
        return _selu_inplace(z)
    if name == TANH:
        return np.tanh(z)
    if name == IDENTITY:
        return z
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple  # (input, hidden..., output)
    activations: tuple  # one per weight layer
    action_injection_layer: int | None = None  # weight layer whose input gets the extra vector appended
    injection_dim: int = 0

    def __post_init__(self):
        if len(self.layer_sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError("one activation per weight layer")
        if self.action_injection_layer is not None:
            if not 1 <= self.action_injection_layer < len(self.layer_sizes) - 1:
                raise ValueError("injection must target a hidden layer input")
            if self.injection_dim < 1:
                raise ValueError("injection_dim must be positive")

    @classmethod
    def make(cls, n_in, hidden, n_out, hidden_act=SELU, out_act=IDENTITY, inject_at=None, inject_dim=0):
        sizes = (n_in, *hidden, n_out)
        acts = (hidden_act,) * len(hidden) + (out_act,)
        return cls(sizes, acts, inject_at, inject_dim)

    def layer_inputs(self) -> list[int]:
        ins = list(self.layer_sizes[:-1])
        if self.action_injection_layer is not None:
            ins[self.action_injection_layer] += self.injection_dim
        return ins

    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_inputs(), self.layer_sizes[1:]))

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activations": list(self.activations),
                "action_injection_layer": self.action_injection_layer, "injection_dim": self.injection_dim}

    @classmethod
    def from_dict(cls, d) -> "MlpSpec":
        return cls(tuple(d["layer_sizes"]), tuple(d["activations"]), d["action_injection_layer"],
                   d["injection_dim"])


@dataclass
class NetParams:
    values: np.ndarray
    grads: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n, dtype=np.float64) -> "NetParams":
        return cls(np.zeros(n, dtype), np.zeros(n, dtype), np.zeros(n, dtype), np.zeros(n, dtype), 0)

    def copy(self) -> "NetParams":
        return NetParams(self.values.copy(), self.grads.copy(), self.m.copy(), self.v.copy(), self.step)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@numba.njit(cache=True, fastmath=True)
def _adam_kernel(values, grads, m, v, c, mask):
    # c = (beta1, beta2, 1 - beta1, 1 - beta2, lr, eps, 1 / bias1, 1 / bias2, lr * weight_decay)
    b1, b2, ob1, ob2, lr, eps, ic1, ic2, decay = c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8]
    for i in range(values.size):
        g = grads[i]
        mi = b1 * m[i] + ob1 * g
        vi = b2 * v[i] + ob2 * g * g
        m[i] = mi
        v[i] = vi
        x = values[i]
        x = x - decay * x * mask[i]
        values[i] = x - lr * (mi * ic1) / (np.sqrt(vi * ic2) + eps)


def adam_update(values, grads, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, decay_mask=None):
    """In-place Adam step (bias corrected, decoupled weight decay). Returns the new step count."""
    step += 1
    dt = values.dtype
    if decay_mask is None:
        decay_mask = np.ones(values.size, dtype=dt)
    c = np.array([beta1, beta2, 1 - beta1, 1 - beta2, lr, eps, 1 / (1 - beta1 ** step), 1 / (1 - beta2 ** step),
                  lr * weight_decay], dtype=dt)
    _adam_kernel(values.reshape(-1), grads.reshape(-1), m.reshape(-1), v.reshape(-1), c,
                 decay_mask.reshape(-1).astype(dt, copy=False))
    return step


class Mlp:
    """Multilayer perceptron over a flat parameter vector."""

    def __init__(self, spec: MlpSpec, params: NetParams | None = None, rng=None, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        n = spec.n_params()
        self.params = params if params is not None else NetParams.zeros(n, self.dtype)
        if len(self.params.values) != n:
            raise DimensionError(f"parameter vector has {len(self.params.values)} entries, expected {n}")
        self._bind()
        if params is None and rng is not None:
            self.init(rng)
        self._cache = None

    def _bind(self):
        self.W, self.b, self.gW, self.gb = [], [], [], []
        mask = np.zeros(len(self.params.values), dtype=self.dtype)
        off = 0
        for i, o in zip(self.spec.layer_inputs(), self.spec.layer_sizes[1:]):
            self.W.append(self.params.values[off:off + i * o].reshape(o, i))
            self.gW.append(self.params.grads[off:off + i * o].reshape(o, i))
            mask[off:off + i * o] = 1
            off += i * o
            self.b.append(self.params.values[off:off + o])
            self.gb.append(self.params.grads[off:off + o])
            off += o
        self.weight_mask = mask

    def init(self, rng, out_scale: float | None = None):
        """LeCun normal weights (std 1/sqrt(fan_in)), zero biases."""
        for k, W in enumerate(self.W):
            W[...] = rng.normal(0.0, 1.0 / np.sqrt(W.shape[1]), size=W.shape)
            self.b[k][...] = 0.0
        if out_scale is not None:
            self.W[-1] *= out_scale

    def set_params(self, values):
        self.params.values[...] = values

    def forward(self, x, extra=None, cache: bool = True):
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None]
        if x.shape[1] != self.spec.layer_sizes[0]:
            raise DimensionError(f"input has {x.shape[1]} features, expected {self.spec.layer_sizes[0]}")
        inj = self.spec.action_injection_layer
        if inj is not None:
            if extra is None:
                raise DimensionError("this network needs the injected vector")
            extra = np.asarray(extra, dtype=self.dtype)
            if extra.ndim == 1:
                extra = extra[None]
            if extra.shape != (x.shape[0], self.spec.injection_dim):
                raise DimensionError("injected vector has the wrong shape")
        inputs, pre, outs = [], [], []
        h = x
        for k, (W, b, act) in enumerate(zip(self.W, self.b, self.spec.activations)):
            if k == inj:
                h = np.concatenate([h, extra], axis=1)
            inputs.append(h)
            z = h @ W.T
            z += b
            h = _act(act, z)
            pre.append(z)
            outs.append(h)
        if cache:
            self._cache = (inputs, pre, outs)
        return h[0] if squeeze else h

    __call__ = forward

    def backward(self, out_grad, accumulate: bool = True):
        """Reverse pass for the last cached forward. Adds parameter gradients to
        ``params.grads`` and returns (input_grad, injected_grad or None)."""
        if self._cache is None:
            raise StateError("backward called before forward")
        inputs, pre, outs = self._cache
        g = np.asarray(out_grad, dtype=self.dtype)
        if g.ndim == 1:
            g = g[None] if outs[-1].shape[0] == 1 and g.shape[0] == outs[-1].shape[1] else g[:, None]
        if g.shape != outs[-1].shape:
            raise DimensionError("output gradient shape mismatch")
        if not accumulate:
            self.params.grads[...] = 0
        inj = self.spec.action_injection_layer
        inj_grad = None
        for k in range(len(self.W) - 1, -1, -1):
            act = self.spec.activations[k]
            if act == SELU:
                c = np.array([SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA], dtype=self.dtype)
                g = _selu_backprop(np.ascontiguousarray(g), pre[k], outs[k], c)
            elif act == TANH:
                g = g * (1.0 - outs[k] * outs[k])
            self.gW[k] += g.T @ inputs[k]
            self.gb[k] += g.sum(axis=0)
            g = g @ self.W[k]
            if k == inj:
                split = g.shape[1] - self.spec.injection_dim
                inj_grad = g[:, split:]
                g = g[:, :split]
        return g, inj_grad

    def zero_grad(self):
        self.params.grads[...] = 0

    def adam_step(self, cfg: AdamConfig):
        p = self.params
        p.step = adam_update(p.values, p.grads, p.m, p.v, p.step, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                             cfg.weight_decay, self.weight_mask)
        p.grads[...] = 0

    def clone(self) -> "Mlp":
        return Mlp(self.spec, self.params.copy(), dtype=self.dtype)


def adam_step(params: NetParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0,
              decay_mask=None) -> NetParams:
    """Adam on a ``NetParams`` in place; gradients are zeroed afterwards."""
    params.step = adam_update(params.values, params.grads, params.m, params.v, params.step, lr, beta1, beta2,
                              eps, weight_decay, decay_mask)
    params.grads[...] = 0
    return params


def soft_update(target, source, tau: float):
    """``target <- (1 - tau) * target + tau * source`` on flat vectors, NetParams or Mlps."""
    t = target.params.values if isinstance(target, Mlp) else getattr(target, "values", target)
    s = source.params.values if isinstance(source, Mlp) else getattr(source, "values", source)
    if t.shape != s.shape:
        raise DimensionError("soft_update needs equal shapes")
    t *= 1.0 - tau
    t += tau * s
    return target


# ---------------------------------------------------------------------------
# checkpoints: <path>.npz holds arrays, <path>.json holds metadata


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path.with_suffix(".npz"), **arrays)
    meta = {"format_version": CHECKPOINT_VERSION, **meta, "arrays": sorted(arrays)}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
    with np.load(path.with_suffix(".npz")) as f:
        arrays = {k: f[k] for k in f.files}
    return arrays, meta


def net_arrays(prefix: str, net: Mlp) -> dict:
    p = net.params
    return {f"{prefix}.values": p.values, f"{prefix}.m": p.m, f"{prefix}.v": p.v,
            f"{prefix}.step": np.array(p.step)}


def net_from_arrays(prefix: str, spec: MlpSpec, arrays: dict, dtype=None) -> Mlp:
    vals = arrays[f"{prefix}.values"]
    dtype = dtype or vals.dtype
    p = NetParams(vals.astype(dtype), np.zeros(len(vals), dtype), arrays[f"{prefix}.m"].astype(dtype),
                  arrays[f"{prefix}.v"].astype(dtype), int(arrays[f"{prefix}.step"]))
    return Mlp(spec, p, dtype=dtype)
