"""Small fully-connected networks on flat parameter vectors, with exact
reverse-mode gradients, plus the Adam optimizer and a plateau LR scheduler.

Two architectures:

* ``plain`` -- affine/activation stack, linear output head.
* ``modified_fc`` -- two activated encoder streams ``u`` and ``v`` computed
  from the input; every hidden layer produces an activated affine gate ``z``
  and mixes the encoders as ``h = (1 - z) * u + z * v`` before the linear
  output head. All hidden widths must match so the encoders broadcast.

Parameters live in one flat float64 vector with a layout map of per-tensor
extents, which keeps optimizer state, serialization, and gradient checking
trivial.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NetworkSpec",
    "parameter_layout",
    "n_parameters",
    "init_params",
    "forward",
    "forward_cached",
    "backward",
    "AdamState",
    "adam_step",
    "PlateauScheduler",
]

_ACTIVATIONS = ("leaky_relu", "tanh")
_ARCHITECTURES = ("plain", "modified_fc")


@dataclass(frozen=True)
class NetworkSpec:
    """Shape and architecture of one fully-connected network."""

    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (60, 60, 60)
    activation: str = "leaky_relu"
    leaky_slope: float = 0.01
    architecture: str = "plain"

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky slope must lie in (0, 1)")
        if self.architecture not in _ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.architecture == "modified_fc":
            if len(self.hidden) < 1:
                raise ValueError("modified_fc needs at least one hidden layer")
            if len(set(self.hidden)) != 1:
                raise ValueError("modified_fc needs equal hidden widths")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "leaky_slope": self.leaky_slope,
            "architecture": self.architecture,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_dim=int(d["input_dim"]),
            output_dim=int(d["output_dim"]),
            hidden=tuple(d["hidden"]),
            activation=d["activation"],
            leaky_slope=float(d["leaky_slope"]),
            architecture=d["architecture"],
        )


def _tensor_shapes(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...]]]:
    """Named tensors in layout order: (name, shape); weights are (out, in)."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    if spec.architecture == "modified_fc":
        w = spec.hidden[0]
        shapes.append(("W_u", (w, spec.input_dim)))
        shapes.append(("b_u", (w,)))
        shapes.append(("W_v", (w, spec.input_dim)))
        shapes.append(("b_v", (w,)))
        prev = spec.input_dim
        for k, width in enumerate(spec.hidden):
            shapes.append((f"W_{k}", (width, prev)))
            shapes.append((f"b_{k}", (width,)))
            prev = width
        shapes.append(("W_out", (spec.output_dim, prev)))
        shapes.append(("b_out", (spec.output_dim,)))
    else:
        prev = spec.input_dim
        for k, width in enumerate(spec.hidden):
            shapes.append((f"W_{k}", (width, prev)))
            shapes.append((f"b_{k}", (width,)))
            prev = width
        shapes.append(("W_out", (spec.output_dim, prev)))
        shapes.append(("b_out", (spec.output_dim,)))
    return shapes


def parameter_layout(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...], int, int]]:
    """Layout map: (name, shape, offset, size) for each tensor in the flat vector."""
    layout = []
    offset = 0
    for name, shape in _tensor_shapes(spec):
        size = int(np.prod(shape))
        layout.append((name, shape, offset, size))
        offset += size
    return layout


def n_parameters(spec: NetworkSpec) -> int:
    return sum(size for _, _, _, size in parameter_layout(spec))


def _views(spec: NetworkSpec, theta: np.ndarray) -> dict[str, np.ndarray]:
    """Reshaped views into the flat vector (no copies)."""
    if theta.shape != (n_parameters(spec),):
        raise ValueError(
            f"parameter vector has length {theta.shape}, expected ({n_parameters(spec)},)"
        )
    out = {}
    for name, shape, offset, size in parameter_layout(spec):
        out[name] = theta[offset : offset + size].reshape(shape)
    return out


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor."""
    theta = np.empty(n_parameters(spec))
    for name, shape, offset, size in parameter_layout(spec):
        fan_in = shape[-1] if len(shape) == 2 else _bias_fan_in(spec, name)
        bound = 1.0 / np.sqrt(fan_in)
        theta[offset : offset + size] = rng.uniform(-bound, bound, size)
    return theta


def _bias_fan_in(spec: NetworkSpec, bias_name: str) -> int:
    # biases share the fan-in of their affine map
    for name, shape, _, _ in parameter_layout(spec):
        if name == "W" + bias_name[1:]:
            return shape[-1]
    raise KeyError(bias_name)


def _act(spec: NetworkSpec, a: np.ndarray) -> np.ndarray:
    if spec.activation == "tanh":
        return np.tanh(a)
    return np.where(a > 0, a, spec.leaky_slope * a)


def _act_grad(spec: NetworkSpec, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation ``a`` (h = act(a))."""
    if spec.activation == "tanh":
        return 1.0 - h * h
    return np.where(a > 0, 1.0, spec.leaky_slope)


def forward(spec: NetworkSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; accepts (d,) or (B, d) inputs."""
    y, _ = forward_cached(spec, theta, x)
    return y


def forward_cached(
    spec: NetworkSpec, theta: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Forward pass returning the activations cache needed by :func:`backward`."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != spec.input_dim:
        raise ValueError(
            f"input has {xb.shape[1]} features, spec expects {spec.input_dim}"
        )
    p = _views(spec, theta)
    cache: dict = {"x": xb}

    if spec.architecture == "modified_fc":
        a_u = xb @ p["W_u"].T + p["b_u"]
        a_v = xb @ p["W_v"].T + p["b_v"]
        u = _act(spec, a_u)
        v = _act(spec, a_v)
        cache.update(a_u=a_u, a_v=a_v, u=u, v=v)
        h = xb
        hs, zs, a_zs = [h], [], []
        for k in range(len(spec.hidden)):
            a_z = h @ p[f"W_{k}"].T + p[f"b_{k}"]
            z = _act(spec, a_z)
            h = (1.0 - z) * u + z * v
            a_zs.append(a_z)
            zs.append(z)
            hs.append(h)
        cache.update(hs=hs, zs=zs, a_zs=a_zs)
        out = h @ p["W_out"].T + p["b_out"]
    else:
        h = xb
        hs, a_s = [h], []
        for k in range(len(spec.hidden)):
            a = h @ p[f"W_{k}"].T + p[f"b_{k}"]
            h = _act(spec, a)
            a_s.append(a)
            hs.append(h)
        cache.update(hs=hs, a_s=a_s)
        out = h @ p["W_out"].T + p["b_out"]

    if not np.all(np.isfinite(out)):
        raise FloatingPointError("numerical blow-up in network forward pass")
    return (out[0] if single else out), cache


def backward(
    spec: NetworkSpec, theta: np.ndarray, cache: dict, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse-mode gradients.

    Returns ``(grad_theta, grad_x)`` for the batch loss whose derivative with
    respect to the network output is ``grad_out`` (same shape as the output).
    """
    p = _views(spec, theta)
    grad = np.zeros_like(theta)
    g = _views(spec, grad)
    go = np.asarray(grad_out, dtype=float)
    if go.ndim == 1:
        go = go[None, :]
    xb = cache["x"]

    if spec.architecture == "modified_fc":
        hs, zs, a_zs = cache["hs"], cache["zs"], cache["a_zs"]
        u, v, a_u, a_v = cache["u"], cache["v"], cache["a_u"], cache["a_v"]
        g["W_out"][:] = go.T @ hs[-1]
        g["b_out"][:] = go.sum(axis=0)
        gh = go @ p["W_out"]
        gu = np.zeros_like(u)
        gv = np.zeros_like(v)
        for k in range(len(spec.hidden) - 1, -1, -1):
            z, a_z = zs[k], a_zs[k]
            gu += gh * (1.0 - z)
            gv += gh * z
            gz = gh * (v - u)
            ga = gz * _act_grad(spec, a_z, z)
            g[f"W_{k}"][:] = ga.T @ hs[k]
            g[f"b_{k}"][:] = ga.sum(axis=0)
            gh = ga @ p[f"W_{k}"]
        # gh now holds the gradient wrt the raw input along the gate chain
        ga_u = gu * _act_grad(spec, a_u, u)
        ga_v = gv * _act_grad(spec, a_v, v)
        g["W_u"][:] = ga_u.T @ xb
        g["b_u"][:] = ga_u.sum(axis=0)
        g["W_v"][:] = ga_v.T @ xb
        g["b_v"][:] = ga_v.sum(axis=0)
        gx = gh + ga_u @ p["W_u"] + ga_v @ p["W_v"]
    else:
        hs, a_s = cache["hs"], cache["a_s"]
        g["W_out"][:] = go.T @ hs[-1]
        g["b_out"][:] = go.sum(axis=0)
        gh = go @ p["W_out"]
        for k in range(len(spec.hidden) - 1, -1, -1):
            ga = gh * _act_grad(spec, a_s[k], hs[k + 1])
            g[f"W_{k}"][:] = ga.T @ hs[k]
            g[f"b_{k}"][:] = ga.sum(axis=0)
            gh = ga @ p[f"W_{k}"]
        gx = gh

    return grad, gx


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One Adam update; mutates ``state`` and returns the new parameter vector."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without validation improvement, never below ``min_lr``."""

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 50,
                 min_lr: float = 1e-5):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.stale = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the current lr."""
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale > self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.stale = 0
        return self.lr
