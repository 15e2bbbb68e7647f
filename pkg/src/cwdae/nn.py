"""MLP layers and the Adam optimizer for the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Tensor

ACTIVATIONS = ("elu", "relu", "identity")


class ConfigurationError(ValueError):
    """Invalid model or layer configuration."""


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and per-layer activations of a fully connected net."""

    in_features: int
    widths: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.widths) == 0:
            raise ConfigurationError("an MLP needs at least one layer")
        if len(self.widths) != len(self.activations):
            raise ConfigurationError("one activation per layer is required")
        if self.in_features < 1 or any(w < 1 for w in self.widths):
            raise ConfigurationError(f"layer widths must be positive, got {self.widths}")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ConfigurationError(f"unknown activation(s) {bad}")

    @property
    def out_features(self) -> int:
        return self.widths[-1]

    def param_shapes(self, prefix: str = "") -> dict[str, tuple[int, int] | tuple[int]]:
        shapes = {}
        fan_in = self.in_features
        for i, width in enumerate(self.widths):
            shapes[f"{prefix}W{i}"] = (fan_in, width)
            shapes[f"{prefix}b{i}"] = (width,)
            fan_in = width
        return shapes


def init_mlp(spec: MlpSpec, rng: np.random.Generator, prefix: str = "") -> dict[str, Tensor]:
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) init for weights and biases."""
    params = {}
    fan_in = spec.in_features
    for i, width in enumerate(spec.widths):
        bound = np.sqrt(1.0 / fan_in)
        for name, shape in ((f"{prefix}W{i}", (fan_in, width)), (f"{prefix}b{i}", (width,))):
            params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True,
                                  name=name)
        fan_in = width
    return params


def forward_mlp(spec: MlpSpec, params: dict[str, Tensor], x, prefix: str = "") -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.in_features:
        raise ConfigurationError(
            f"input of shape {x.shape} does not match MLP input width {spec.in_features}")
    for name, shape in spec.param_shapes(prefix).items():
        if params[name].shape != shape:
            raise ConfigurationError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
    h = x
    for i, act in enumerate(spec.activations):
        h = h @ params[f"{prefix}W{i}"] + params[f"{prefix}b{i}"]
        if act == "elu":
            h = h.elu(1.0)
        elif act == "relu":
            h = h.relu()
    return h


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    """In-place Adam update with bias correction."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter block '{name}'")
        if g.shape != params[name].shape:
            raise ConfigurationError(f"gradient shape {g.shape} != parameter shape for '{name}'")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p = params[name]
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
