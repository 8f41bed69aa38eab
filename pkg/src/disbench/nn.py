"""Dense networks and the Adam optimizer on top of :mod:`disbench.autodiff`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, NonFiniteError

ACTIVATIONS = ("relu", "leaky_relu", "identity")
LEAKY_SLOPE = 0.02


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus one activation tag per layer.

    ``input_width`` is optional; when given it is checked at apply time.
    """

    layer_widths: tuple
    activations: tuple
    input_width: int | None = None
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        acts = tuple(self.activations)
        if not widths:
            raise ConfigurationError("an MLP needs at least one layer")
        if any(w <= 0 for w in widths):
            raise ConfigurationError(f"layer widths must be positive, got {widths}")
        if len(acts) != len(widths):
            raise ConfigurationError("one activation per layer is required")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", acts)

    @property
    def output_width(self):
        return self.layer_widths[-1]

    @classmethod
    def hidden(cls, input_width, hidden, output_width, activation="relu"):
        """Hidden layers with ``activation`` followed by a linear output layer."""
        hidden = tuple(hidden)
        return cls(hidden + (output_width,), (activation,) * len(hidden) + ("identity",),
                   input_width=input_width)


def init_params(spec: MlpSpec, input_width: int, rng) -> list:
    """Glorot-uniform weights, zero biases, as a flat [W0, b0, W1, b1, ...] list."""
    if spec.input_width is not None and spec.input_width != input_width:
        raise ConfigurationError(f"spec expects input width {spec.input_width}, got {input_width}")
    params = []
    fan_in = input_width
    for i, fan_out in enumerate(spec.layer_widths):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(ad.parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name=f"W{i}"))
        params.append(ad.parameter(np.zeros((1, fan_out)), name=f"b{i}"))
        fan_in = fan_out
    return params


def _check_input(spec, params, width):
    if len(params) != 2 * len(spec.layer_widths):
        raise ConfigurationError("parameter list does not match the layer count")
    expected = params[0].shape[0]
    if width != expected:
        raise ConfigurationError(f"input width {width} does not match first layer ({expected})")


def mlp_apply(spec: MlpSpec, params: list, x):
    """Forward pass recording the graph. ``x`` is a (batch, width) Tensor or array."""
    x = x if isinstance(x, ad.Tensor) else ad.tensor(x)
    if x.ndim != 2:
        raise ConfigurationError("MLP input must be 2-d (batch, features)")
    _check_input(spec, params, x.shape[1])
    h = x
    for i, act in enumerate(spec.activations):
        h = h @ params[2 * i] + params[2 * i + 1]
        if act == "relu":
            h = ad.relu(h)
        elif act == "leaky_relu":
            h = ad.leaky_relu(h, spec.leaky_slope)
    return h


def mlp_forward(spec: MlpSpec, params: list, x: np.ndarray) -> np.ndarray:
    """Graph-free forward pass; bit-identical to :func:`mlp_apply`."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(spec, params, x.shape[1])
    h = x
    for i, act in enumerate(spec.activations):
        h = h @ params[2 * i].data + params[2 * i + 1].data
        if act == "relu":
            h = np.where(h > 0, h, 0.0)
        elif act == "leaky_relu":
            h = h * np.where(h > 0, 1.0, spec.leaky_slope)
    return h


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.first_moment = [np.zeros(p.shape) for p in params]
        state.second_moment = [np.zeros(p.shape) for p in params]
        return state


def adam_step(params: list, grads: list, state: AdamState):
    """One bias-corrected Adam update, applied to the parameter arrays in place.

    Raises NonFiniteError (and leaves everything untouched) if any gradient
    entry is NaN or infinite.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ConfigurationError("params, grads and optimizer state disagree in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.first_moment[i].shape:
            raise ConfigurationError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            name = getattr(p, "name", None) or str(i)
            raise NonFiniteError(f"non-finite gradient for parameter {name}",
                                 step=state.step_count)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        target = p.data if isinstance(p, ad.Tensor) else p
        target -= update
    return params, state
