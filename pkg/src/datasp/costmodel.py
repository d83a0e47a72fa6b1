"""Feed-forward cost model: context features -> strictly positive edge costs.

The network predicts a residual on top of a per-edge prior through a
softplus reparameterization: cost_e = floor + softplus(raw_e + shift_e)
with shift_e = softplus^-1(prior_e - floor).  A zero final layer therefore
reproduces the prior exactly, and every output is >= floor regardless of
the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_COST_FLOOR = 1e-3


def softplus(z):
    return np.logaddexp(0.0, z)


def inv_softplus(y):
    """Inverse of softplus on positive inputs, stable for both tails."""
    y = np.asarray(y, dtype=float)
    small = y < 20.0
    out = np.empty_like(y)
    out[small] = np.log(np.expm1(np.maximum(y[small], 1e-12)))
    out[~small] = y[~small] + np.log1p(-np.exp(-y[~small]))
    return out


@dataclass
class ModelParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feature_dim: int
    hidden_sizes: list[int]
    edge_count: int
    cost_floor: float = DEFAULT_COST_FLOOR

    def copy(self) -> "ModelParams":
        return ModelParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            feature_dim=self.feature_dim,
            hidden_sizes=list(self.hidden_sizes),
            edge_count=self.edge_count,
            cost_floor=self.cost_floor,
        )

    def flat_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def scale(self, factor: float) -> None:
        for w in self.weights:
            w *= factor
        for b in self.biases:
            b *= factor

    def add(self, other: "ParamGrads") -> None:
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b

    def norm(self) -> float:
        total = 0.0
        for arr in self.weights + self.biases:
            total += float((arr * arr).sum())
        return float(np.sqrt(total))


def zero_grads(params: ModelParams) -> ParamGrads:
    return ParamGrads(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )


def init_params(feature_dim: int, hidden_sizes, edge_count: int, seed: int,
                cost_floor: float = DEFAULT_COST_FLOOR) -> ModelParams:
    """Scaled-uniform fan-in init; the final layer starts at zero so the
    initial prediction equals the prior exactly."""
    if feature_dim <= 0 or edge_count <= 0:
        raise ValidationError("feature_dim and edge_count must be positive")
    hidden_sizes = [int(h) for h in hidden_sizes]
    if any(h <= 0 for h in hidden_sizes):
        raise ValidationError("hidden sizes must be positive")
    if cost_floor <= 0:
        raise ValidationError("cost_floor must be positive")
    rng = np.random.default_rng(seed)
    dims = [feature_dim] + hidden_sizes + [edge_count]
    weights = []
    biases = []
    for layer in range(len(dims) - 1):
        fan_in, fan_out = dims[layer], dims[layer + 1]
        if layer == len(dims) - 2:
            weights.append(np.zeros((fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        else:
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ModelParams(weights=weights, biases=biases, feature_dim=feature_dim,
                       hidden_sizes=hidden_sizes, edge_count=edge_count,
                       cost_floor=float(cost_floor))


@dataclass
class ForwardCache:
    x: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    raw: np.ndarray
    gate: np.ndarray  # sigmoid(raw + shift), the d(cost)/d(raw) factor
    params: ModelParams = field(repr=False, default=None)


def predict_costs(params: ModelParams, x, prior) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    prior = np.asarray(prior, dtype=float)
    if x.shape != (params.feature_dim,):
        raise ValidationError(f"expected context of dim {params.feature_dim}, got {x.shape}")
    if prior.shape != (params.edge_count,):
        raise ValidationError(f"expected {params.edge_count} priors, got {prior.shape}")

    h = x
    pre_acts: list[np.ndarray] = []
    acts: list[np.ndarray] = [x]
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = w @ h + b
        pre_acts.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    raw = params.weights[-1] @ h + params.biases[-1]

    shift = inv_softplus(np.maximum(prior - params.cost_floor, 1e-9))
    costs = params.cost_floor + softplus(raw + shift)
    gate = np.exp(-np.logaddexp(0.0, -(raw + shift)))  # stable sigmoid
    cache = ForwardCache(x=x, pre_activations=pre_acts, activations=acts,
                         raw=raw, gate=gate, params=params)
    return costs, cache


def backward_params(cache: ForwardCache, grad_costs) -> tuple[ParamGrads, np.ndarray]:
    """Exact reverse-mode gradients through the softplus head and the MLP."""
    params = cache.params
    grad_costs = np.asarray(grad_costs, dtype=float)
    if grad_costs.shape != (params.edge_count,):
        raise ValidationError(f"expected gradient of shape ({params.edge_count},)")
    grads = zero_grads(params)
    delta = grad_costs * cache.gate
    grads.weights[-1][:] = np.outer(delta, cache.activations[-1])
    grads.biases[-1][:] = delta
    upstream = params.weights[-1].T @ delta
    for layer in range(len(params.weights) - 2, -1, -1):
        upstream = upstream * (cache.pre_activations[layer] > 0)
        grads.weights[layer][:] = np.outer(upstream, cache.activations[layer])
        grads.biases[layer][:] = upstream
        upstream = params.weights[layer].T @ upstream
    return grads, upstream
