"""Dense MLP layers with hand-written reverse-mode gradients.

Arrays are plain float64 numpy arrays. A layer computes
``act(a @ W.T + b)`` with ``W`` of shape (out_dim, in_dim) and ``b`` of
shape (out_dim,); batches are rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("identity", "softplus", "sigmoid")


class ShapeError(ValueError):
    pass


class NumericError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "softplus"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def mlp_specs(in_dim: int, hidden: Sequence[int], out_dim: int,
              hidden_act: str = "softplus", out_act: str = "identity") -> list[LayerSpec]:
    dims = [in_dim, *hidden, out_dim]
    specs = []
    for k in range(len(dims) - 1):
        act = out_act if k == len(dims) - 2 else hidden_act
        specs.append(LayerSpec(dims[k], dims[k + 1], act))
    return specs


@dataclass
class ParamSet:
    """Weights and biases of one network, layer by layer.

    Also used for gradients, which have the same shape as the parameters
    they differentiate.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases differ in layer count")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: W {w.shape} and b {b.shape} are inconsistent")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k}: in_dim {w.shape[1]} does not match "
                    f"previous out_dim {self.weights[k - 1].shape[0]}")

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.weights, self.biases))

    @property
    def total_dim(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def effective_weights(self) -> list[np.ndarray]:
        return self.weights

    def weight_jacobian(self) -> list[np.ndarray] | None:
        return None

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.total_dim:
            raise ShapeError(f"flat vector has {vec.size} entries, expected {self.total_dim}")
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return ParamSet(arrays[0::2], arrays[1::2])

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "ParamSet":
        return ParamSet([np.zeros_like(w) for w in self.weights],
                        [np.zeros_like(b) for b in self.biases])

    def norm(self) -> float:
        # scaled by the largest entry so huge but finite weights do not overflow
        big = max((float(np.max(np.abs(a))) for a in self.arrays() if a.size), default=0.0)
        if big == 0.0 or not np.isfinite(big):
            return big
        return big * float(np.sqrt(sum(np.sum((a / big) ** 2) for a in self.arrays())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def add_scaled(self, other: "ParamSet", scale: float) -> "ParamSet":
        """Return ``self + scale * other``."""
        return ParamSet([w + scale * ow for w, ow in zip(self.weights, other.weights)],
                        [b + scale * ob for b, ob in zip(self.biases, other.biases)])

    def scaled(self, scale: float) -> "ParamSet":
        return ParamSet([scale * w for w in self.weights], [scale * b for b in self.biases])

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return self.add_scaled(other, 1.0)

    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def equals(self, other: "ParamSet") -> bool:
        return (self.shapes() == other.shapes()
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))


GradSet = ParamSet


def init_params(specs: Sequence[LayerSpec], rng: np.random.Generator) -> ParamSet:
    """Uniform fan-balanced init on [-s, s], s = sqrt(6 / (in + out)); zero biases."""
    weights, biases = [], []
    for spec in specs:
        s = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        weights.append(rng.uniform(-s, s, size=(spec.out_dim, spec.in_dim)))
        biases.append(np.zeros(spec.out_dim))
    return ParamSet(weights, biases)


def _check_specs(params, specs: Sequence[LayerSpec]):
    weights = params.effective_weights()
    if len(weights) != len(specs):
        raise ShapeError(f"{len(specs)} layer specs for {len(weights)} parameter layers")
    for k, (w, spec) in enumerate(zip(weights, specs)):
        if w.shape != (spec.out_dim, spec.in_dim):
            raise ShapeError(f"layer {k}: weight shape {w.shape} does not match spec "
                             f"{spec.out_dim}x{spec.in_dim}")


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # exp(-|z|) never overflows
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _activate(z, name):
    if name == "identity":
        return z
    if name == "softplus":
        return softplus(z)
    return sigmoid(z)


def _activation_grad(z, a, name):
    if name == "identity":
        return np.ones_like(z)
    if name == "softplus":
        return sigmoid(z)
    return a * (1.0 - a)


@dataclass
class ForwardTape:
    specs: list[LayerSpec]
    weights: list[np.ndarray]
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    outputs: list[np.ndarray]
    jacobian: list[np.ndarray] | None = None
    output_shape: tuple[int, int] = field(default=(0, 0))


def forward(params, x: np.ndarray, specs: Sequence[LayerSpec]) -> tuple[np.ndarray, ForwardTape]:
    """Evaluate the network on a batch of rows.

    ``params`` is a :class:`ParamSet` or a sampled network exposing
    ``effective_weights()``, ``biases`` and ``weight_jacobian()``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input must be 2-D, got shape {x.shape}")
    _check_specs(params, specs)
    weights = params.effective_weights()
    if x.shape[1] != specs[0].in_dim:
        raise ShapeError(f"layer 0: input has {x.shape[1]} columns, expected {specs[0].in_dim}")
    inputs, pre, outputs = [], [], []
    a = x
    for w, b, spec in zip(weights, params.biases, specs):
        inputs.append(a)
        z = a @ w.T + b
        a = _activate(z, spec.activation)
        pre.append(z)
        outputs.append(a)
    tape = ForwardTape(list(specs), list(weights), inputs, pre, outputs,
                       jacobian=params.weight_jacobian(), output_shape=a.shape)
    return a, tape


def backward(tape: ForwardTape, out_grad: np.ndarray) -> tuple[ParamSet, np.ndarray]:
    """Gradients of a scalar whose gradient w.r.t. the network output is ``out_grad``.

    For a perturbed forward pass the weight gradient is taken w.r.t. the
    unperturbed weights: it is multiplied entry-wise by d(effective)/d(base),
    which is the Bernoulli mask when the Gaussian noise is additive.
    """
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.shape != tape.output_shape:
        raise ShapeError(f"output gradient shape {out_grad.shape} does not match "
                         f"forward output {tape.output_shape}")
    n = len(tape.specs)
    gw, gb = [None] * n, [None] * n
    g = out_grad
    for k in reversed(range(n)):
        dz = g * _activation_grad(tape.pre[k], tape.outputs[k], tape.specs[k].activation)
        gw[k] = dz.T @ tape.inputs[k]
        gb[k] = dz.sum(axis=0)
        g = dz @ tape.weights[k]
        if tape.jacobian is not None:
            gw[k] = gw[k] * tape.jacobian[k]
    return ParamSet(gw, gb), g


def weight_normalize(params: ParamSet, per_layer: bool = False) -> ParamSet:
    """Project onto the unit ball: divide by the Euclidean norm when it exceeds 1.

    The default uses one global norm over every weight and bias. With
    ``per_layer`` each layer's (W, b) pair is projected separately.
    """
    if not params.is_finite():
        raise NumericError("cannot normalize non-finite parameters")
    if not per_layer:
        return _project(params)
    weights, biases = [], []
    for w, b in params.layers:
        q = _project(ParamSet([w], [b]))
        weights.append(q.weights[0])
        biases.append(q.biases[0])
    return ParamSet(weights, biases)


def _project(params: ParamSet) -> ParamSet:
    norm = params.norm()
    if norm <= 1.0:
        return params
    while True:
        q = ParamSet([w / norm for w in params.weights], [b / norm for b in params.biases])
        if q.norm() <= 1.0:
            return q
        # rounding left the result a hair outside; nudge the divisor up one ulp
        norm = np.nextafter(norm, np.inf)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
