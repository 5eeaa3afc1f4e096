"""Sampling concrete networks by perturbing weights, and Monte Carlo predictive statistics.

A function sample replaces each weight matrix W by ``W * mask + noise``
with a Bernoulli keep-mask and additive Gaussian noise. Biases are left
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import LabeledBatch, one_hot
from .nn import LayerSpec, ParamSet, forward, softmax_rows
from .objectives import LabelRegime
from .rng import Rng


GAUSSIAN_MODES = ("additive", "multiplicative")


@dataclass(frozen=True)
class DropoutSpec:
    """Weight perturbation for one network.

    ``additive``: ``noise ~ N(0, gaussian_std**2)`` independent of the weights.
    ``multiplicative``: ``noise = W * mask * eps`` with ``eps ~ N(0, gaussian_std**2)``,
    i.e. Gaussian dropout with variance ``gaussian_std**2`` on the kept weights.
    """

    bernoulli_drop_rate: float = 0.0
    gaussian_std: float = 0.0
    gaussian_mode: str = "additive"

    def __post_init__(self):
        if not 0.0 <= self.bernoulli_drop_rate <= 1.0:
            raise ValueError(f"drop rate must lie in [0, 1], got {self.bernoulli_drop_rate}")
        if not self.gaussian_std >= 0.0:
            raise ValueError(f"gaussian_std must be >= 0, got {self.gaussian_std}")
        if self.gaussian_mode not in GAUSSIAN_MODES:
            raise ValueError(f"gaussian_mode must be one of {GAUSSIAN_MODES}")

    @property
    def keep_prob(self) -> float:
        return 1.0 - self.bernoulli_drop_rate

    @property
    def degenerate(self) -> bool:
        return self.bernoulli_drop_rate == 0.0 and self.gaussian_std == 0.0


@dataclass
class PerturbedParams:
    """A sampled network with effective weights ``base.W * mask + noise``.

    ``gain`` is set for multiplicative noise (``noise = base.W * mask * gain``)
    and enters the chain rule; additive noise does not depend on the weights.
    """

    base: ParamSet
    mask: list[np.ndarray]
    noise: list[np.ndarray]
    gain: list[np.ndarray] | None = None

    def __post_init__(self):
        self._weights = [w * a + b for w, a, b in zip(self.base.weights, self.mask, self.noise)]

    @property
    def biases(self) -> list[np.ndarray]:
        return self.base.biases

    def effective_weights(self) -> list[np.ndarray]:
        return self._weights

    def weight_jacobian(self) -> list[np.ndarray]:
        if self.gain is None:
            return self.mask
        return [a * (1.0 + e) for a, e in zip(self.mask, self.gain)]

    def effective(self) -> ParamSet:
        return ParamSet([w.copy() for w in self._weights], [b.copy() for b in self.base.biases])


def sample_function(params: ParamSet, spec: DropoutSpec, rng: Rng) -> PerturbedParams:
    """Draw one network: Bernoulli keep-mask and Gaussian noise on every weight matrix."""
    gen = rng.generator()
    mask, noise, gain = [], [], []
    for w in params.weights:
        # both draws always happen so the stream layout does not depend on the spec
        keep = (gen.random(w.shape) < spec.keep_prob).astype(np.float64)
        eps = spec.gaussian_std * gen.standard_normal(w.shape)
        mask.append(keep)
        if spec.gaussian_mode == "multiplicative":
            gain.append(eps)
            noise.append(w * keep * eps)
        else:
            noise.append(eps)
    return PerturbedParams(params, mask, noise, gain if spec.gaussian_mode == "multiplicative" else None)


def sample_fake_batch(gen_params: ParamSet, gen_specs: Sequence[LayerSpec], gen_spec: DropoutSpec,
                      classes: Sequence[int], regime: LabelRegime, rng: Rng) -> LabeledBatch:
    """Generate one fake row per entry of ``classes`` from a single sampled generator.

    The returned batch's ``labels`` are the discriminator targets the
    generator aims for; ``gen_classes`` are the one-hot inputs used.
    """
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size == 0:
        raise ValueError("need at least one label to generate a fake batch")
    fn = sample_function(gen_params, gen_spec, rng)
    x, tape = forward(fn, one_hot(classes, gen_specs[0].in_dim), gen_specs)
    return LabeledBatch(x, regime.fake_targets(classes), regime, classes, fn, tape)


@dataclass
class PredictiveStats:
    mean: np.ndarray
    variance: np.ndarray
    tau: float


def predictive_stats(disc_params: ParamSet, disc_specs: Sequence[LayerSpec], disc_spec: DropoutSpec,
                     inputs: np.ndarray, m: int, tau: float, rng: Rng) -> PredictiveStats:
    """Mean and per-class variance of the softmax output over ``m`` sampled discriminators.

    ``variance = 1/tau + mean(p**2) - mean(p)**2``, clamped at zero.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not tau > 0:
        raise ValueError("tau must be positive")
    probs = []
    for i in range(m):
        fn = sample_function(disc_params, disc_spec, rng.child(i))
        logits, _ = forward(fn, inputs, disc_specs)
        probs.append(softmax_rows(logits))
    probs = np.stack(probs)
    mean = probs.mean(axis=0)
    # mean(p**2) - mean**2 evaluated in centred form; identical samples give exactly 1/tau
    spread = ((probs - mean) ** 2).mean(axis=0)
    var = np.maximum(1.0 / tau + spread, 0.0)
    return PredictiveStats(mean, var, tau)
