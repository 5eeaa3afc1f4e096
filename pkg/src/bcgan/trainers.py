"""Training loops: MAP with Monte Carlo function sampling, and Langevin dynamics.

One iteration draws ``m`` discriminator functions, takes a gradient step
on the discriminator and projects it onto the unit ball, then runs
``gen_rounds`` generator updates, each averaging ``m_prime`` sampled
(generator, discriminator) function pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset, LabeledBatch, balanced_classes, batches, with_labeled_rows
from .nn import LayerSpec, ParamSet, init_params, mlp_specs, weight_normalize
from .objectives import LabelRegime, LossReport, discriminator_loss, generator_loss
from .rng import Rng
from .stochastic import DropoutSpec, sample_fake_batch, sample_function

log = logging.getLogger(__name__)

INFERENCE_MODES = ("map_mc", "sgld")

# stream keys
_INIT, _STEP, _EPOCH, _LABELED = 1, 2, 3, 4
_D_FAKE, _D_FN, _G_FAKE, _G_DFN, _D_NOISE, _G_NOISE = range(6)


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, detail: str = ""):
        super().__init__(f"training diverged at iteration {iteration}" + (f": {detail}" if detail else ""))
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    eta0: float = 0.1
    gen_eta_scale: float = 1.0
    lam: float = 1.0
    disc_dropout: DropoutSpec = DropoutSpec(0.05, float(np.sqrt(0.9)), "multiplicative")
    gen_dropout: DropoutSpec = DropoutSpec(0.1, float(np.sqrt(0.9)), "multiplicative")
    m: int = 2
    m_prime: int = 2
    gen_rounds: int = 2
    batch_real: int = 100
    batch_fake: int = 100
    epochs: int = 200
    inference: str = "map_mc"
    sgld_noise_scale: float = 0.1
    tau: float = 100.0
    seed: int = 0
    gen_hidden: tuple[int, ...] = (500, 500, 500)
    disc_hidden: tuple[int, ...] = (32,)
    gen_output: str = "identity"
    fake_class_term: bool | None = None
    per_layer_norm: bool = False
    labeled_batch: int = 0

    def __post_init__(self):
        if not self.eta0 >= 0:
            raise ValueError("eta0 must be >= 0")
        if not self.gen_eta_scale > 0:
            raise ValueError("gen_eta_scale must be positive")
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        for name in ("m", "m_prime", "gen_rounds", "batch_real", "batch_fake"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.labeled_batch < 0:
            raise ValueError("labeled_batch must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.inference not in INFERENCE_MODES:
            raise ValueError(f"inference must be one of {INFERENCE_MODES}")
        if not self.sgld_noise_scale >= 0:
            raise ValueError("sgld_noise_scale must be >= 0")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def uses_fake_class_term(self, regime: LabelRegime) -> bool:
        if self.fake_class_term is None:
            return regime.kind == "semi_supervised"
        return self.fake_class_term


@dataclass
class TrainState:
    theta: ParamSet
    omega: ParamSet
    disc_specs: list[LayerSpec]
    gen_specs: list[LayerSpec]
    regime: LabelRegime
    rng: Rng
    epoch: int = 0
    iteration: int = 0
    history: list[LossReport] = field(default_factory=list)

    @property
    def gen_classes(self) -> int:
        return self.gen_specs[0].in_dim


def init_state(cfg: TrainConfig, regime: LabelRegime, data_dim: int) -> TrainState:
    """Random initial networks; the discriminator starts inside the unit ball."""
    rng = Rng(cfg.seed)
    n_gen_in = regime.num_classes
    disc_specs = mlp_specs(data_dim, cfg.disc_hidden, regime.output_dim)
    gen_specs = mlp_specs(n_gen_in, cfg.gen_hidden, data_dim, out_act=cfg.gen_output)
    theta = weight_normalize(init_params(disc_specs, rng.child(_INIT, 0).generator()),
                             per_layer=cfg.per_layer_norm)
    omega = init_params(gen_specs, rng.child(_INIT, 1).generator())
    return TrainState(theta, omega, disc_specs, gen_specs, regime, rng)


def lr_schedule(eta0: float, epoch: int, mode: str) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if mode == "map_mc":
        return eta0
    if mode == "sgld":
        return eta0 / (1 + epoch)
    raise ValueError(f"unknown inference mode {mode!r}")


def langevin_noise(like: ParamSet, variance: float, rng: Rng) -> ParamSet:
    """Gaussian noise of the given per-coordinate variance, shaped like ``like``."""
    gen = rng.generator()
    std = float(np.sqrt(variance))
    return ParamSet([std * gen.standard_normal(w.shape) for w in like.weights],
                    [std * gen.standard_normal(b.shape) for b in like.biases])


def _check_finite(state_iter: int, rep: LossReport, *params: ParamSet):
    if not rep.is_finite():
        raise TrainingDiverged(state_iter, "non-finite loss")
    for p in params:
        if not p.is_finite():
            raise TrainingDiverged(state_iter, "non-finite parameters")


def _step(state: TrainState, real: LabeledBatch, cfg: TrainConfig,
          step_size: float, noise_var: float) -> TrainState:
    regime = state.regime
    rng = state.rng.child(_STEP, state.iteration)
    classes = balanced_classes(cfg.batch_fake, state.gen_classes)

    # discriminator
    fake = sample_fake_batch(state.omega, state.gen_specs, cfg.gen_dropout, classes,
                             regime, rng.child(_D_FAKE))
    fns = [sample_function(state.theta, cfg.disc_dropout, rng.child(_D_FN, j))
           for j in range(cfg.m)]
    rep, grad = discriminator_loss(fns, real, fake, state.disc_specs, regime,
                                   cfg.uses_fake_class_term(regime))
    theta = state.theta.add_scaled(grad, -step_size)
    if noise_var > 0:
        theta = theta + langevin_noise(theta, noise_var, rng.child(_D_NOISE))
    _check_finite(state.iteration, rep, theta)
    theta = weight_normalize(theta, per_layer=cfg.per_layer_norm)

    # generator, several rounds per discriminator update
    omega = state.omega
    g_step, g_noise = step_size * cfg.gen_eta_scale, noise_var * cfg.gen_eta_scale
    l_g = mmd = 0.0
    for r in range(cfg.gen_rounds):
        gsum = None
        for j in range(cfg.m_prime):
            fake = sample_fake_batch(omega, state.gen_specs, cfg.gen_dropout, classes,
                                     regime, rng.child(_G_FAKE, r, j))
            dfn = sample_function(theta, cfg.disc_dropout, rng.child(_G_DFN, r, j))
            rep_g, g = generator_loss(dfn, real, fake, state.disc_specs, regime, cfg.lam)
            g = g.scaled(1.0 / cfg.m_prime)
            gsum = g if gsum is None else gsum + g
            l_g += rep_g.l_g
            mmd += rep_g.mmd
        omega = omega.add_scaled(gsum, -g_step)
        if g_noise > 0:
            omega = omega + langevin_noise(omega, g_noise, rng.child(_G_NOISE, r))
    count = cfg.gen_rounds * cfg.m_prime
    rep.l_g, rep.mmd = l_g / count, mmd / count
    rep.total_g = rep.l_g + cfg.lam * rep.mmd
    _check_finite(state.iteration, rep, omega)

    return replace(state, theta=theta, omega=omega, iteration=state.iteration + 1,
                   history=[*state.history, rep])


def train_step_mapmc(state: TrainState, real: LabeledBatch, cfg: TrainConfig) -> TrainState:
    eta = lr_schedule(cfg.eta0, state.epoch, "map_mc")
    return _step(state, real, cfg, eta, 0.0)


def train_step_sgld(state: TrainState, real: LabeledBatch, cfg: TrainConfig) -> TrainState:
    """Half-size gradient step plus N(0, gamma * eta_t) noise on every coordinate."""
    eta = lr_schedule(cfg.eta0, state.epoch, "sgld")
    return _step(state, real, cfg, eta / 2, cfg.sgld_noise_scale * eta)


def train_step(state: TrainState, real: LabeledBatch, cfg: TrainConfig) -> TrainState:
    if cfg.inference == "sgld":
        return train_step_sgld(state, real, cfg)
    return train_step_mapmc(state, real, cfg)


def fit(data: Dataset, cfg: TrainConfig,
        callbacks: Iterable[Callable[[TrainState], None]] = (),
        state: TrainState | None = None) -> TrainState:
    """Run ``cfg.epochs`` epochs; callbacks receive the state after each epoch."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if state is None:
        state = init_state(cfg, data.regime, data.dim)
    callbacks = list(callbacks)
    for _ in range(cfg.epochs):
        epoch_rng = state.rng.child(_EPOCH, state.epoch)
        for i, real in enumerate(batches(data, cfg.batch_real, epoch_rng)):
            if cfg.labeled_batch and data.regime.kind == "semi_supervised":
                real = with_labeled_rows(real, data, cfg.labeled_batch, epoch_rng.child(_LABELED, i))
            state = train_step(state, real, cfg)
        state = replace(state, epoch=state.epoch + 1)
        if state.history:
            last = state.history[-1]
            log.debug("epoch %d: total_d=%.4f total_g=%.4f mmd=%.4g",
                      state.epoch, last.total_d, last.total_g, last.mmd)
        for cb in callbacks:
            cb(state)
    return state
