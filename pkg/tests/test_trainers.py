from dataclasses import replace

import numpy as np
import pytest

from bcgan.data import Dataset, GmmSpec, LabeledBatch, make_gmm, mask_labels
from bcgan.objectives import LabelRegime
from bcgan.rng import Rng
from bcgan.stochastic import DropoutSpec
from bcgan.trainers import (TrainConfig, TrainingDiverged, fit, init_state, langevin_noise, lr_schedule,
                            train_step, train_step_mapmc, train_step_sgld)

TINY = TrainConfig(gen_hidden=(8, 8), disc_hidden=(6,), batch_real=20, batch_fake=10, epochs=2,
                   eta0=0.05, gen_eta_scale=0.5,
                   disc_dropout=DropoutSpec(0.05, 0.3, "multiplicative"),
                   gen_dropout=DropoutSpec(0.1, 0.3, "multiplicative"))


def tiny_data(per_class=30, seed=0):
    d = make_gmm(GmmSpec(per_class_count=per_class), Rng(seed))
    return mask_labels(d, 5, Rng(seed + 1))


def first_batch(data, n=20):
    return LabeledBatch(data.x[:n], data.labels[:n], data.regime)


class TestConfig:
    @pytest.mark.parametrize("field,value", [("m", 0), ("m_prime", 0), ("gen_rounds", 0), ("batch_real", 0),
                                             ("epochs", -1), ("eta0", -0.1), ("lam", -1.0), ("tau", 0.0),
                                             ("inference", "adam"), ("sgld_noise_scale", -1.0),
                                             ("gen_eta_scale", 0.0), ("labeled_batch", -1)])
    def test_rejects(self, field, value):
        with pytest.raises(ValueError):
            TrainConfig(**{field: value})

    def test_fake_class_term_default_follows_regime(self):
        cfg = TrainConfig()
        assert cfg.uses_fake_class_term(LabelRegime("semi_supervised", 2))
        assert not cfg.uses_fake_class_term(LabelRegime("supervised", 2))
        assert TrainConfig(fake_class_term=True).uses_fake_class_term(LabelRegime("supervised", 2))


class TestSchedule:
    def test_map_is_constant(self):
        assert lr_schedule(0.1, 0, "map_mc") == lr_schedule(0.1, 50, "map_mc") == 0.1

    @pytest.mark.parametrize("epoch", [0, 1, 9])
    def test_sgld_decays_inversely(self, epoch):
        assert lr_schedule(0.1, epoch, "sgld") == pytest.approx(0.1 / (1 + epoch))

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            lr_schedule(0.1, -1, "sgld")
        with pytest.raises(ValueError):
            lr_schedule(0.1, 0, "adam")


def test_init_state_inside_unit_ball():
    s = init_state(TINY, LabelRegime("semi_supervised", 2), 2)
    assert s.theta.norm() <= 1.0 + 1e-12
    assert s.disc_specs[-1].out_dim == 3
    assert s.gen_specs[0].in_dim == 2 and s.gen_specs[-1].out_dim == 2


def test_step_is_deterministic_and_projects():
    data = tiny_data()
    s0 = init_state(TINY, data.regime, 2)
    a = train_step(s0, first_batch(data), TINY)
    b = train_step(s0, first_batch(data), TINY)
    assert a.theta.equals(b.theta) and a.omega.equals(b.omega)
    assert a.iteration == 1 and len(a.history) == 1
    assert a.theta.norm() <= 1.0 + 1e-9


def test_zero_learning_rate_keeps_parameters():
    data = tiny_data()
    cfg = replace(TINY, eta0=0.0)
    s0 = init_state(cfg, data.regime, 2)
    s1 = train_step(s0, first_batch(data), cfg)
    assert s1.theta.equals(s0.theta) and s1.omega.equals(s0.omega)


def test_sgld_without_noise_is_map_at_half_step():
    data = tiny_data()
    cfg = replace(TINY, inference="sgld", sgld_noise_scale=0.0)
    s0 = replace(init_state(cfg, data.regime, 2), epoch=3)
    half = lr_schedule(cfg.eta0, 3, "sgld") / 2
    a = train_step_sgld(s0, first_batch(data), cfg)
    b = train_step_mapmc(s0, first_batch(data), replace(cfg, inference="map_mc", eta0=half))
    assert a.theta.equals(b.theta) and a.omega.equals(b.omega)


def test_generator_step_scale():
    data = tiny_data()
    cfg = replace(TINY, gen_rounds=1, gen_eta_scale=1.0)
    s0 = init_state(cfg, data.regime, 2)
    full = train_step(s0, first_batch(data), cfg)
    part = train_step(s0, first_batch(data), replace(cfg, gen_eta_scale=0.25))
    np.testing.assert_allclose(part.omega.flat() - s0.omega.flat(),
                               0.25 * (full.omega.flat() - s0.omega.flat()), rtol=1e-9, atol=1e-15)
    assert part.theta.equals(full.theta)


def test_langevin_noise_variance():
    like = init_state(replace(TINY, gen_hidden=(300, 300)), LabelRegime("supervised", 2), 2).omega
    noise = langevin_noise(like, 0.04, Rng(3)).flat()
    assert noise.size > 90_000
    assert abs(noise.var() / 0.04 - 1) < 0.05


class TestFit:
    def test_zero_epochs_returns_initial_state(self):
        data = tiny_data()
        s = fit(data, replace(TINY, epochs=0))
        ref = init_state(TINY, data.regime, 2)
        assert s.epoch == 0 and s.theta.equals(ref.theta) and s.omega.equals(ref.omega)

    def test_callbacks_see_each_epoch(self):
        seen = []
        s = fit(tiny_data(), replace(TINY, epochs=3), [lambda st: seen.append((st.epoch, st.iteration))])
        assert seen == [(1, 3), (2, 6), (3, 9)]
        assert s.epoch == 3

    def test_reproducible(self):
        a = fit(tiny_data(), TINY)
        b = fit(tiny_data(), TINY)
        assert a.theta.equals(b.theta) and a.omega.equals(b.omega)

    def test_seed_changes_run(self):
        a = fit(tiny_data(), TINY)
        b = fit(tiny_data(), replace(TINY, seed=1))
        assert not a.omega.equals(b.omega)

    def test_empty_dataset(self):
        empty = Dataset(np.zeros((0, 2)), np.zeros(0, int), LabelRegime("supervised", 2))
        with pytest.raises(ValueError):
            fit(empty, TINY)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self):
        data = tiny_data()
        data.x[:] = 1e300
        with pytest.raises(TrainingDiverged) as info:
            fit(data, TINY)
        assert info.value.iteration == 0

    @pytest.mark.parametrize("kind", ["supervised", "unsupervised"])
    def test_other_regimes_train(self, kind):
        d = make_gmm(GmmSpec(per_class_count=30), Rng(0))
        if kind == "unsupervised":
            d = Dataset(d.x, np.ones(len(d), int), LabelRegime("unsupervised", 1))
        s = fit(d, replace(TINY, epochs=1))
        assert s.iteration == 3 and all(r.is_finite() for r in s.history)

    def test_labeled_supplement_changes_semi_supervised_run_only(self):
        a = fit(tiny_data(), TINY)
        b = fit(tiny_data(), replace(TINY, labeled_batch=10))
        assert not a.theta.equals(b.theta)
        sup = make_gmm(GmmSpec(per_class_count=30), Rng(0))
        c = fit(sup, TINY)
        d = fit(sup, replace(TINY, labeled_batch=10))
        assert c.theta.equals(d.theta)

    def test_sgld_mode_trains(self):
        s = fit(tiny_data(), replace(TINY, inference="sgld", sgld_noise_scale=0.1))
        assert s.epoch == 2 and s.theta.norm() <= 1.0 + 1e-9
