import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bcgan.nn import (LayerSpec, NumericError, ParamSet, ShapeError, backward, forward, init_params,
                      mlp_specs, sigmoid, softmax_rows, softplus, weight_normalize)

from conftest import max_rel_err, numeric_grad, small_net


def test_single_identity_layer_is_affine():
    p = ParamSet([np.array([[1.0, 2.0], [3.0, 4.0]])], [np.array([0.5, -1.0])])
    out, _ = forward(p, np.array([[1.0, 1.0]]), [LayerSpec(2, 2, "identity")])
    np.testing.assert_array_equal(out, [[3.5, 6.0]])


def test_softplus_at_zero_is_ln2():
    p = ParamSet([np.zeros((1, 3))], [np.zeros(1)])
    out, _ = forward(p, np.ones((4, 3)), [LayerSpec(3, 1, "softplus")])
    np.testing.assert_allclose(out, np.log(2.0), rtol=0, atol=1e-15)


def test_activations_stay_finite_at_extremes():
    z = np.array([-800.0, -50.0, 0.0, 50.0, 800.0])
    assert np.all(np.isfinite(softplus(z)))
    assert np.all(np.isfinite(sigmoid(z)))
    np.testing.assert_allclose(softplus(z)[-1], 800.0)
    assert sigmoid(z)[0] == pytest.approx(0.0) and sigmoid(z)[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("act", ["identity", "softplus", "sigmoid"])
def test_backward_matches_finite_differences(gen, act):
    specs, p = small_net(3, [5, 4], 2, gen, out_act=act)
    x = gen.standard_normal((6, 3))
    c = gen.standard_normal((6, 2))

    def f(q):
        return float((forward(q, x, specs)[0] * c).sum())

    out, tape = forward(p, x, specs)
    grad, gx = backward(tape, c)
    assert max_rel_err(grad, numeric_grad(f, p)) < 1e-6

    # input gradient too
    h = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        up, dn = x.copy(), x.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = ((forward(p, up, specs)[0] - forward(p, dn, specs)[0]) * c).sum() / (2 * h)
    np.testing.assert_allclose(gx, num, rtol=1e-5, atol=1e-8)


def test_forward_is_deterministic(gen):
    specs, p = small_net(4, [8], 3, gen)
    x = gen.standard_normal((5, 4))
    np.testing.assert_array_equal(forward(p, x, specs)[0], forward(p, x, specs)[0])


@pytest.mark.parametrize("x_shape", [(3, 5), (3,), (2, 3, 4)])
def test_forward_rejects_bad_input(gen, x_shape):
    specs, p = small_net(4, [8], 3, gen)
    with pytest.raises(ShapeError):
        forward(p, np.zeros(x_shape), specs)


def test_forward_rejects_spec_mismatch(gen):
    specs, p = small_net(4, [8], 3, gen)
    with pytest.raises(ShapeError, match="layer 1"):
        forward(p, np.zeros((1, 4)), mlp_specs(4, [8], 2))


def test_backward_rejects_wrong_grad_shape(gen):
    specs, p = small_net(2, [3], 2, gen)
    _, tape = forward(p, np.zeros((4, 2)), specs)
    with pytest.raises(ShapeError):
        backward(tape, np.zeros((4, 3)))


def test_paramset_rejects_inconsistent_layers():
    with pytest.raises(ShapeError):
        ParamSet([np.zeros((3, 2)), np.zeros((2, 4))], [np.zeros(3), np.zeros(2)])
    with pytest.raises(ShapeError):
        ParamSet([np.zeros((3, 2))], [np.zeros(2)])


def test_init_is_seeded_and_bounded():
    specs = mlp_specs(10, [20], 5)
    a = init_params(specs, np.random.default_rng(7))
    b = init_params(specs, np.random.default_rng(7))
    assert a.equals(b)
    bound = np.sqrt(6.0 / 30)
    assert np.all(np.abs(a.weights[0]) <= bound)
    assert all(np.all(bb == 0) for bb in a.biases)


def test_flat_round_trip(gen):
    _, p = small_net(3, [4], 2, gen)
    assert p.with_flat(p.flat()).equals(p)
    with pytest.raises(ShapeError):
        p.with_flat(np.zeros(p.total_dim + 1))


class TestWeightNormalize:
    def test_norm_two_becomes_unit(self):
        p = ParamSet([np.array([[2.0, 0.0]])], [np.zeros(1)])
        q = weight_normalize(p)
        np.testing.assert_allclose(q.weights[0], [[1.0, 0.0]])
        assert q.norm() == pytest.approx(1.0)

    def test_inside_ball_untouched(self):
        p = ParamSet([np.array([[0.3, 0.4]])], [np.zeros(1)])
        assert weight_normalize(p).equals(p)

    def test_zero_stays_zero(self):
        p = ParamSet([np.zeros((2, 2))], [np.zeros(2)])
        assert weight_normalize(p).equals(p)

    def test_non_finite_raises(self):
        p = ParamSet([np.array([[np.nan, 1.0]])], [np.zeros(1)])
        with pytest.raises(NumericError):
            weight_normalize(p)

    def test_huge_finite_weights_do_not_collapse(self):
        p = ParamSet([np.array([[3e300, 4e300]])], [np.zeros(1)])
        assert p.norm() == pytest.approx(5e300)
        np.testing.assert_allclose(weight_normalize(p).weights[0], [[0.6, 0.8]])

    def test_per_layer(self):
        p = ParamSet([np.full((1, 1), 3.0), np.full((1, 1), 0.5)], [np.zeros(1), np.zeros(1)])
        q = weight_normalize(p, per_layer=True)
        assert q.weights[0][0, 0] == pytest.approx(1.0)
        assert q.weights[1][0, 0] == 0.5

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=6, max_size=6))
    def test_projection_properties(self, vals):
        p = ParamSet([np.array(vals[:4]).reshape(2, 2)], [np.array(vals[4:])])
        q = weight_normalize(p)
        assert q.norm() <= 1.0 + 1e-12
        assert weight_normalize(q).equals(q)  # idempotent
        if p.norm() > 0:
            # direction preserved
            np.testing.assert_allclose(q.flat() * p.norm(), p.flat() * min(1.0, p.norm()), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=3, max_size=3))
def test_softmax_rows_is_a_distribution(vals):
    p = softmax_rows(np.array([vals]))
    assert np.all(p >= 0) and p.sum() == pytest.approx(1.0)
