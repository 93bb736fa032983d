import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbcpr.nn import (AdamState, Mlp, MlpSpec, ParamVector, TargetPair, TwoTower, adam_step, gradcheck,
                      mlp_backward, mlp_forward, polyak_update)


def _params(spec, **blocks):
    pv = ParamVector(np.zeros(spec.n_params), spec.manifest())
    views = pv.blocks()
    for name, value in blocks.items():
        views[name.replace("_", ".", 1)][...] = value
    return pv


def test_spec_rejects_zero_dims():
    with pytest.raises(ValueError):
        MlpSpec(0, (3,), 1)
    with pytest.raises(ValueError):
        MlpSpec(2, (0,), 1)


def test_identity_linear_net():
    spec = MlpSpec(2, (), 2)
    p = _params(spec, l0_weight=np.eye(2))
    np.testing.assert_array_equal(mlp_forward(spec, p, [1.0, 2.0]), [1.0, 2.0])


def test_zero_params_tanh_output_is_zero():
    spec = MlpSpec(3, (4, 4), 2, output_activation="tanh")
    out = mlp_forward(spec, np.zeros(spec.n_params), np.array([0.3, -7.0, 2.0]))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_hand_evaluated_relu_net():
    # u = W1 x + b1 = (0.5 + 0.25 + 0.1, -1 - 0.5 + 0.2) = (0.85, -1.3); relu -> (0.85, 0)
    # y = 2 * 0.85 + 3 * 0 - 0.5 = 1.2
    spec = MlpSpec(2, (2,), 1, first_layer_normtanh=False)
    p = _params(spec, l0_weight=[[0.5, -0.25], [-1.0, 0.5]], l0_bias=[0.1, 0.2], l1_weight=[[2.0, 3.0]],
                l1_bias=[-0.5])
    assert mlp_forward(spec, p, [1.0, -1.0])[0] == pytest.approx(1.2, abs=1e-15)


def test_hand_evaluated_layernorm_tanh():
    # u = (1, 3): mean 2, var 1 -> normalized (-1, 1)/sqrt(1 + 1e-5)
    spec = MlpSpec(1, (2,), 1)
    p = _params(spec, l0_weight=[[1.0], [3.0]], l0_ln_gain=[1.0, 1.0], l1_weight=[[1.0, 2.0]])
    h = np.tanh(np.array([-1.0, 1.0]) / np.sqrt(1.0 + 1e-5))
    assert mlp_forward(spec, p, [1.0])[0] == pytest.approx(h[0] + 2 * h[1], abs=1e-14)


def test_forward_rejects_dimension_mismatch():
    spec = MlpSpec(3, (4,), 2)
    with pytest.raises(ValueError):
        mlp_forward(spec, np.zeros(spec.n_params), np.ones(2))
    with pytest.raises(ValueError):
        mlp_backward(spec, np.zeros(spec.n_params), np.ones(3), np.ones(3))


def test_forward_is_pure(rng):
    spec = MlpSpec(3, (5, 4), 2, output_activation="sigmoid")
    p = Mlp(spec).init(rng)
    x = rng.normal(size=(7, 3))
    a = mlp_forward(spec, p, x)
    b = mlp_forward(spec, p.copy(), x.copy())
    assert a.tobytes() == b.tobytes()


def test_zero_cotangent_gives_zero_gradients(rng):
    spec = MlpSpec(3, (4,), 2)
    p = Mlp(spec).init(rng)
    g, gx = mlp_backward(spec, p, rng.normal(size=3), np.zeros(2))
    assert not g.any() and not gx.any()


def test_linear_scalar_backward():
    spec = MlpSpec(1, (), 1)
    p = _params(spec, l0_weight=[[1.7]], l0_bias=[0.3])
    g, gx = mlp_backward(spec, p, [3.0], [1.0])
    np.testing.assert_array_equal(g, [3.0, 1.0])
    np.testing.assert_array_equal(gx, [1.7])


@pytest.mark.parametrize("act", ["linear", "tanh", "sigmoid", "l2_normalize"])
def test_backward_matches_central_differences(act, rng):
    spec = MlpSpec(2, (3,), 2 if act == "l2_normalize" else 1, output_activation=act)
    net = Mlp(spec)
    p = net.init(rng)
    x = rng.normal(size=(5, 2))
    cot = rng.normal(size=(5, spec.output_dim))

    def closure(q):
        y, cache = net.forward(q, x)
        return float(np.sum(cot * y)), net.backward(q, cache, cot)[0]

    assert gradcheck(closure, p, net.manifest).max_error < 1e-4
    # input gradient, by hand-rolled differences
    _, gx = mlp_backward(spec, p, x, cot)
    num = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = 1e-6
        num[idx] = (np.sum(cot * mlp_forward(spec, p, x + e)) - np.sum(cot * mlp_forward(spec, p, x - e))) / 2e-6
    np.testing.assert_allclose(gx, num, rtol=1e-6, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_l2_normalize_norm(out_dim, seed, scale):
    r = np.random.default_rng(seed)
    spec = MlpSpec(3, (4,), out_dim, output_activation="l2_normalize")
    y = mlp_forward(spec, Mlp(spec).init(r), scale * r.normal(size=(4, 3)))
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), np.sqrt(out_dim), atol=1e-9)


def test_l2_normalize_of_zero_is_an_error():
    spec = MlpSpec(2, (), 3, output_activation="l2_normalize")
    with pytest.raises((ValueError, FloatingPointError)):
        mlp_forward(spec, np.zeros(spec.n_params), np.ones(2))


def test_param_vector_round_trip(rng):
    spec = MlpSpec(3, (4,), 2)
    pv = ParamVector(Mlp(spec).init(rng), spec.manifest())
    back = ParamVector.from_bytes(pv.to_bytes())
    assert back.values.tobytes() == pv.values.tobytes()
    assert back.manifest == pv.manifest
    with pytest.raises(ValueError):
        ParamVector(np.zeros(3), spec.manifest())


def test_two_tower_gradients(rng):
    net = TwoTower(3, 2, (4,), 3, (5,), 2)
    p = net.init(rng)
    xl, xr, cot = rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), rng.normal(size=(4, 2))

    def closure(q):
        y, cache = net.forward(q, xl, xr)
        return float(np.sum(cot * y)), net.backward(q, cache, cot)[0]

    assert gradcheck(closure, p, net.manifest).passed


# -- Adam and Polyak


def test_adam_zero_gradient_fresh_state_is_identity():
    p = np.array([0.5, -2.0])
    adam_step(AdamState.zeros(2, 0.1), p, np.zeros(2))
    np.testing.assert_array_equal(p, [0.5, -2.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5), st.floats(1e-6, 1.0))
def test_adam_zero_gradient_is_identity(vals, lr):
    p = np.array(vals)
    before = p.copy()
    adam_step(AdamState.zeros(p.size, lr), p, np.zeros_like(p))
    np.testing.assert_array_equal(p, before)


def test_adam_first_step():
    p = np.zeros(1)
    adam_step(AdamState.zeros(1, 0.1), p, np.ones(1))
    assert p[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_two_steps_hand_sequence():
    # step 1: m=0.1, v=0.001 -> m_hat=1, v_hat=1; step 2: m=0.19, v=0.001999 -> m_hat=1, v_hat=1
    p = np.zeros(1)
    state = AdamState.zeros(1, 0.1)
    adam_step(state, p, np.ones(1))
    adam_step(state, p, np.ones(1))
    assert state.step_count == 2
    assert state.first_moment[0] == pytest.approx(0.19, abs=1e-15)
    assert state.second_moment[0] == pytest.approx(0.001999, abs=1e-15)
    assert p[0] == pytest.approx(-0.2 / (1 + 1e-8), abs=1e-12)


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(FloatingPointError, match="critic"):
        adam_step(AdamState.zeros(2, 0.1), np.zeros(2), np.array([1.0, np.nan]), "critic")


def test_polyak_full_copy_and_small_step():
    pair = polyak_update(TargetPair(np.array([3.0, -1.0]), np.zeros(2), polyak=1.0))
    np.testing.assert_array_equal(pair.target, [3.0, -1.0])
    pair = polyak_update(TargetPair(np.ones(1), np.zeros(1), polyak=0.005))
    assert pair.target[0] == pytest.approx(0.005, abs=1e-18)


def test_polyak_converges_monotonically():
    zeta = 0.005
    pair = TargetPair(np.ones(1), np.zeros(1), polyak=zeta)
    gaps = []
    for _ in range(1000):
        polyak_update(pair)
        gaps.append(abs(pair.target[0] - 1.0))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= (1 - zeta) ** 1000 + 1e-12


def test_target_pair_shape_check():
    with pytest.raises(ValueError):
        TargetPair(np.zeros(2), np.zeros(3))


# -- the checker itself


def test_gradcheck_quadratic():
    p = np.random.default_rng(1).normal(size=6)
    rep = gradcheck(lambda q: (float(q @ q), 2 * q), p)
    assert rep.max_error < 1e-8 and rep.passed


def test_gradcheck_flags_corrupted_gradient():
    p = np.random.default_rng(1).normal(size=6)
    rep = gradcheck(lambda q: (float(q @ q), 2.2 * q), p, [("a", (3,)), ("b", (3,))])
    assert not rep.passed
    assert rep.failed_blocks == ["a", "b"]
