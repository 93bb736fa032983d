import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbcpr.cpr import (D_EPS, CriticEnsemble, Discriminator, critic_loss, discriminator_loss, discriminator_reward,
                       ensemble_reduce, gradient_penalty)
from fbcpr.nn import AdamState, Mlp, MlpSpec, adam_step


def test_loss_at_half():
    loss, _, _ = discriminator_loss(np.full(5, 0.5), np.full(3, 0.5))
    assert loss == pytest.approx(2 * np.log(2), abs=1e-15)


def test_loss_saturated():
    loss, dp, dn = discriminator_loss(np.ones(4), np.zeros(4))
    assert loss == pytest.approx(-2 * np.log(1 - D_EPS), rel=1e-9)
    assert loss == pytest.approx(2e-6, rel=1e-5)
    # clamped region carries no gradient
    assert not dp.any() and not dn.any()


def test_loss_needs_both_sides():
    with pytest.raises(ValueError):
        discriminator_loss([], [0.5])


def test_loss_gradient_matches_differences(rng):
    Dp, Dn = rng.uniform(0.1, 0.9, 6), rng.uniform(0.1, 0.9, 4)
    _, dp, dn = discriminator_loss(Dp, Dn)
    h = 1e-7
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        num = (discriminator_loss(Dp + e, Dn)[0] - discriminator_loss(Dp - e, Dn)[0]) / (2 * h)
        assert dp[i] == pytest.approx(num, rel=1e-6)


def test_reward_examples():
    assert discriminator_reward(0.5) == 0.0
    assert discriminator_reward(0.8) == pytest.approx(np.log(4.0), abs=1e-12)
    assert discriminator_reward(1.0) == pytest.approx(np.log((1 - 1e-6) / 1e-6), abs=1e-9)
    assert discriminator_reward(1.0) == pytest.approx(13.8155, abs=1e-4)
    assert np.isfinite(discriminator_reward(0.0))


@given(st.floats(0, 1))
def test_reward_antisymmetric(D):
    assert discriminator_reward(D) == pytest.approx(-discriminator_reward(1 - D), abs=1e-9)


# -- gradient penalty


def test_penalty_of_constant_net(rng):
    net = Mlp(MlpSpec(3, (4,), 1, True, "relu", "sigmoid"))
    p = np.zeros(net.n_params)
    x, y = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert gradient_penalty(net, p, x, y, "wasserstein", rng)[0] == 1.0
    assert gradient_penalty(net, p, x, y, "simplified", rng)[0] == 0.0


def test_penalty_of_unit_slope_linear_net(rng):
    net = Mlp(MlpSpec(2, (), 1))
    p = np.array([0.6, 0.8, 0.3])
    x, y = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
    assert gradient_penalty(net, p, x, y, "wasserstein", rng)[0] == pytest.approx(0.0, abs=1e-15)
    assert gradient_penalty(net, p, x, y, "simplified", rng)[0] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("mode", ["wasserstein", "simplified"])
def test_penalty_value_matches_finite_difference_input_gradient(mode, rng):
    net = Mlp(MlpSpec(3, (5, 4), 1, True, "relu", "sigmoid"))
    p = net.init(rng)
    pos, neg = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    seed = 11
    value, _ = gradient_penalty(net, p, pos, neg, mode, np.random.default_rng(seed))
    # rebuild the interpolates the same way: positional pairing after independent shuffles, one t per pair
    r = np.random.default_rng(seed)
    if mode == "wasserstein":
        a, b = pos[r.permutation(6)], neg[r.permutation(6)]
        t = r.random((6, 1))
        x = t * a + (1 - t) * b
    else:
        x = pos
    h = 1e-6
    g = np.stack([(net(p, x + h * e)[:, 0] - net(p, x - h * e)[:, 0]) / (2 * h) for e in np.eye(3)], axis=1)
    norm = np.linalg.norm(g, axis=1)
    expect = np.mean((norm - 1) ** 2) if mode == "wasserstein" else np.mean(norm**2)
    assert value == pytest.approx(expect, abs=1e-3)


def test_unknown_penalty_mode(rng):
    with pytest.raises(ValueError):
        Discriminator(2, 2, (4,), gp_mode="l1", rng=rng)


def test_state_only_discriminator_ignores_latent(rng):
    disc = Discriminator(3, 4, (5,), state_only=True, rng=rng)
    s = rng.normal(size=(6, 3))
    np.testing.assert_array_equal(disc.prob(s, rng.normal(size=(6, 4))), disc.prob(s, rng.normal(size=(6, 4))))


def test_trained_discriminator_is_optimal_on_two_points(rng):
    # states {0, 1}; p_M = (0.8, 0.2), p_pi = (0.3, 0.7); optimum D = p_M / (p_M + p_pi)
    disc = Discriminator(1, 1, (8,), gp_coef=0.0, rng=rng)
    opt = AdamState.zeros(disc.net.n_params, 1e-2)
    z = np.ones((1000, 1))
    for _ in range(1500):
        pos = (rng.random((1000, 1)) < 0.2).astype(float)
        neg = (rng.random((1000, 1)) < 0.7).astype(float)
        _, g = disc.loss_and_grad(pos, z, neg, z, rng)
        adam_step(opt, disc.params, g)
    D = disc.prob(np.array([[0.0], [1.0]]), np.ones((2, 1)))
    np.testing.assert_allclose(D, [0.8 / 1.1, 0.2 / 0.9], atol=0.02)


# -- critic


def test_critic_golden():
    r = discriminator_reward(0.8)
    Q, tgt = np.full((2, 1), 3.0), np.array([[2.0], [4.0]])
    assert critic_loss(Q, np.array([r]), tgt, 0.5, 0.5)[0] == pytest.approx((3 - np.log(4) - 1) ** 2, abs=1e-12)
    assert critic_loss(Q, np.array([r]), tgt, 0.5, 0.5)[0] == pytest.approx(0.376634611, abs=1e-9)
    assert critic_loss(Q, np.array([r]), tgt, 0.5, 0.0)[0] == pytest.approx(0.012928972, abs=1e-9)


def test_critic_zero_case(rng):
    Q = np.zeros((2, 5))
    assert critic_loss(Q, discriminator_reward(np.full(5, 0.5)), rng.normal(size=(2, 5)), 0.0, 0.5)[0] == 0.0


def test_critic_gradient_matches_differences(rng):
    Q, r, T = rng.normal(size=(2, 4)), rng.normal(size=4), rng.normal(size=(2, 4))
    _, dQ = critic_loss(Q, r, T, 0.9, 0.5)
    h = 1e-7
    for idx in np.ndindex(2, 4):
        e = np.zeros((2, 4))
        e[idx] = h
        num = (critic_loss(Q + e, r, T, 0.9, 0.5)[0] - critic_loss(Q - e, r, T, 0.9, 0.5)[0]) / (2 * h)
        assert dQ[idx] == pytest.approx(num, abs=1e-7)


def test_critic_ensemble_leaves_targets(rng):
    cr = CriticEnsemble(3, 1, 2, rng=rng, tower_hidden=(4,), embed_dim=3, head_hidden=(5,))
    snap = [t.copy() for t in cr.targets]
    n = 5
    loss, grads = cr.loss_and_grads(rng.normal(size=(n, 3)), rng.normal(size=(n, 1)), rng.normal(size=(n, 2)),
                                    rng.normal(size=n), rng.normal(size=(n, 3)), rng.normal(size=(n, 1)), 0.9, 0.5)
    assert len(grads) == 2 and np.isfinite(loss)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(snap, cr.targets))


# -- ensemble reduction


def test_reduce_examples():
    assert ensemble_reduce([3.0, 1.0], 0.5) == 1.0
    assert ensemble_reduce([3.0, 1.0], 0.0) == 2.0
    for lam in (0.0, 0.3, 0.5, 2.0):
        assert ensemble_reduce([5.0, 5.0], lam) == 5.0
    with pytest.raises(ValueError):
        ensemble_reduce([1.0, 2.0, 3.0], 0.5)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_reduce_is_min_and_mean(a, b):
    assert ensemble_reduce([a, b], 0.5) == pytest.approx(min(a, b), rel=1e-12, abs=1e-9)
    assert ensemble_reduce([a, b], 0.0) == pytest.approx((a + b) / 2, rel=1e-12, abs=1e-9)
