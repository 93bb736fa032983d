import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbcpr.envs import PointMassWorld
from fbcpr.evaluation import (GoalSpec, TrackingSpec, emd, evaluate_suite, goal_metrics, infer_goal_latent,
                              infer_reward_latent, infer_tracking_latents, tracking_metrics, write_metric_csv)


def identity(x):
    return np.asarray(x, dtype=np.float64)


def brute_emd(a, b):
    # equal-size uniform sets: the optimal plan is a permutation
    n = len(a)
    return min(np.mean([np.linalg.norm(a[i] - b[p[i]]) for i in range(n)]) for p in itertools.permutations(range(n)))


# -- inference


def test_reward_latent_examples():
    S = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    z = infer_reward_latent(S, [1.0, 0.0, 0.0], identity)
    np.testing.assert_allclose(z, [np.sqrt(2), 0.0], atol=1e-15)
    # mean r B(s) = (1/3)(2, 1) before projection
    z = infer_reward_latent(S, [2.0, 1.0, 0.0], identity)
    np.testing.assert_allclose(z, np.sqrt(2) * np.array([2.0, 1.0]) / np.sqrt(5), atol=1e-12)
    with pytest.raises(ValueError):
        infer_reward_latent(S, np.zeros(3), identity)
    with pytest.raises(ValueError):
        infer_reward_latent(S[:0], [], identity)


def test_weighted_inference_concentrates_on_top_reward():
    S = np.array([[1.0, 0.0], [0.0, 1.0]])
    z = infer_reward_latent(S, [1.0, 0.0], identity, "weighted")
    np.testing.assert_allclose(z, [np.sqrt(2), 0.0], atol=1e-15)
    z = infer_reward_latent(S, [1.0, 0.9], identity, "weighted")
    ratio = 0.9 * np.exp(-1.0)
    np.testing.assert_allclose(z, np.sqrt(2) * np.array([1.0, ratio]) / np.hypot(1.0, ratio), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 10_000))
def test_linear_inference_is_scale_invariant(c, seed):
    r = np.random.default_rng(seed)
    S, rew = r.normal(size=(20, 3)), r.uniform(0.1, 1.0, 20)
    np.testing.assert_allclose(infer_reward_latent(S, c * rew, identity), infer_reward_latent(S, rew, identity),
                               atol=1e-12)


def test_goal_latent():
    np.testing.assert_allclose(infer_goal_latent([3.0, 4.0], identity), np.sqrt(2) * np.array([0.6, 0.8]), atol=1e-15)


def test_tracking_latents():
    motion = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    zs = infer_tracking_latents(motion, identity, 0)
    np.testing.assert_allclose(zs, [[0.0, np.sqrt(2)], [1.0, 1.0]], atol=1e-15)
    zs = infer_tracking_latents(motion, identity, 1)
    np.testing.assert_allclose(zs[0], np.sqrt(2) * np.array([1.0, 2.0]) / np.sqrt(5), atol=1e-15)
    # the window is truncated at the end of the motion
    np.testing.assert_allclose(zs[1], [1.0, 1.0], atol=1e-15)
    const = infer_tracking_latents(np.tile([0.3, -0.4], (6, 1)), identity, 3)
    np.testing.assert_allclose(const, np.tile(np.sqrt(2) * np.array([0.6, -0.8]), (5, 1)), atol=1e-15)
    with pytest.raises(ValueError):
        infer_tracking_latents(motion[:1], identity, 2)


# -- EMD


def test_emd_examples():
    a = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert emd(a, a) == 0.0
    assert emd([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0, abs=1e-15)
    assert emd(a, [[1.0, 0.0], [3.0, 0.0]]) == pytest.approx(1.0, abs=1e-15)
    # unequal sizes go through the transport polytope
    assert emd([[0.0, 0.0]], [[1.0, 0.0], [3.0, 0.0]]) == pytest.approx(2.0, abs=1e-9)
    assert emd(a, [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        emd(np.zeros((0, 2)), a)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_emd_matches_brute_force_and_axioms(n, seed):
    r = np.random.default_rng(seed)
    a, b, c = r.normal(size=(3, n, 2))
    ab = emd(a, b)
    assert ab == pytest.approx(brute_emd(a, b), abs=1e-9)
    assert ab >= 0 and ab == pytest.approx(emd(b, a), abs=1e-12)
    assert emd(a, c) <= ab + emd(b, c) + 1e-9
    assert emd(a, a[r.permutation(n)]) == pytest.approx(0.0, abs=1e-12)


# -- tracking and goal metrics


def _motion():
    t = np.linspace(0, 1, 11)
    return np.stack([t - 0.5, 0.2 * t, np.zeros(11), np.zeros(11)], axis=1)


def test_tracking_examples():
    m = _motion()
    spec = TrackingSpec(m)
    assert tracking_metrics(m, spec) == {"success": 1.0, "emd": 0.0}
    off = m.copy()
    off[5, 0] += spec.xi + 0.01
    assert tracking_metrics(off, spec)["success"] == 0.0
    for delta in (0.05, 0.3):
        shifted = m + np.array([0.0, delta, 0.0, 0.0])
        assert tracking_metrics(shifted, spec)["emd"] == pytest.approx(delta, abs=1e-12)
    # velocities are ignored by the default position dims
    fast = m.copy()
    fast[:, 2:] = 1.0
    assert tracking_metrics(fast, spec)["success"] == 1.0
    with pytest.raises(ValueError):
        tracking_metrics(m[:-1], spec)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.0, 0.5), st.integers(0, 10_000))
def test_tracking_success_monotone_in_threshold(x1, x2, seed):
    m = _motion()
    agent = m + 0.1 * np.random.default_rng(seed).normal(size=m.shape)
    lo, hi = sorted((x1, x2))
    assert tracking_metrics(agent, TrackingSpec(m, hi))["success"] >= tracking_metrics(agent, TrackingSpec(m, lo))["success"]


def test_goal_examples():
    spec = GoalSpec((0.5, 0.5, 0.0, 0.0))
    assert goal_metrics(np.tile([0.5, 0.5, 0.3, 0.0], (5, 1)), spec) == {"success": 1.0, "proximity": 1.0}
    assert goal_metrics(np.tile([-0.5, -0.5, 0.0, 0.0], (5, 1)), spec) == {"success": 0.0, "proximity": 0.0}
    d = spec.beta + spec.sigma / 2
    m = goal_metrics(np.tile([0.5 + d, 0.5, 0.0, 0.0], (4, 1)), spec)
    assert m["success"] == 0.0 and m["proximity"] == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        GoalSpec((0.0, 0.0), beta=0.0)


# -- suite


class TeleportWorld:
    """Two-dimensional world whose action is the next state."""

    horizon = 5
    position_dims = (0, 1)

    def step(self, s, a):
        return np.asarray(a, dtype=np.float64)

    def random_states(self, count, rng):
        return rng.uniform(-1, 1, size=(count, 2))


class TeleportAgent:
    # B is the identity, so z points at the goal with norm sqrt(2)
    def embed(self, s):
        return np.asarray(s, dtype=np.float64)

    def act_mean(self, s, z):
        return z / np.sqrt(2) * np.linalg.norm(GOAL)


GOAL = np.array([0.6, -0.3])


def test_empty_task_set(tmp_path):
    assert evaluate_suite(TeleportAgent(), TeleportWorld(), {}, 3, 0) == []
    write_metric_csv([], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().strip() == "task_id,metric,value,episodes,seed,config_hash"


def test_teleport_oracle_reaches_goal():
    rows = evaluate_suite(TeleportAgent(), TeleportWorld(), {"goals": [{"id": "g", "goal": GOAL.tolist()}]}, 4, 0)
    vals = {m: v for _, m, v, _, _ in rows}
    assert vals["success"] == 1.0
    # every state after the start sits on the goal
    assert vals["proximity"] >= 5 / 6 - 1e-12


class LinearAgent:
    def __init__(self, rng):
        self.W = rng.normal(size=(4, 3))
        self.V = rng.normal(size=(7, 2))

    def embed(self, s):
        return np.tanh(np.asarray(s) @ self.W)

    def act_mean(self, s, z):
        return np.tanh(np.concatenate([s, z], axis=1) @ self.V)


def _tasks():
    t = np.linspace(0, 1, 9)
    return {"rewards": [{"id": "r", "family": "reach", "params": {"center": [0.2, 0.2]}}],
            "goals": [{"id": "g", "goal": [0.5, 0.5, 0.0, 0.0]}],
            "motions": [{"id": "m", "states": np.stack([0.3 * t, t * 0, t * 0, t * 0], 1).tolist()}]}


def test_suite_is_deterministic_and_thread_independent(rng):
    agent, world = LinearAgent(rng), PointMassWorld(horizon=20)
    a = evaluate_suite(agent, world, _tasks(), 3, 7, threads=1)
    b = evaluate_suite(agent, world, _tasks(), 3, 7, threads=1)
    c = evaluate_suite(agent, world, _tasks(), 3, 7, threads=3)
    assert a == b == c
    assert [(t, m) for t, m, *_ in a] == [("r", "return"), ("g", "success"), ("g", "proximity"),
                                          ("m", "success"), ("m", "emd")]
