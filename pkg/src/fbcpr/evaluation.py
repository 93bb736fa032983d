"""Zero-shot task inference and evaluation metrics."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from .latent import project_to_sphere

CSV_HEADER = ("task_id", "metric", "value", "episodes", "seed", "config_hash")


# -- inference ------------------------------------------------------------------------


def reward_embedding(states, rewards, B, mode="linear"):
    """Unprojected reward latent: mean r B(s) (linear) or sum exp(10 r) r B(s) (weighted)."""
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if rewards.size == 0:
        raise ValueError("reward inference needs at least one sample")
    if not np.all(np.isfinite(rewards)):
        raise ValueError("reward samples must be finite")
    emb = np.asarray(B(np.asarray(states, dtype=np.float64)))
    if mode == "linear":
        return (rewards[:, None] * emb).mean(axis=0)
    if mode == "weighted":
        # shift inside the exponent for stability; the projection removes the common factor
        w = np.exp(10.0 * (rewards - rewards.max())) * rewards
        return (w[:, None] * emb).sum(axis=0)
    raise ValueError(f"unknown reward inference mode {mode!r}")


def infer_reward_latent(states, rewards, B, mode="linear"):
    z = reward_embedding(states, rewards, B, mode)
    if not np.any(z):
        raise ValueError("uninformative reward samples: the inferred latent is zero")
    return project_to_sphere(z)


def infer_goal_latent(goal, B):
    return project_to_sphere(np.asarray(B(np.atleast_2d(goal)))[0])


def infer_tracking_latents(motion, B, L):
    """z_t proportional to sum_{j=t+1}^{t+L+1} B(s_j), truncated at the motion end."""
    motion = np.asarray(motion, dtype=np.float64)
    if len(motion) < 2:
        raise ValueError("a tracking motion needs at least two states")
    emb = np.asarray(B(motion))
    csum = np.concatenate([np.zeros((1, emb.shape[1])), np.cumsum(emb, axis=0)])
    T = len(motion)
    t = np.arange(T - 1)
    hi = np.minimum(t + L + 2, T)
    return project_to_sphere(csum[hi] - csum[t + 1])


# -- metrics --------------------------------------------------------------------------


def emd(traj_a, traj_b, metric="euclidean"):
    """Earth mover's distance between two uniformly weighted point sets."""
    a = np.atleast_2d(np.asarray(traj_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(traj_b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("EMD needs two nonempty point sets")
    cost = cdist(a, b, metric=metric)
    n, m = cost.shape
    if n == m:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    # transport polytope with uniform marginals
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(cost.reshape(-1), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport solver failed: {res.message}")
    return float(res.fun)


@dataclass(frozen=True)
class GoalSpec:
    goal: tuple
    beta: float = 0.15
    sigma: float = 0.15
    dims: tuple | None = (0, 1)

    def __post_init__(self):
        if self.beta <= 0 or self.sigma <= 0:
            raise ValueError("goal thresholds must be positive")


@dataclass(frozen=True)
class TrackingSpec:
    motion: np.ndarray
    xi: float = 0.1
    window: int = 8
    dims: tuple | None = (0, 1)


def _select(x, dims):
    x = np.asarray(x, dtype=np.float64)
    return x if dims is None else x[..., list(dims)]


def goal_metrics(agent_traj, spec: GoalSpec):
    traj = np.atleast_2d(np.asarray(agent_traj, dtype=np.float64))
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    dist = np.linalg.norm(_select(traj, spec.dims) - _select(spec.goal, spec.dims), axis=-1)
    inside = dist <= spec.beta
    margin = (dist > spec.beta) & (dist <= spec.beta + spec.sigma)
    prox = np.mean(inside + margin * (spec.beta + spec.sigma - dist) / spec.sigma)
    return {"success": float(inside.any()), "proximity": float(prox)}


def tracking_metrics(agent_traj, spec: TrackingSpec):
    agent = _select(agent_traj, spec.dims)
    target = _select(spec.motion, spec.dims)
    if agent.shape != target.shape:
        raise ValueError(f"trajectory length mismatch: agent {agent.shape} vs motion {target.shape}")
    dist = np.linalg.norm(agent - target, axis=-1)
    return {"success": float(np.all(dist <= spec.xi)), "emd": emd(agent, target)}


# -- rollouts and the evaluation suite --------------------------------------------------


def rollout(world, policy_fn, s0, latents, steps):
    """Deterministic rollout; ``latents`` is one z or a (steps, d) schedule."""
    latents = np.asarray(latents, dtype=np.float64)
    s = np.asarray(s0, dtype=np.float64)
    traj = [s]
    for t in range(steps):
        z = latents if latents.ndim == 1 else latents[t]
        s = world.step(s, policy_fn(s[None, :], z[None, :])[0])
        traj.append(s)
    return np.stack(traj)


def rollout_batch(world, policy_fn, s0, z, steps):
    """Vectorized deterministic rollouts from many starts with one latent each."""
    s = np.asarray(s0, dtype=np.float64)
    traj = [s]
    for _ in range(steps):
        s = world.step(s, policy_fn(s, z))
        traj.append(s)
    return np.stack(traj, axis=1)


def _reward_rows(agent, world, task, episodes, rng, reward_states, mode):
    from .envs import pointmass_reward

    states = reward_states if reward_states is not None else world.random_states(10_000, rng)
    r = pointmass_reward(task, states)
    if reward_states is not None and not np.any(r):
        # early buffers can miss the rewarding region entirely; fall back to uniform states
        states = world.random_states(10_000, rng)
        r = pointmass_reward(task, states)
    z = infer_reward_latent(states, r, agent.embed, mode)
    s0 = world.random_states(episodes, rng)
    traj = rollout_batch(world, agent.act_mean, s0, np.repeat(z[None], episodes, axis=0), world.horizon)
    returns = pointmass_reward(task, traj[:, 1:]).sum(axis=1)
    return [("return", float(returns.mean()), episodes)]


def _goal_rows(agent, world, task, episodes, rng, thresholds):
    goal = np.asarray(task["goal"], dtype=np.float64)
    spec = GoalSpec(tuple(goal), thresholds["beta"], thresholds["sigma"], tuple(world.position_dims))
    z = infer_goal_latent(goal, agent.embed)
    s0 = world.random_states(episodes, rng)
    traj = rollout_batch(world, agent.act_mean, s0, np.repeat(z[None], episodes, axis=0), world.horizon)
    ms = [goal_metrics(tr, spec) for tr in traj]
    return [("success", float(np.mean([m["success"] for m in ms])), episodes),
            ("proximity", float(np.mean([m["proximity"] for m in ms])), episodes)]


def _motion_rows(agent, world, task, thresholds):
    motion = np.asarray(task["states"], dtype=np.float64)
    spec = TrackingSpec(motion, thresholds["xi"], thresholds["window"], tuple(world.position_dims))
    zs = infer_tracking_latents(motion, agent.embed, spec.window)
    traj = rollout(world, agent.act_mean, motion[0], zs, len(motion) - 1)
    m = tracking_metrics(traj, spec)
    # deterministic policy and start: one episode says everything
    return [("success", m["success"], 1), ("emd", m["emd"], 1)]


def _task_list(tasks):
    out = []
    for kind in ("rewards", "goals", "motions"):
        for k, task in enumerate(tasks.get(kind, [])):
            out.append((kind, task.get("id", f"{kind[:-1]}_{k}"), task))
    return out


def evaluate_suite(agent, world, tasks, episodes, seed, *, reward_states=None, reward_mode="weighted",
                   thresholds=None, threads=None):
    """Run every task and return rows (task_id, metric, value, episodes, seed).

    ``agent`` exposes ``embed(states) -> B`` and ``act_mean(states, z)``, both on
    raw (unnormalized) states. Each task gets its own rng stream derived from
    (seed, task index), so results do not depend on the worker count.
    """
    th = {"beta": 0.15, "sigma": 0.15, "xi": 0.1, "window": 8}
    th.update(thresholds or {})
    items = _task_list(tasks)

    def run(index):
        kind, task_id, task = items[index]
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), index]))
        if kind == "rewards":
            rows = _reward_rows(agent, world, task, episodes, rng, reward_states, reward_mode)
        elif kind == "goals":
            rows = _goal_rows(agent, world, task, episodes, rng, th)
        else:
            rows = _motion_rows(agent, world, task, th)
        return [(task_id, metric, value, n, int(seed)) for metric, value, n in rows]

    if threads is None:
        threads = int(os.environ.get("FBCPR_THREADS", "0") or 0)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(items))))
    else:
        results = [run(i) for i in range(len(items))]
    return [row for rows in results for row in rows]


def write_metric_csv(rows, path, config_hash=""):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for task_id, metric, value, n, seed in rows:
            w.writerow([task_id, metric, repr(float(value)), n, seed, config_hash])
