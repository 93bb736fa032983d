"""Latent-conditioned Gaussian actor and its training losses."""

from __future__ import annotations

import numpy as np

from .cpr import ensemble_reduce, ensemble_reduce_weights
from .nn import TwoTower

ACTION_STD = 0.2


class Actor:
    """tanh-mean Gaussian policy with fixed std; towers over s and (s, z)."""

    def __init__(self, state_dim, action_dim, d, *, std=ACTION_STD, rng, tower_hidden=(64,), embed_dim=64,
                 head_hidden=(128,)):
        if std < 0:
            raise ValueError("action std must be nonnegative")
        self.state_dim, self.action_dim, self.d = state_dim, action_dim, d
        self.std = std
        self.net = TwoTower(state_dim, state_dim + d, tower_hidden, embed_dim, head_hidden, action_dim, "tanh")
        self.params = self.net.init(rng)

    def forward(self, obs, z, params=None):
        p = self.params if params is None else params
        return self.net.forward(p, obs, np.concatenate([obs, z], axis=1))

    def mean(self, obs, z, params=None):
        return self.forward(obs, z, params)[0]

    def act(self, obs, z, mode="sample", rng=None, params=None):
        mu = self.mean(obs, z, params)
        if mode == "mean":
            return mu
        if mode != "sample":
            raise ValueError(f"unknown action mode {mode!r}")
        return np.clip(mu + self.std * rng.standard_normal(mu.shape), -1.0, 1.0)

    def log_prob(self, obs, z, action, params=None):
        mu = self.mean(obs, z, params)
        return gaussian_log_prob(action, mu, self.std)


def act(actor: Actor, s, z, mode="sample", rng=None):
    s, z = np.atleast_2d(s), np.atleast_2d(z)
    return actor.act(s, z, mode, rng)


def gaussian_log_prob(action, mean, std):
    """Sum over action coordinates of log N(action | mean, std^2)."""
    diff = (np.asarray(action) - mean) / std
    return -0.5 * np.sum(diff * diff, axis=-1) - 0.5 * mean.shape[-1] * np.log(2.0 * np.pi * std * std)


# -- output-level losses --------------------------------------------------------------


def actor_loss(F_values, Q_values, alpha, lam=0.5, f_bar=None):
    """-mean(reduce F.z + alpha * Fbar * reduce Q), Fbar = sg(mean |reduce F.z|).

    ``F_values``/``Q_values`` are (2, n) per-member values at the policy
    action. Passing ``f_bar`` pins the stop-gradient scale (finite-difference
    checks need it held fixed). Returns (loss, dF_values, dQ_values).
    """
    F_values = np.asarray(F_values, dtype=np.float64)
    Q_values = np.asarray(Q_values, dtype=np.float64)
    n = F_values.shape[1]
    f = ensemble_reduce(F_values, lam)
    q = ensemble_reduce(Q_values, lam)
    if f_bar is None:
        f_bar = np.mean(np.abs(f))
    loss = -np.mean(f + alpha * f_bar * q)
    dF = -ensemble_reduce_weights(F_values, lam) / n
    dQ = -alpha * f_bar * ensemble_reduce_weights(Q_values, lam) / n
    return float(loss), dF, dQ


def actor_loss_no_fz(Q_values, alpha, lam=0.5):
    """-alpha * mean(reduce Q). Returns (loss, dQ_values)."""
    Q_values = np.asarray(Q_values, dtype=np.float64)
    n = Q_values.shape[1]
    loss = -alpha * np.mean(ensemble_reduce(Q_values, lam))
    return float(loss), -alpha * ensemble_reduce_weights(Q_values, lam) / n


def actor_loss_bc(F_values, demo_action, demo_mean, std, alpha_bc, lam=0.5):
    """-mean(reduce F.z) - alpha_bc * mean log pi(demo_action | s, z).

    Returns (loss, dF_values, d_demo_mean).
    """
    F_values = np.asarray(F_values, dtype=np.float64)
    n = F_values.shape[1]
    logp = gaussian_log_prob(demo_action, demo_mean, std)
    loss = -np.mean(ensemble_reduce(F_values, lam)) - alpha_bc * np.mean(logp)
    dF = -ensemble_reduce_weights(F_values, lam) / n
    d_mean = -alpha_bc * (np.asarray(demo_action) - demo_mean) / (std * std) / len(demo_mean)
    return float(loss), dF, d_mean


# -- parameter-level assembly -------------------------------------------------------------


def actor_loss_and_grad(actor: Actor, fb, critic, obs, z, noise, *, variant="fbcpr", alpha=0.01, lam=0.5,
                        alpha_bc=0.0, demo=None, params=None, f_bar=None):
    """Actor loss with its gradient w.r.t. the actor parameters only.

    ``noise`` is the standard-normal draw for the reparameterized action
    a = mean + std * noise (unclamped). ``variant`` is one of fbcpr, fb
    (no critic term), no_fz, bc; ``demo`` = (obs, z, action) for bc.
    """
    p = actor.params if params is None else params
    mu, cache = actor.forward(obs, z, p)
    action = mu + actor.std * noise
    d_action = np.zeros_like(action)
    A = actor.action_dim
    S = obs.shape[1]

    need_F = variant in ("fbcpr", "fb", "bc")
    need_Q = variant in ("fbcpr", "no_fz")
    F_out = F_cache = Q_out = Q_cache = None
    if need_F:
        F_out, F_cache = zip(*(fb.forward_F(k, obs, action, z) for k in range(fb.n_members)))
        F_vals = np.stack([np.sum(o * z, axis=1) for o in F_out])
    if need_Q:
        Q_out, Q_cache = zip(*(critic.forward(k, obs, action, z) for k in range(critic.n_members)))
        Q_vals = np.stack([o[:, 0] for o in Q_out])

    dF = dQ = None
    if variant == "fbcpr":
        loss, dF, dQ = actor_loss(F_vals, Q_vals, alpha, lam, f_bar)
    elif variant == "fb":
        loss, dF, dQ = actor_loss(F_vals, np.zeros_like(F_vals), 0.0, lam)
        dQ = None
    elif variant == "no_fz":
        loss, dQ = actor_loss_no_fz(Q_vals, alpha, lam)
    elif variant == "bc":
        d_obs, d_z, d_act = demo
        mu_demo, cache_demo = actor.forward(d_obs, d_z, p)
        loss, dF, d_mu_demo = actor_loss_bc(F_vals, d_act, mu_demo, actor.std, alpha_bc, lam)
    else:
        raise ValueError(f"unknown actor loss variant {variant!r}")

    if dF is not None:
        for k in range(fb.n_members):
            _, dxl, _ = fb.F.backward(fb.F_params[k], F_cache[k], dF[k][:, None] * z)
            d_action += dxl[:, S : S + A]
    if dQ is not None:
        for k in range(critic.n_members):
            _, dxl, _ = critic.net.backward(critic.params[k], Q_cache[k], dQ[k][:, None])
            d_action += dxl[:, S : S + A]
    grad, _, _ = actor.net.backward(p, cache, d_action)
    if variant == "bc":
        grad += actor.net.backward(p, cache_demo, d_mu_demo)[0]
    return loss, grad
