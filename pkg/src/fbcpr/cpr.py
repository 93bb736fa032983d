"""Latent-conditioned discriminator, its reward, and the critic trained on that reward."""

from __future__ import annotations

import numpy as np

from .nn import Mlp, MlpSpec, TwoTower

D_EPS = 1e-6


def _clamp(D):
    return np.clip(np.asarray(D, dtype=np.float64), D_EPS, 1.0 - D_EPS)


def _clamp_grad(D):
    D = np.asarray(D, dtype=np.float64)
    return ((D >= D_EPS) & (D <= 1.0 - D_EPS)).astype(np.float64)


def discriminator_reward(D):
    """log D/(1-D) after clamping D to [eps, 1-eps]."""
    c = _clamp(D)
    return np.log(c) - np.log1p(-c)


def discriminator_loss(D_pos, D_neg):
    """-mean log D(pos) - mean log(1 - D(neg)). Returns (loss, dD_pos, dD_neg)."""
    D_pos = np.asarray(D_pos, dtype=np.float64).reshape(-1)
    D_neg = np.asarray(D_neg, dtype=np.float64).reshape(-1)
    if D_pos.size == 0 or D_neg.size == 0:
        raise ValueError("discriminator loss needs both positive and negative samples")
    cp, cn = _clamp(D_pos), _clamp(D_neg)
    loss = -np.mean(np.log(cp)) - np.mean(np.log1p(-cn))
    d_pos = -_clamp_grad(D_pos) / (cp * D_pos.size)
    d_neg = _clamp_grad(D_neg) / ((1.0 - cn) * D_neg.size)
    return float(loss), d_pos, d_neg


def ensemble_reduce(values, lam):
    """mean - lam * |q1 - q2| over a two-member ensemble stacked on axis 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != 2:
        raise ValueError(f"ensemble_reduce is defined for exactly 2 members, got {values.shape[0]}")
    return values.mean(axis=0) - lam * np.abs(values[0] - values[1])


def ensemble_reduce_weights(values, lam):
    """d ensemble_reduce / d values, shape like ``values``."""
    values = np.asarray(values, dtype=np.float64)
    sgn = np.sign(values[0] - values[1])
    return np.stack([0.5 - lam * sgn, 0.5 + lam * sgn])


def critic_loss(Q, reward, Q_target_next, gamma, lam):
    """Squared TD error per member, averaged over members.

    target = reward + gamma * ensemble_reduce(Q_target_next, lam), no gradient.
    Returns (loss, dQ) with Q of shape (m, n).
    """
    Q = np.asarray(Q, dtype=np.float64)
    m, n = Q.shape
    target = np.asarray(reward) + gamma * ensemble_reduce(Q_target_next, lam)
    resid = Q - target[None, :]
    loss = np.mean(resid * resid)
    return float(loss), 2.0 * resid / (m * n)


class Discriminator:
    """Sigmoid MLP over concat(s, z), or over s alone when ``state_only``."""

    def __init__(self, state_dim, d, hidden=(128, 128), *, state_only=False, gp_coef=10.0,
                 gp_mode="wasserstein", rng):
        if gp_mode not in ("wasserstein", "simplified"):
            raise ValueError(f"unknown gradient penalty mode {gp_mode!r}")
        self.state_only = state_only
        self.gp_coef, self.gp_mode = gp_coef, gp_mode
        in_dim = state_dim if state_only else state_dim + d
        self.net = Mlp(MlpSpec(in_dim, tuple(hidden), 1, True, "relu", "sigmoid"))
        self.params = self.net.init(rng)

    def inputs(self, s, z):
        return np.asarray(s) if self.state_only else np.concatenate([s, z], axis=1)

    def prob(self, s, z, params=None):
        p = self.params if params is None else params
        return self.net(p, self.inputs(s, z))[:, 0]

    def reward(self, s, z):
        return discriminator_reward(self.prob(s, z))

    def loss_and_grad(self, pos_s, pos_z, neg_s, neg_z, rng, params=None):
        """Cross-entropy plus gp_coef * penalty. Returns ({name: value}, grad)."""
        p = self.params if params is None else params
        xp, xn = self.inputs(pos_s, pos_z), self.inputs(neg_s, neg_z)
        yp, cp = self.net.forward(p, xp)
        yn, cn = self.net.forward(p, xn)
        ce, dp, dn = discriminator_loss(yp, yn)
        grad = self.net.backward(p, cp, dp[:, None])[0] + self.net.backward(p, cn, dn[:, None])[0]
        gp, g_gp = gradient_penalty(self.net, p, xp, xn, self.gp_mode, rng)
        grad += self.gp_coef * g_gp
        return {"disc": ce, "gp": gp}, grad


def gradient_penalty(net: Mlp, params, positives, negatives, mode, rng):
    """Input-gradient penalty on a scalar network. Returns (penalty, dparams).

    wasserstein: mean over interpolates of (|grad D| - 1)^2, where each pair
    (positive, negative) is matched by position after independent shuffles and
    mixed with its own t ~ U(0, 1). simplified: mean over positives of |grad D|^2.
    """
    positives = np.asarray(positives, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if mode == "wasserstein":
        k = min(len(positives), len(negatives))
        a = positives[rng.permutation(len(positives))[:k]]
        b = negatives[rng.permutation(len(negatives))[:k]]
        t = rng.random((k, 1))
        x = t * a + (1.0 - t) * b
        _, g = net.input_gradient(params, x)
        norm = np.linalg.norm(g, axis=1)
        penalty = np.mean((norm - 1.0) ** 2)
        safe = np.where(norm > 0.0, norm, 1.0)
        v = (2.0 / k) * ((norm - 1.0) / safe * (norm > 0.0))[:, None] * g
    elif mode == "simplified":
        x = positives
        _, g = net.input_gradient(params, x)
        penalty = np.mean(np.sum(g * g, axis=1))
        v = (2.0 / len(x)) * g
    else:
        raise ValueError(f"unknown gradient penalty mode {mode!r}")
    return float(penalty), net.directional_param_grad(params, x, v)


class CriticEnsemble:
    """Two Q(s, a, z) networks with the same two-tower layout as F, plus targets."""

    def __init__(self, state_dim, action_dim, d, *, n_members=2, rng, tower_hidden=(64,), embed_dim=64,
                 head_hidden=(128,)):
        self.net = TwoTower(state_dim + action_dim, state_dim + d, tower_hidden, embed_dim, head_hidden, 1)
        self.params = [self.net.init(rng) for _ in range(n_members)]
        self.targets = [p.copy() for p in self.params]

    @property
    def n_members(self):
        return len(self.params)

    def forward(self, k, obs, action, z, target=False):
        p = self.targets[k] if target else self.params[k]
        return self.net.forward(p, np.concatenate([obs, action], axis=1), np.concatenate([obs, z], axis=1))

    def values(self, obs, action, z, target=False):
        return np.stack([self.forward(k, obs, action, z, target)[0][:, 0] for k in range(self.n_members)])

    def loss_and_grads(self, obs, action, z, reward, next_obs, next_action, gamma, lam):
        outs, caches = [], []
        for k in range(self.n_members):
            y, c = self.forward(k, obs, action, z)
            outs.append(y[:, 0])
            caches.append(c)
        q_next = self.values(next_obs, next_action, z, target=True)
        loss, dQ = critic_loss(np.stack(outs), reward, q_next, gamma, lam)
        grads = [self.net.backward(self.params[k], caches[k], dQ[k][:, None])[0] for k in range(self.n_members)]
        return loss, grads
