"""Finite MDPs with closed-form successor measures, used as verification oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import AdamState, adam_step


@dataclass
class TabularMdp:
    P: np.ndarray  # (S, A, S)
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ValueError(f"transition tensor must be (S, A, S), got {self.P.shape}")
        if not np.allclose(self.P.sum(axis=2), 1.0, atol=1e-12, rtol=0):
            raise ValueError("transition rows must sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def P_flat(self) -> np.ndarray:
        """(S*A, S) with row index s * A + a."""
        return self.P.reshape(-1, self.n_states)


def gridworld(width=5, height=5, slip=0.1, gamma=0.95) -> TabularMdp:
    """Grid with up/down/left/right moves; with prob ``slip`` a uniformly random
    action is executed instead. Moves into walls leave the agent in place."""
    moves = [(0, -1), (0, 1), (-1, 0), (1, 0)]
    S, A = width * height, len(moves)
    det = np.zeros((S, A, S))
    for s in range(S):
        x, y = s % width, s // width
        for a, (dx, dy) in enumerate(moves):
            nx, ny = min(max(x + dx, 0), width - 1), min(max(y + dy, 0), height - 1)
            det[s, a, ny * width + nx] = 1.0
    P = (1.0 - slip) * det + slip * det.mean(axis=1, keepdims=True)
    return TabularMdp(P, gamma)


def policy_matrix(policy: np.ndarray) -> np.ndarray:
    """Pi[s, s*A + a] = pi(a | s)."""
    S, A = policy.shape
    Pi = np.zeros((S, S * A))
    for s in range(S):
        Pi[s, s * A : (s + 1) * A] = policy[s]
    return Pi


def exact_successor_measure(mdp: TabularMdp, policy) -> np.ndarray:
    """M[(s, a), s'] = sum_t gamma^t Pr(s_{t+1} = s' | s, a, pi) = (I - gamma P Pi)^-1 P."""
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions) or not np.allclose(policy.sum(axis=1), 1.0):
        raise ValueError("policy must be an (S, A) row-stochastic matrix")
    P = mdp.P_flat
    system = np.eye(P.shape[0]) - mdp.gamma * P @ policy_matrix(policy)
    try:
        return np.linalg.solve(system, P)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("successor-measure system is singular") from exc


def exact_q(mdp: TabularMdp, policy, reward) -> np.ndarray:
    """Q[(s, a)] = M r, flattened with row index s * A + a."""
    return exact_successor_measure(mdp, policy) @ np.asarray(reward, dtype=np.float64)


def bellman_residual(mdp: TabularMdp, policy, M) -> float:
    P = mdp.P_flat
    return float(np.abs(M - P - mdp.gamma * P @ policy_matrix(policy) @ M).max())


def policy_evaluation(mdp: TabularMdp, policy, reward, tol=1e-12, max_iter=100_000) -> np.ndarray:
    """Iterative Q evaluation, independent of the linear solve."""
    P = mdp.P_flat
    r_next = P @ reward
    q = np.zeros(P.shape[0])
    for _ in range(max_iter):
        v = (policy * q.reshape(mdp.n_states, mdp.n_actions)).sum(axis=1)
        q_new = r_next + mdp.gamma * P @ v
        if np.abs(q_new - q).max() < tol:
            return q_new
        q = q_new
    return q


def next_state_marginal(mdp: TabularMdp) -> np.ndarray:
    """Law of s' when (s, a) is uniform: the state distribution the FB loss sees."""
    return mdp.P_flat.mean(axis=0)


@dataclass
class TabularFB:
    F: np.ndarray  # (S*A, d)
    B: np.ndarray  # (S, d)
    rho: np.ndarray

    def successor_measure(self) -> np.ndarray:
        return self.F @ self.B.T * self.rho[None, :]


def tabular_fb_loss(mdp, policy, F, B, F_tgt, B_tgt):
    """Population version of the pairwise FB TD loss with one-hot features.

    (s, a) is uniform, the second state s+ follows the next-state marginal
    rho, and the expectation over a' ~ pi is exact. Returns (loss, dF, dB).
    """
    P = mdp.P_flat
    SA = P.shape[0]
    w = np.full(SA, 1.0 / SA)
    rho = P.T @ w
    F_next = P @ policy_matrix(policy) @ F_tgt
    resid = F @ B.T - mdp.gamma * F_next @ B_tgt.T
    R = w[:, None] * rho[None, :] * resid
    WP = w[:, None] * P
    loss = 0.5 * (R * resid).sum() - (WP * (F @ B.T)).sum()
    dF = R @ B - WP @ B
    dB = R.T @ F - WP.T @ F
    return loss, dF, dB


def fit_tabular_fb(mdp: TabularMdp, policy, d=None, steps=20_000, lr=1e-2, polyak=0.05,
                   rng=None) -> TabularFB:
    """Fit F, B tables by full-batch Adam on the population FB loss with Polyak targets."""
    rng = np.random.default_rng(0) if rng is None else rng
    S, A = mdp.n_states, mdp.n_actions
    d = S if d is None else d
    F = rng.normal(scale=0.1, size=(S * A, d))
    B = rng.normal(scale=0.1, size=(S, d))
    F_tgt, B_tgt = F.copy(), B.copy()
    opt_F = AdamState.zeros(F.size, lr)
    opt_B = AdamState.zeros(B.size, lr)
    f, b = F.reshape(-1), B.reshape(-1)
    for _ in range(steps):
        _, dF, dB = tabular_fb_loss(mdp, policy, F, B, F_tgt, B_tgt)
        adam_step(opt_F, f, dF.reshape(-1), "tabular_fb")
        adam_step(opt_B, b, dB.reshape(-1), "tabular_fb")
        F_tgt += polyak * (F - F_tgt)
        B_tgt += polyak * (B - B_tgt)
    return TabularFB(F, B, next_state_marginal(mdp))
