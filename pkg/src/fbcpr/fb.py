"""Forward-backward model and its training losses.

Loss functions act on network outputs and return gradients with respect to
those outputs; :class:`FBModel` chains them back to parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Mlp, MlpSpec, TwoTower

COV_RIDGE = 1e-6


def _pairwise_scale(n):
    if n < 2:
        raise ValueError(f"pairwise FB losses need a batch of at least 2, got {n}")
    return 1.0 / (n * (n - 1))


@dataclass
class FBLoss:
    loss: float  # mean over ensemble members
    member_losses: np.ndarray
    dF: np.ndarray  # (m, n, d): gradient of each member loss w.r.t. that member's outputs
    dB: np.ndarray  # (n, d): gradient of the summed member losses w.r.t. B outputs


def fb_td_loss(F, B_next, F_target_next, B_target_next, gamma: float) -> FBLoss:
    """Pairwise temporal-difference loss for the successor-measure factorization.

    For each member k:
        1/(2n(n-1)) sum_{i!=j} (F_k[i].B[j] - gamma * mean_l Fbar_l[i].Bbar[j])^2
        - 1/n sum_i F_k[i].B[i]
    ``F``/``F_target_next`` are (m, n, d) stacks of member outputs at
    (s, a, z) and (s', a', z); target quantities carry no gradient.
    """
    F = np.asarray(F, dtype=np.float64)
    m, n, _ = F.shape
    scale = _pairwise_scale(n)
    target = gamma * np.mean(F_target_next, axis=0) @ np.asarray(B_target_next).T
    off = ~np.eye(n, dtype=bool)
    member_losses = np.empty(m)
    dF = np.empty_like(F)
    dB = np.zeros_like(B_next, dtype=np.float64)
    for k in range(m):
        pred = F[k] @ B_next.T
        diff = (pred - target) * off
        member_losses[k] = 0.5 * scale * np.sum(diff * diff) - np.trace(pred) / n
        dpred = scale * diff - np.eye(n) / n
        dF[k] = dpred @ B_next
        dB += dpred.T @ F[k]
    return FBLoss(float(member_losses.mean()), member_losses, dF, dB)


def ortho_loss(B):
    """1/(2n(n-1)) sum_{i!=j} (B_i.B_j)^2 - 1/n sum_i B_i.B_i. Returns (loss, dB)."""
    B = np.asarray(B, dtype=np.float64)
    n = len(B)
    scale = _pairwise_scale(n)
    gram = B @ B.T
    off = gram * ~np.eye(n, dtype=bool)
    loss = 0.5 * scale * np.sum(off * off) - np.trace(gram) / n
    dgram = scale * off - np.eye(n) / n
    return float(loss), 2.0 * dgram @ B


def regularized_cov_inverse(B, ridge: float = COV_RIDGE):
    """Inverse of mean(B B^T) + ridge * I."""
    B = np.asarray(B, dtype=np.float64)
    cov = B.T @ B / len(B)
    if ridge == 0.0 and np.linalg.cond(cov) > 1.0 / np.finfo(float).eps:
        raise np.linalg.LinAlgError("B covariance is singular; use a positive ridge")
    return np.linalg.inv(cov + ridge * np.eye(cov.shape[0]))


def fz_loss(F, z, B_next, cov_inverse, F_target_next, gamma: float):
    """Per-member TD loss pulling F.z toward the Q-value of reward B(s')^T Sigma^-1 z.

    Target ensemble is reduced with a min. Returns (mean member loss, dF (m, n, d)).
    """
    F = np.asarray(F, dtype=np.float64)
    m, n, _ = F.shape
    reward = np.einsum("nd,de,ne->n", B_next, cov_inverse, z)
    next_q = np.min(np.einsum("mnd,nd->mn", F_target_next, z), axis=0)
    target = reward + gamma * next_q
    q = np.einsum("mnd,nd->mn", F, z)
    resid = q - target[None, :]
    member = np.mean(resid * resid, axis=1)
    dF = (2.0 / n) * resid[:, :, None] * z[None, :, :]
    return float(member.mean()), dF


def zero_shot_q(F_members, z, reduce: str = "mean"):
    """Reduce F_k(s, a, z).z over ensemble members (axis 0)."""
    vals = np.einsum("m...d,...d->m...", np.asarray(F_members, dtype=np.float64), np.asarray(z))
    if reduce == "mean":
        return vals.mean(axis=0)
    if reduce == "min":
        return vals.min(axis=0)
    raise ValueError(f"unknown reduce {reduce!r}")


class FBModel:
    """F ensemble over (s, a, z), backward map B over s, with target copies.

    Inputs are expected to be already-normalized states.
    """

    def __init__(self, state_dim, action_dim, d, *, n_members=2, gamma=0.98, rng,
                 tower_hidden=(64,), embed_dim=64, head_hidden=(128,), b_hidden=(128,)):
        if not 0.0 <= gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        self.state_dim, self.action_dim, self.d = state_dim, action_dim, d
        self.gamma = gamma
        self.F = TwoTower(state_dim + action_dim, state_dim + d, tower_hidden, embed_dim, head_hidden, d)
        self.B = Mlp(MlpSpec(state_dim, tuple(b_hidden), d, True, "relu", "l2_normalize"))
        self.F_params = [self.F.init(rng) for _ in range(n_members)]
        self.F_targets = [p.copy() for p in self.F_params]
        self.B_params = self.B.init(rng)
        self.B_target = self.B_params.copy()

    @property
    def n_members(self):
        return len(self.F_params)

    def forward_F(self, k, obs, action, z, target=False):
        p = self.F_targets[k] if target else self.F_params[k]
        return self.F.forward(p, np.concatenate([obs, action], axis=1), np.concatenate([obs, z], axis=1))

    def F_values(self, obs, action, z, target=False):
        return np.stack([self.forward_F(k, obs, action, z, target)[0] for k in range(self.n_members)])

    def embed(self, obs, target=False):
        return self.B(self.B_target if target else self.B_params, obs)

    def q_values(self, obs, action, z, reduce="mean"):
        return zero_shot_q(self.F_values(obs, action, z), z, reduce)

    def losses_and_grads(self, obs, action, next_obs, z, next_action, *, ortho_coef=100.0, fz_coef=0.1,
                         lam_fb=0.0, ridge=COV_RIDGE):
        """All FB losses on one batch, with parameter gradients for each F member and B.

        F_k receives grad(L_FB_k + fz_coef * L_Fz_k); B receives
        grad(sum_k L_FB_k + ortho_coef * L_ortho). The F targets of the TD loss
        are reduced with mean - lam_fb * |F1 - F2| (lam_fb = 0 is the plain mean).
        """
        F_out, F_cache = [], []
        for k in range(self.n_members):
            out, cache = self.forward_F(k, obs, action, z)
            F_out.append(out)
            F_cache.append(cache)
        F_out = np.stack(F_out)
        F_tgt = self.F_values(next_obs, next_action, z, target=True)
        B_next, B_cache = self.B.forward(self.B_params, next_obs)
        B_tgt = self.embed(next_obs, target=True)

        F_tgt_fb = F_tgt
        if lam_fb:
            reduced = F_tgt.mean(axis=0) - lam_fb * np.abs(F_tgt[0] - F_tgt[1])
            F_tgt_fb = np.broadcast_to(reduced, F_tgt.shape)
        fb = fb_td_loss(F_out, B_next, F_tgt_fb, B_tgt, self.gamma)
        ortho, d_ortho = ortho_loss(B_next)
        cov_inv = regularized_cov_inverse(B_next, ridge)
        fz, d_fz = fz_loss(F_out, z, B_next, cov_inv, F_tgt, self.gamma)

        F_grads = []
        for k in range(self.n_members):
            g, _, _ = self.F.backward(self.F_params[k], F_cache[k], fb.dF[k] + fz_coef * d_fz[k])
            F_grads.append(g)
        B_grad, _ = self.B.backward(self.B_params, B_cache, fb.dB + ortho_coef * d_ortho)
        losses = {"fb": fb.loss, "ortho": ortho, "fz": fz}
        return losses, F_grads, B_grad
