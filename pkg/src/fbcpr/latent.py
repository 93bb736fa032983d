"""Latent space: sphere projection, trajectory encoding and the sampling mixture nu."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NuConfig:
    p_unlabeled: float = 0.6
    p_online_goal: float = 0.2
    p_uniform: float = 0.2
    seq_len: int = 8

    def __post_init__(self):
        w = np.array([self.p_unlabeled, self.p_online_goal, self.p_uniform], dtype=float)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError(f"nu weights must be nonnegative and sum to 1, got {tuple(w)}")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.p_unlabeled, self.p_online_goal, self.p_uniform])

    def without_dataset(self) -> "NuConfig":
        """The mixture renormalized over the components that need no dataset."""
        rest = self.p_online_goal + self.p_uniform
        if rest == 0:
            return NuConfig(0.0, 0.0, 1.0, self.seq_len)
        return NuConfig(0.0, self.p_online_goal / rest, self.p_uniform / rest, self.seq_len)


def project_to_sphere(z_raw) -> np.ndarray:
    """Rescale each row (or a single vector) to norm sqrt(d)."""
    z = np.asarray(z_raw, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("cannot project a non-finite latent")
    d = z.shape[-1]
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot project the zero vector onto the sphere")
    return np.sqrt(d) * z / norms


def er_fb_encode(states, B) -> np.ndarray:
    """Projected mean of B over a state sequence. ``B`` maps (n, state_dim) -> (n, d)."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[None, :]
    if len(states) == 0:
        raise ValueError("cannot encode an empty state sequence")
    return project_to_sphere(np.asarray(B(states)).mean(axis=0))


def encode_windows(windows, B) -> np.ndarray:
    """Encode a list of (possibly ragged) windows with one batched call to B."""
    lengths = np.array([len(w) for w in windows])
    if np.any(lengths == 0):
        raise ValueError("cannot encode an empty state sequence")
    emb = np.asarray(B(np.concatenate(windows, axis=0)))
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    sums = np.add.reduceat(emb, bounds[:-1], axis=0)
    return project_to_sphere(sums / lengths[:, None])


def sample_uniform_sphere(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return project_to_sphere(rng.standard_normal((count, d)))


def sample_nu_batch(config: NuConfig, count: int, d: int, rng: np.random.Generator, *,
                    goal_states=None, window_latents=None, B=None, return_branches=False):
    """Draw ``count`` latents from the mixture.

    Branch 0 picks a row of ``window_latents`` (already-encoded dataset
    windows) uniformly, branch 1 projects B of a uniformly chosen row of
    ``goal_states``, branch 2 is uniform on the sphere.
    """
    branch = rng.choice(3, size=count, p=config.weights)
    z = np.empty((count, d))
    idx0 = np.flatnonzero(branch == 0)
    idx1 = np.flatnonzero(branch == 1)
    idx2 = np.flatnonzero(branch == 2)
    if len(idx0):
        if window_latents is None or len(window_latents) == 0:
            raise ValueError("nu requires dataset windows but none were provided")
        z[idx0] = window_latents[rng.integers(len(window_latents), size=len(idx0))]
    if len(idx1):
        if goal_states is None or len(goal_states) == 0:
            raise ValueError("nu requires buffer states but the buffer is empty")
        picked = goal_states[rng.integers(len(goal_states), size=len(idx1))]
        z[idx1] = project_to_sphere(B(picked))
    if len(idx2):
        z[idx2] = sample_uniform_sphere(len(idx2), d, rng)
    return (z, branch) if return_branches else z


def sample_nu(config: NuConfig, buffer, dataset, B, rng: np.random.Generator, d: int | None = None):
    """One latent from nu, drawing directly from the replay buffer and dataset."""
    if d is None:
        d = buffer.latent_dim if buffer is not None else None
    branch = rng.choice(3, p=config.weights)
    if branch == 0:
        if dataset is None or len(dataset) == 0:
            raise ValueError("nu requires a nonempty dataset")
        (window,) = dataset.sample_windows(1, config.seq_len, rng)
        return er_fb_encode(window, B)
    if branch == 1:
        if buffer is None or len(buffer) == 0:
            raise ValueError("nu requires a nonempty replay buffer")
        state = buffer.next_obs[rng.integers(len(buffer))]
        return project_to_sphere(np.asarray(B(state[None, :]))[0])
    return sample_uniform_sphere(1, d, rng)[0]


def relabel_batch(z, p_relabel: float, config: NuConfig, buffer, dataset, B, rng: np.random.Generator,
                  *, return_mask=False):
    """Replace each row of ``z`` by a fresh nu draw with probability ``p_relabel``.

    The input array is left untouched.
    """
    if not 0.0 <= p_relabel <= 1.0:
        raise ValueError("p_relabel must lie in [0, 1]")
    z = np.array(z, dtype=np.float64, copy=True)
    mask = rng.random(len(z)) < p_relabel
    k = int(mask.sum())
    if k:
        windows = goal_states = None
        n_win = int(np.ceil(k / config.seq_len))
        if config.p_unlabeled > 0:
            if dataset is None or len(dataset) == 0:
                raise ValueError("nu requires a nonempty dataset")
            windows = encode_windows(dataset.sample_windows(n_win, config.seq_len, rng), B)
        if config.p_online_goal > 0:
            if buffer is None or len(buffer) == 0:
                raise ValueError("nu requires buffer states but the buffer is empty")
            goal_states = buffer.next_obs[rng.integers(len(buffer), size=k)]
        z[mask] = sample_nu_batch(config, k, z.shape[1], rng, goal_states=goal_states,
                                  window_latents=windows, B=B)
    return (z, mask) if return_mask else z
