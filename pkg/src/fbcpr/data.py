"""Replay buffer, unlabeled behavior dataset and running state normalization."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EMD_CLIP = (0.5, 5.0)
EMD_BIN_WIDTH = 0.5


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    z: np.ndarray
    step: int = 0


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    z: np.ndarray

    def __len__(self):
        return len(self.obs)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, latent_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.latent_dim = latent_dim
        self._obs = np.zeros((capacity, state_dim))
        self._action = np.zeros((capacity, action_dim))
        self._next_obs = np.zeros((capacity, state_dim))
        self._z = np.zeros((capacity, latent_dim))
        self._step = np.zeros(capacity, dtype=np.int64)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition):
        self.push_many(t.obs[None], t.action[None], t.next_obs[None], t.z[None], np.array([t.step]))

    def push_many(self, obs, action, next_obs, z, step=None):
        obs, action, next_obs, z = (np.asarray(a, dtype=np.float64) for a in (obs, action, next_obs, z))
        for name, arr in (("obs", obs), ("action", action), ("next_obs", next_obs), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"refusing to store non-finite transition field {name!r}")
        n = len(obs)
        step = np.zeros(n, dtype=np.int64) if step is None else np.asarray(step)
        idx = (self.cursor + np.arange(n)) % self.capacity
        self._obs[idx], self._action[idx], self._next_obs[idx] = obs, action, next_obs
        self._z[idx], self._step[idx] = z, step
        self.cursor = int((self.cursor + n) % self.capacity)
        self.size = min(self.capacity, self.size + n)

    @property
    def obs(self):
        return self._obs[: self.size]

    @property
    def action(self):
        return self._action[: self.size]

    @property
    def next_obs(self):
        return self._next_obs[: self.size]

    @property
    def z(self):
        return self._z[: self.size]

    def ordered_indices(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.cursor + np.arange(self.capacity)) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(self.size, size=n)
        return Batch(self._obs[idx], self._action[idx], self._next_obs[idx], self._z[idx].copy())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"obs": self._obs, "action": self._action, "next_obs": self._next_obs,
                "z": self._z, "step": self._step.astype(np.float64),
                "meta": np.array([self.cursor, self.size], dtype=np.float64)}

    def load_state_dict(self, blocks):
        self._obs[...] = blocks["obs"]
        self._action[...] = blocks["action"]
        self._next_obs[...] = blocks["next_obs"]
        self._z[...] = blocks["z"]
        self._step[...] = blocks["step"].astype(np.int64)
        self.cursor, self.size = (int(v) for v in blocks["meta"])


def sample_transitions(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(n, rng)


def buffer_push(buffer: ReplayBuffer, transition: Transition):
    buffer.push(transition)


@dataclass
class UnlabeledEpisode:
    id: str
    states: np.ndarray
    actions: np.ndarray | None = None  # only for the behavior-cloning ablation


class UnlabeledDataset:
    """Observation-only episodes with per-episode sampling priorities."""

    def __init__(self, episodes: list[UnlabeledEpisode], priorities=None):
        if not episodes:
            raise ValueError("an unlabeled dataset needs at least one episode")
        dims = {ep.states.shape[1] for ep in episodes}
        if len(dims) != 1:
            raise ValueError(f"ragged state dimensions across episodes: {sorted(dims)}")
        for ep in episodes:
            if len(ep.states) == 0:
                raise ValueError(f"episode {ep.id!r} is empty")
            if ep.actions is not None and len(ep.actions) != len(ep.states) - 1:
                raise ValueError(f"episode {ep.id!r}: need one action per transition")
        self.episodes = episodes
        self.state_dim = dims.pop()
        self.priorities = (np.ones(len(episodes)) if priorities is None
                           else np.asarray(priorities, dtype=np.float64).copy())
        if self.priorities.sum() <= 0:
            raise ValueError("priorities must sum to a positive number")

    def __len__(self):
        return len(self.episodes)

    @property
    def all_states(self) -> np.ndarray:
        return np.concatenate([ep.states for ep in self.episodes], axis=0)

    def sample_episode_ids(self, count: int, rng: np.random.Generator) -> np.ndarray:
        p = self.priorities / self.priorities.sum()
        return rng.choice(len(self.episodes), size=count, p=p)

    def sample_windows(self, count: int, window_len: int, rng: np.random.Generator) -> list[np.ndarray]:
        """Priority-sampled episodes, uniform window start; short episodes come back whole."""
        windows = []
        for e in self.sample_episode_ids(count, rng):
            states = self.episodes[e].states
            if len(states) <= window_len:
                windows.append(states)
            else:
                start = rng.integers(len(states) - window_len + 1)
                windows.append(states[start : start + window_len])
        return windows

    def sample_states(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Priority-sampled episode, then a uniform state inside it."""
        out = np.empty((count, self.state_dim))
        for k, e in enumerate(self.sample_episode_ids(count, rng)):
            states = self.episodes[e].states
            out[k] = states[rng.integers(len(states))]
        return out

    @property
    def has_actions(self) -> bool:
        return all(ep.actions is not None for ep in self.episodes)

    def sample_labeled(self, count: int, rng: np.random.Generator):
        """(states, actions) pairs from priority-sampled episodes."""
        if not self.has_actions:
            raise ValueError("dataset carries no action labels")
        S = np.empty((count, self.state_dim))
        A = np.empty((count, self.episodes[0].actions.shape[1]))
        for k, e in enumerate(self.sample_episode_ids(count, rng)):
            ep = self.episodes[e]
            t = rng.integers(len(ep.actions))
            S[k], A[k] = ep.states[t], ep.actions[t]
        return S, A

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for ep in self.episodes:
                rec = {"id": ep.id, "states": ep.states.tolist()}
                if ep.actions is not None:
                    rec["actions"] = ep.actions.tolist()
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "UnlabeledDataset":
        episodes = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                rows = rec["states"]
                widths = {len(r) for r in rows}
                if len(widths) > 1:
                    raise ValueError(f"{path}:{lineno}: ragged state rows in episode {rec['id']!r}")
                actions = rec.get("actions")
                if actions is not None:
                    actions = np.asarray(actions, dtype=np.float64)
                episodes.append(UnlabeledEpisode(str(rec["id"]), np.asarray(rows, dtype=np.float64), actions))
        return cls(episodes)


def sample_episode_windows(dataset: UnlabeledDataset, count: int, window_len: int, rng):
    if dataset is None or len(dataset) == 0:
        raise ValueError("cannot sample windows from an empty dataset")
    return dataset.sample_windows(count, window_len, rng)


def emd_priorities(emds) -> np.ndarray:
    """Inverse bin-population priorities from per-episode tracking EMDs.

    EMDs are clipped to [0.5, 5] and binned with width 0.5 (half-open bins,
    the top value joins the last bin).
    """
    lo, hi = EMD_CLIP
    clipped = np.clip(np.asarray(emds, dtype=np.float64), lo, hi)
    n_bins = int(round((hi - lo) / EMD_BIN_WIDTH))
    bins = np.minimum(np.floor((clipped - lo) / EMD_BIN_WIDTH).astype(int), n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    return 1.0 / counts[bins]


def update_priorities(dataset: UnlabeledDataset, emd_per_episode):
    emd_per_episode = np.asarray(emd_per_episode, dtype=np.float64)
    if emd_per_episode.shape != (len(dataset),):
        raise ValueError("need exactly one EMD value per episode")
    dataset.priorities = emd_priorities(emd_per_episode)


class RunningNormalizer:
    """Streaming per-coordinate mean/variance (Chan et al. merge)."""

    def __init__(self, dim: int, std_floor: float = 1e-6):
        self.dim = dim
        self.std_floor = std_floor
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def observe(self, batch):
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.dim)
        n = len(batch)
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + b_m2 + delta * delta * (self.count * n / total)
        self.count = total

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return self.m2 / self.count

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return np.maximum(np.sqrt(self.var), self.std_floor)

    def normalize(self, s):
        if self.count < 2:
            return np.asarray(s, dtype=np.float64)
        return (np.asarray(s, dtype=np.float64) - self.mean) / self.std

    def state_dict(self):
        return {"count": np.array([float(self.count)]), "mean": self.mean, "m2": self.m2}

    def load_state_dict(self, blocks):
        self.count = int(blocks["count"][0])
        self.mean = np.array(blocks["mean"], dtype=np.float64)
        self.m2 = np.array(blocks["m2"], dtype=np.float64)


def normalize_state(normalizer: RunningNormalizer, s):
    return normalizer.normalize(s)
