"""Point-mass world, its task rewards, scripted behaviors and dataset generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import UnlabeledDataset, UnlabeledEpisode


@dataclass(frozen=True)
class PointMassWorld:
    """2-D point mass: state (x, y, vx, vy), action in [-1, 1]^2.

    v' = clip(v + dt * a, +-max_speed), p' = clip(p + dt * v', +-1).
    """

    dt: float = 0.1
    max_speed: float = 0.3
    horizon: int = 200
    state_dim: int = 4
    action_dim: int = 2
    position_dims: tuple[int, ...] = (0, 1)

    def step(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
        v = np.clip(s[..., 2:4] + self.dt * a, -self.max_speed, self.max_speed)
        p = np.clip(s[..., 0:2] + self.dt * v, -1.0, 1.0)
        return np.concatenate([p, v], axis=-1)

    def random_states(self, count: int, rng: np.random.Generator) -> np.ndarray:
        p = rng.uniform(-1.0, 1.0, size=(count, 2))
        v = rng.uniform(-self.max_speed, self.max_speed, size=(count, 2))
        return np.concatenate([p, v], axis=1)

    def reset(self, mode: str, rng: np.random.Generator, dataset_state=None):
        if mode == "random":
            return self.random_states(1, rng)[0]
        if mode == "dataset_state":
            return np.array(dataset_state, dtype=np.float64)
        raise ValueError(f"unknown reset mode {mode!r}")

    def reset_mixture(self, count, rng, dataset=None, p_random=0.2) -> np.ndarray:
        """Initial states: random with prob ``p_random``, else a dataset state."""
        out = self.random_states(count, rng)
        if dataset is not None:
            from_data = rng.random(count) >= p_random
            k = int(from_data.sum())
            if k:
                out[from_data] = dataset.sample_states(k, rng)
        return out


# -- task rewards -------------------------------------------------------------------


def _band_score(dist, band):
    """1 inside the band, linear decay to 0 over a further band width."""
    return np.clip(1.0 - np.maximum(dist - band, 0.0) / band, 0.0, 1.0)


def pointmass_reward(task_spec: dict, next_state) -> np.ndarray:
    """Reward in [0, 1] of arriving in ``next_state`` (single state or batch).

    Families: ``move`` {angle_deg, speed, band}, ``reach`` {center, radius},
    ``stand`` {band}.
    """
    s = np.asarray(next_state, dtype=np.float64)
    family = task_spec.get("family")
    params = task_spec.get("params", {})
    if family == "move":
        ang = np.deg2rad(params["angle_deg"])
        target = params["speed"] * np.array([np.cos(ang), np.sin(ang)])
        dist = np.linalg.norm(s[..., 2:4] - target, axis=-1)
        return _band_score(dist, params.get("band", 0.05))
    if family == "reach":
        dist = np.linalg.norm(s[..., 0:2] - np.asarray(params["center"]), axis=-1)
        return _band_score(dist, params.get("radius", 0.15))
    if family == "stand":
        dist = np.linalg.norm(s[..., 2:4], axis=-1)
        return _band_score(dist, params.get("band", 0.02))
    raise ValueError(f"unknown task family {family!r}")


# -- scripted behaviors -------------------------------------------------------------


def _velocity_servo(world, s, v_target):
    return np.clip((v_target - s[..., 2:4]) / world.dt, -1.0, 1.0)


def _wall_slowdown(s, direction, speed, world):
    """Scale cruise speed down near the wall we're heading to so we stop in bounds."""
    p = s[..., 0:2]
    room = np.where(direction > 0, 1.0 - p, np.where(direction < 0, p + 1.0, np.inf))
    with np.errstate(divide="ignore", invalid="ignore"):
        along = np.where(direction != 0, room / np.abs(direction), np.inf)
    dist = np.min(along, axis=-1) - 0.1
    return speed * np.clip(dist / 0.3, 0.0, 1.0)


class Behavior:
    """Deterministic state-feedback controller for the point mass."""

    kind = "base"

    def __init__(self, world: PointMassWorld, **params):
        self.world = world
        self.params = params

    def reset(self):
        pass

    def act(self, s):
        raise NotImplementedError


class Cruise(Behavior):
    kind = "cruise"

    def act(self, s):
        ang = np.deg2rad(self.params["angle_deg"])
        d = np.array([np.cos(ang), np.sin(ang)])
        speed = _wall_slowdown(s, d, self.params.get("speed", 0.2), self.world)
        return _velocity_servo(self.world, s, speed * d)


class Waypoints(Behavior):
    kind = "waypoints"

    def reset(self):
        self._k = 0

    def act(self, s):
        pts = np.asarray(self.params["points"], dtype=np.float64)
        speed = self.params.get("speed", 0.2)
        while self._k < len(pts) - 1 and np.linalg.norm(pts[self._k] - s[:2]) < 0.05:
            self._k += 1
        delta = pts[self._k] - s[:2]
        dist = np.linalg.norm(delta)
        # approach speed ramps down within ~0.3 of the waypoint
        v = (delta / max(dist, 1e-9)) * min(speed, dist / 1.0)
        return _velocity_servo(self.world, s, v)


class Orbit(Behavior):
    kind = "orbit"

    def act(self, s):
        c = np.asarray(self.params.get("center", (0.0, 0.0)), dtype=np.float64)
        r = self.params.get("radius", 0.5)
        speed = self.params.get("speed", 0.15)
        sign = 1.0 if self.params.get("ccw", True) else -1.0
        rel = s[:2] - c
        dist = max(np.linalg.norm(rel), 1e-9)
        radial = rel / dist
        tangent = sign * np.array([-radial[1], radial[0]])
        v = speed * tangent + (r - dist) * radial
        return _velocity_servo(self.world, s, v)


class Stand(Behavior):
    kind = "stand"

    def act(self, s):
        return _velocity_servo(self.world, s, np.zeros(2))


BEHAVIORS = {cls.kind: cls for cls in (Cruise, Waypoints, Orbit, Stand)}


def make_behavior(world: PointMassWorld, spec: dict) -> Behavior:
    kind = spec.get("kind")
    if kind not in BEHAVIORS:
        raise KeyError(f"unknown behavior id {kind!r}")
    return BEHAVIORS[kind](world, **spec.get("params", {}))


def behavior_id(spec: dict) -> str:
    if "id" in spec:
        return str(spec["id"])
    params = ",".join(f"{k}={spec.get('params', {})[k]}" for k in sorted(spec.get("params", {})))
    return f"{spec['kind']}({params})"


def rollout_behavior(world: PointMassWorld, behavior: Behavior, s0, horizon=None, return_actions=False):
    horizon = world.horizon if horizon is None else horizon
    behavior.reset()
    states = [np.asarray(s0, dtype=np.float64)]
    actions = []
    for _ in range(horizon):
        a = np.clip(behavior.act(states[-1]), -1.0, 1.0)
        actions.append(a)
        states.append(world.step(states[-1], a))
    if return_actions:
        return np.stack(states), np.stack(actions)
    return np.stack(states)


def generate_unlabeled_dataset(world: PointMassWorld, behaviors: list[dict], episodes_per_behavior: int,
                               rng: np.random.Generator, start_box: float = 0.8,
                               horizon=None, with_actions=False) -> UnlabeledDataset:
    """Roll out each scripted behavior from random resting starts."""
    episodes = []
    for spec in behaviors:
        beh = make_behavior(world, spec)
        bid = behavior_id(spec)
        for k in range(episodes_per_behavior):
            s0 = np.concatenate([rng.uniform(-start_box, start_box, size=2), np.zeros(2)])
            states, actions = rollout_behavior(world, beh, s0, horizon, return_actions=True)
            episodes.append(UnlabeledEpisode(f"{bid}#{k}", states, actions if with_actions else None))
    return UnlabeledDataset(episodes)


def default_behaviors() -> list[dict]:
    """A varied scripted repertoire used for the desk-scale experiments."""
    out = []
    for ang in range(0, 360, 45):
        for speed in (0.1, 0.2):
            out.append({"kind": "cruise", "params": {"angle_deg": ang, "speed": speed}})
    for ccw in (True, False):
        for r in (0.3, 0.6):
            out.append({"kind": "orbit", "params": {"center": [0.0, 0.0], "radius": r, "speed": 0.12,
                                                    "ccw": ccw}})
    out.append({"kind": "stand", "params": {}})
    return out


def heldout_behaviors() -> list[dict]:
    """Scripted motions absent from the default training repertoire."""
    out = []
    for ang in (22.5, 112.5, 202.5, 292.5):
        out.append({"kind": "cruise", "params": {"angle_deg": ang, "speed": 0.15}})
    out.append({"kind": "orbit", "params": {"center": [0.0, 0.0], "radius": 0.45, "speed": 0.12, "ccw": True}})
    out.append({"kind": "waypoints", "params": {"points": [[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]], "speed": 0.2}})
    return out


def default_tasks(world: PointMassWorld, rng: np.random.Generator, motion_len: int = 100) -> dict:
    """Reward, goal and tracking tasks for the point mass, as a JSON-ready dict."""
    rewards = [{"id": f"move_{a}", "family": "move", "params": {"angle_deg": a, "speed": 0.2}} for a in (0, 90, 180, 270)]
    rewards += [{"id": "reach_ne", "family": "reach", "params": {"center": [0.6, 0.6]}},
                {"id": "stand", "family": "stand", "params": {}}]
    goals = []
    for gx, gy in ((0.6, 0.6), (-0.6, 0.6), (-0.6, -0.6), (0.6, -0.6), (0.0, 0.0), (0.0, 0.7)):
        goals.append({"id": f"goal_{gx:+.1f}_{gy:+.1f}", "goal": [gx, gy, 0.0, 0.0]})
    motions = []
    for spec in heldout_behaviors():
        s0 = np.concatenate([rng.uniform(-0.5, 0.5, size=2), np.zeros(2)])
        states = rollout_behavior(world, make_behavior(world, spec), s0, motion_len)
        motions.append({"id": "track_" + behavior_id(spec), "states": states.tolist()})
    return {"rewards": rewards, "goals": goals, "motions": motions}
