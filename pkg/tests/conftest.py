import numpy as np
import pytest

from fbcpr.envs import PointMassWorld, behavior_id, heldout_behaviors, make_behavior, rollout_behavior
from fbcpr.trainer import TrainerConfig

TINY_NETS = dict(d=8, batch_size=16, tower_hidden=(8,), embed_dim=8, head_hidden=(16,), b_hidden=(16,),
                 actor_tower_hidden=(8,), actor_embed_dim=8, actor_head_hidden=(16,), disc_hidden=(16, 16))


def tiny_tasks(world=None):
    world = world or PointMassWorld(horizon=30)
    spec = heldout_behaviors()[0]
    motion = rollout_behavior(world, make_behavior(world, spec), np.array([0.1, -0.2, 0.0, 0.0]), 12)
    return {"rewards": [{"id": "move_0", "family": "move", "params": {"angle_deg": 0, "speed": 0.2}}],
            "goals": [{"id": "goal_ne", "goal": [0.5, 0.5, 0.0, 0.0]}],
            "motions": [{"id": "track_" + behavior_id(spec), "states": motion.tolist()}]}


def tiny_config(**overrides):
    """A configuration that trains end to end in well under a second."""
    base = dict(TINY_NETS, n_envs=2, steps_per_update=20, grad_steps=2, init_random_steps=40, total_steps=100,
                horizon=30, eval_every=3, eval_episodes=1, reward_samples=200, dataset_episodes_per_behavior=1,
                buffer_capacity=1000, lr_b=1e-4, tasks=tiny_tasks())
    base.update(overrides)
    return TrainerConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# acceptance criteria register here and are echoed at the end of the session
ACCEPTANCE_RESULTS: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}")
