"""Online training loop: interleaved rollouts and update phases."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .cpr import CriticEnsemble, Discriminator
from .data import ReplayBuffer, RunningNormalizer, UnlabeledDataset, update_priorities
from .evaluation import emd, evaluate_suite, infer_tracking_latents
from .fb import FBModel
from .latent import NuConfig, encode_windows, sample_nu_batch
from .nn import AdamState, adam_step
from .policy import Actor, actor_loss_and_grad

ABLATIONS = ("fbcpr", "fb_online", "fb_mpr", "no_fz", "bc")


@dataclass
class TrainerConfig:
    # representation and losses
    d: int = 32
    n_members: int = 2
    gamma: float = 0.98
    alpha: float = 0.01
    ortho_coef: float = 100.0
    fz_coef: float = 0.1
    lam_actor: float = 0.5
    lam_critic: float = 0.5
    lam_fb: float = 0.0
    polyak: float = 0.005
    lr_f: float = 1e-4
    lr_b: float = 1e-5
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    lr_disc: float = 1e-5
    gp_coef: float = 10.0
    gp_mode: str = "wasserstein"
    action_std: float = 0.2
    alpha_bc: float = 1.0
    # latent sampling
    batch_size: int = 256
    p_relabel: float = 0.8
    p_unlabeled: float = 0.6
    p_online_goal: float = 0.2
    p_uniform: float = 0.2
    seq_len: int = 8
    # rollouts
    n_envs: int = 8
    steps_per_update: int = 100
    grad_steps: int = 10
    z_refresh: int = 150
    horizon: int = 200
    init_random_steps: int = 2000
    total_steps: int = 300_000
    buffer_capacity: int = 200_000
    p_init_random: float = 0.2
    # architecture
    tower_hidden: tuple = (64,)
    embed_dim: int = 64
    head_hidden: tuple = (128,)
    b_hidden: tuple = (128,)
    actor_tower_hidden: tuple = (64,)
    actor_embed_dim: int = 64
    actor_head_hidden: tuple = (128,)
    disc_hidden: tuple = (128, 128)
    # evaluation
    eval_every: int = 10
    eval_episodes: int = 10
    reward_samples: int = 10_000
    reward_mode: str = "weighted"
    goal_beta: float = 0.15
    goal_sigma: float = 0.15
    track_xi: float = 0.1
    track_window: int = 8
    update_priorities: bool = True
    checkpoint_every: int = 0
    # data and task sources
    dataset_path: str | None = None
    dataset_episodes_per_behavior: int = 4
    dataset_seed: int = 12345
    tasks: dict = field(default_factory=dict)
    ablation: str = "fbcpr"

    def __post_init__(self):
        for name in ("tower_hidden", "head_hidden", "b_hidden", "actor_tower_hidden", "actor_head_hidden",
                     "disc_hidden"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        for name in ("p_relabel", "p_unlabeled", "p_online_goal", "p_uniform", "p_init_random", "polyak"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("d", "n_members", "batch_size", "seq_len", "n_envs", "steps_per_update", "z_refresh",
                     "horizon", "buffer_capacity", "eval_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("grad_steps", "init_random_steps", "total_steps", "eval_episodes", "checkpoint_every"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.n_members != 2:
            raise ValueError("the ensemble reductions are defined for exactly 2 members")
        NuConfig(self.p_unlabeled, self.p_online_goal, self.p_uniform, self.seq_len)

    @property
    def nu(self) -> NuConfig:
        nu = NuConfig(self.p_unlabeled, self.p_online_goal, self.p_uniform, self.seq_len)
        return nu.without_dataset() if self.ablation == "fb_online" else nu

    @property
    def uses_dataset(self) -> bool:
        return self.ablation != "fb_online"

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainerConfig":
        """Accepts flat keys or sections ({"trainer": {...}, ...}) mirroring field names."""
        flat = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for k, v in raw.items():
            if isinstance(v, dict) and k not in names:
                flat.update(v)
            else:
                flat[k] = v
        unknown = sorted(set(flat) - names)
        if unknown:
            raise KeyError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**flat)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class Agent:
    """All networks, their optimizers and the state normalizer."""

    def __init__(self, cfg: TrainerConfig, state_dim: int, action_dim: int, rng):
        self.cfg = cfg
        self.state_dim, self.action_dim = state_dim, action_dim
        arch = dict(tower_hidden=cfg.tower_hidden, embed_dim=cfg.embed_dim, head_hidden=cfg.head_hidden)
        self.normalizer = RunningNormalizer(state_dim)
        self.fb = FBModel(state_dim, action_dim, cfg.d, n_members=cfg.n_members, gamma=cfg.gamma, rng=rng,
                          b_hidden=cfg.b_hidden, **arch)
        self.actor = Actor(state_dim, action_dim, cfg.d, std=cfg.action_std, rng=rng,
                           tower_hidden=cfg.actor_tower_hidden, embed_dim=cfg.actor_embed_dim,
                           head_hidden=cfg.actor_head_hidden)
        self.critic = CriticEnsemble(state_dim, action_dim, cfg.d, n_members=cfg.n_members, rng=rng, **arch)
        self.disc = Discriminator(state_dim, cfg.d, cfg.disc_hidden, state_only=cfg.ablation == "fb_mpr",
                                  gp_coef=cfg.gp_coef, gp_mode=cfg.gp_mode, rng=rng)
        self.opt = {f"F{k}": AdamState.zeros(p.size, cfg.lr_f) for k, p in enumerate(self.fb.F_params)}
        self.opt["B"] = AdamState.zeros(self.fb.B_params.size, cfg.lr_b)
        self.opt["actor"] = AdamState.zeros(self.actor.params.size, cfg.lr_actor)
        for k, p in enumerate(self.critic.params):
            self.opt[f"Q{k}"] = AdamState.zeros(p.size, cfg.lr_critic)
        self.opt["disc"] = AdamState.zeros(self.disc.params.size, cfg.lr_disc)

    # raw-state interfaces used by rollouts and evaluation
    def embed(self, states):
        return self.fb.embed(self.normalizer.normalize(states))

    def act_mean(self, states, z):
        return self.actor.act(self.normalizer.normalize(states), z, "mean")

    def param_blocks(self) -> dict[str, np.ndarray]:
        """Every array that defines the agent (live, target, optimizer, normalizer)."""
        out = {}
        for k in range(self.fb.n_members):
            out[f"F{k}"], out[f"F{k}.target"] = self.fb.F_params[k], self.fb.F_targets[k]
            out[f"Q{k}"], out[f"Q{k}.target"] = self.critic.params[k], self.critic.targets[k]
        out["B"], out["B.target"] = self.fb.B_params, self.fb.B_target
        out["actor"], out["disc"] = self.actor.params, self.disc.params
        for name, st in self.opt.items():
            out[f"adam.{name}.m"], out[f"adam.{name}.v"] = st.first_moment, st.second_moment
            out[f"adam.{name}.step"] = np.array([float(st.step_count)])
        for k, v in self.normalizer.state_dict().items():
            out[f"normalizer.{k}"] = v
        return out

    def load_param_blocks(self, blocks):
        for name, arr in self.param_blocks().items():
            if name.startswith("normalizer."):
                continue
            if name not in blocks:
                raise KeyError(f"checkpoint lacks parameter block {name!r}")
            if blocks[name].shape != arr.shape:
                raise ValueError(f"block {name!r} has shape {blocks[name].shape}, expected {arr.shape}")
            arr[...] = blocks[name]
        for name, st in self.opt.items():
            st.step_count = int(blocks[f"adam.{name}.step"][0])
        self.normalizer.load_state_dict({k: blocks[f"normalizer.{k}"] for k in ("count", "mean", "m2")})


# -- rollouts -----------------------------------------------------------------------------


class RolloutState:
    """Per-env simulator state, latent, counters and rng streams."""

    def __init__(self, cfg: TrainerConfig, world, seed: int):
        self.n = cfg.n_envs
        self.rngs = [np.random.default_rng(np.random.SeedSequence([int(seed), 1, i])) for i in range(self.n)]
        self.s = np.zeros((self.n, world.state_dim))
        self.z = np.zeros((self.n, cfg.d))
        self.t = np.zeros(self.n, dtype=np.int64)
        self.z_age = np.zeros(self.n, dtype=np.int64)
        self.needs_reset = np.ones(self.n, dtype=bool)

    def state_dict(self):
        return {"s": self.s, "z": self.z, "t": self.t.astype(np.float64), "z_age": self.z_age.astype(np.float64),
                "needs_reset": self.needs_reset.astype(np.float64)}

    def load_state_dict(self, blocks):
        self.s[...] = blocks["s"]
        self.z[...] = blocks["z"]
        self.t[...] = blocks["t"].astype(np.int64)
        self.z_age[...] = blocks["z_age"].astype(np.int64)
        self.needs_reset[...] = blocks["needs_reset"] > 0.5


def _draw_latent(agent, cfg, nu, buffer, dataset, rng, fallback_state):
    """One latent from nu for a rollout env. With an empty buffer the online-goal
    branch falls back to the env's current state."""
    d = cfg.d
    branch_windows = None
    if nu.p_unlabeled > 0:
        win = dataset.sample_windows(1, nu.seq_len, rng)
        branch_windows = encode_windows([agent.normalizer.normalize(w) for w in win], agent.fb.embed)
    if len(buffer):
        goal = buffer.next_obs[rng.integers(len(buffer))][None, :]
    else:
        goal = np.asarray(fallback_state)[None, :]
    return sample_nu_batch(nu, 1, d, rng, goal_states=agent.normalizer.normalize(goal),
                           window_latents=branch_windows, B=agent.fb.embed)[0]


def rollout_phase(cfg: TrainerConfig, agent: Agent, world, roll: RolloutState, buffer: ReplayBuffer,
                  dataset, total_env_steps: int) -> int:
    """Collect ``steps_per_update`` transitions across envs. Returns the new total step count."""
    nu = cfg.nu
    remaining = cfg.steps_per_update
    step = total_env_steps
    while remaining > 0:
        active = np.arange(min(roll.n, remaining))
        for i in active:
            if roll.needs_reset[i]:
                ds = dataset if cfg.uses_dataset else None
                roll.s[i] = world.reset_mixture(1, roll.rngs[i], ds, cfg.p_init_random)[0]
                roll.t[i] = 0
                roll.z_age[i] = 0
                roll.needs_reset[i] = False
            if roll.z_age[i] % cfg.z_refresh == 0:
                roll.z[i] = _draw_latent(agent, cfg, nu, buffer, dataset, roll.rngs[i], roll.s[i])
        obs = roll.s[active].copy()
        if step < cfg.init_random_steps:
            actions = np.stack([roll.rngs[i].uniform(-1.0, 1.0, size=world.action_dim) for i in active])
        else:
            mu = agent.actor.act(agent.normalizer.normalize(obs), roll.z[active], "mean")
            noise = np.stack([roll.rngs[i].standard_normal(world.action_dim) for i in active])
            actions = np.clip(mu + cfg.action_std * noise, -1.0, 1.0)
        nxt = world.step(obs, actions)
        buffer.push_many(obs, actions, nxt, roll.z[active], roll.t[active])
        roll.s[active] = nxt
        roll.t[active] += 1
        roll.z_age[active] += 1
        roll.needs_reset[active] = roll.t[active] >= cfg.horizon
        step += len(active)
        remaining -= len(active)
    return step


# -- updates ------------------------------------------------------------------------------


def _check_finite(losses: dict):
    for name, v in losses.items():
        if not np.isfinite(v):
            raise FloatingPointError(f"non-finite {name} loss")


def update_step(cfg: TrainerConfig, agent: Agent, buffer: ReplayBuffer, dataset, rng) -> dict:
    """One iteration of the update block. Every loss is evaluated at the
    pre-update parameters; all optimizer steps are applied afterwards."""
    n = cfg.batch_size
    fb, actor, critic, disc, norm = agent.fb, agent.actor, agent.critic, agent.disc, agent.normalizer
    batch = buffer.sample(n, rng)
    use_data = cfg.uses_dataset
    windows = dataset.sample_windows(max(1, n // cfg.seq_len), cfg.seq_len, rng) if use_data else []
    norm.observe(batch.next_obs)
    if windows:
        norm.observe(np.concatenate(windows))
    obs, next_obs = norm.normalize(batch.obs), norm.normalize(batch.next_obs)
    win = [norm.normalize(w) for w in windows]

    losses, grads = {}, {}
    win_z = encode_windows(win, fb.embed) if win else None

    # discriminator on stored (not yet relabeled) latents
    if cfg.ablation != "fb_online":
        pos_s = np.concatenate(win)
        pos_z = np.repeat(win_z, [len(w) for w in win], axis=0)
        dl, grads["disc"] = disc.loss_and_grad(pos_s, pos_z, obs, batch.z, rng)
        losses.update(dl)

    # relabel with nu, reusing the encoded windows and batch next-states as goals
    nu = cfg.nu
    z = batch.z.copy()
    mask = rng.random(n) < cfg.p_relabel
    k = int(mask.sum())
    if k:
        z[mask] = sample_nu_batch(nu, k, cfg.d, rng, goal_states=next_obs, window_latents=win_z, B=fb.embed)

    next_action = actor.act(next_obs, z, "sample", rng)

    # forward-backward: F_k on L_FB + beta L_Fz, B on sum_k L_FB + lambda L_ortho
    fb_losses, F_grads, grads["B"] = fb.losses_and_grads(obs, batch.action, next_obs, z, next_action,
                                                         ortho_coef=cfg.ortho_coef, fz_coef=cfg.fz_coef,
                                                         lam_fb=cfg.lam_fb)
    losses.update(fb_losses)
    for k, g in enumerate(F_grads):
        grads[f"F{k}"] = g

    # critic on the discriminator reward at (s', z)
    if cfg.ablation != "fb_online":
        reward = disc.reward(next_obs, z)
        closs, cgrads = critic.loss_and_grads(obs, batch.action, z, reward, next_obs, next_action, cfg.gamma,
                                              cfg.lam_critic)
        losses["critic"] = closs
        losses["disc_reward"] = float(reward.mean())
        for k, g in enumerate(cgrads):
            grads[f"Q{k}"] = g

    # actor
    variant = {"fbcpr": "fbcpr", "fb_mpr": "fbcpr", "fb_online": "fb", "no_fz": "no_fz", "bc": "bc"}[cfg.ablation]
    noise = rng.standard_normal((n, actor.action_dim))
    demo = None
    if variant == "bc":
        d_s, d_a = dataset.sample_labeled(n, rng)
        norm_d = norm.normalize(d_s)
        d_z = sample_nu_batch(nu, n, cfg.d, rng, goal_states=next_obs, window_latents=win_z, B=fb.embed)
        demo = (norm_d, d_z, d_a)
    losses["actor"], grads["actor"] = actor_loss_and_grad(actor, fb, critic, obs, z, noise, variant=variant,
                                                          alpha=cfg.alpha, lam=cfg.lam_actor,
                                                          alpha_bc=cfg.alpha_bc, demo=demo)
    _check_finite(losses)

    targets = {"B": fb.B_params, "actor": actor.params, "disc": disc.params}
    for k in range(fb.n_members):
        targets[f"F{k}"] = fb.F_params[k]
        targets[f"Q{k}"] = critic.params[k]
    for name, g in grads.items():
        adam_step(agent.opt[name], targets[name], g, name)

    zeta = cfg.polyak
    pairs = [(fb.B_params, fb.B_target)] + list(zip(fb.F_params, fb.F_targets))
    if cfg.ablation != "fb_online":
        pairs += list(zip(critic.params, critic.targets))
    for live, tgt in pairs:
        tgt *= 1.0 - zeta
        tgt += zeta * live
    return losses


def update_phase(cfg: TrainerConfig, agent: Agent, buffer: ReplayBuffer, dataset, rng) -> dict:
    """``grad_steps`` update iterations; returns the mean of each loss over them."""
    if len(buffer) == 0:
        raise ValueError("update phase needs a nonempty replay buffer")
    if cfg.uses_dataset and dataset is None:
        raise ValueError("this ablation needs an unlabeled dataset")
    trace: dict[str, list] = {}
    for _ in range(cfg.grad_steps):
        for k, v in update_step(cfg, agent, buffer, dataset, rng).items():
            trace.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in trace.items()}


# -- tracking the whole dataset for priorities ---------------------------------------------


def track_episodes(agent: Agent, world, motions: list[np.ndarray], window: int) -> list[np.ndarray]:
    """Roll out per-step tracking latents for many motions at once (grouped by length)."""
    out = [None] * len(motions)
    by_len: dict[int, list[int]] = {}
    for i, m in enumerate(motions):
        by_len.setdefault(len(m), []).append(i)
    for T, idx in by_len.items():
        M = np.stack([motions[i] for i in idx])
        Z = np.stack([infer_tracking_latents(m, agent.embed, window) for m in M])
        s = M[:, 0].copy()
        traj = [s]
        for t in range(T - 1):
            s = world.step(s, agent.act_mean(s, Z[:, t]))
            traj.append(s)
        traj = np.stack(traj, axis=1)
        for j, i in enumerate(idx):
            out[i] = traj[j]
    return out


def dataset_emds(agent: Agent, world, dataset: UnlabeledDataset, window: int) -> np.ndarray:
    motions = [ep.states for ep in dataset.episodes]
    trajs = track_episodes(agent, world, motions, window)
    dims = list(world.position_dims)
    return np.array([emd(tr[:, dims], m[:, dims]) for tr, m in zip(trajs, motions)])


# -- the full run ----------------------------------------------------------------------------

METRICS_HEADER = ("env_steps", "phase", "kind", "name", "value", "seed", "config_hash")


def _rng_state(rng):
    return rng.bit_generator.state


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


def load_or_generate_dataset(cfg: TrainerConfig, world):
    from .envs import default_behaviors, generate_unlabeled_dataset

    if not cfg.uses_dataset:
        return None
    if cfg.dataset_path:
        return UnlabeledDataset.load_jsonl(cfg.dataset_path)
    rng = np.random.default_rng(cfg.dataset_seed)
    return generate_unlabeled_dataset(world, default_behaviors(), cfg.dataset_episodes_per_behavior, rng,
                                      horizon=cfg.horizon, with_actions=cfg.ablation == "bc")


class Trainer:
    """Owns every piece of state of one run so it can be checkpointed and resumed."""

    def __init__(self, cfg: TrainerConfig, seed: int, world=None, dataset=None, tasks=None):
        from .envs import PointMassWorld, default_tasks

        self.cfg, self.seed = cfg, int(seed)
        self.world = world if world is not None else PointMassWorld(horizon=cfg.horizon)
        self.dataset = dataset if dataset is not None else load_or_generate_dataset(cfg, self.world)
        if cfg.uses_dataset and self.dataset is None:
            raise ValueError("this ablation needs an unlabeled dataset")
        if tasks is None:
            tasks = cfg.tasks or default_tasks(self.world, np.random.default_rng(cfg.dataset_seed + 1))
        self.tasks = tasks
        init_rng = np.random.default_rng(np.random.SeedSequence([self.seed, 2]))
        self.agent = Agent(cfg, self.world.state_dim, self.world.action_dim, init_rng)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, self.world.state_dim, self.world.action_dim, cfg.d)
        self.roll = RolloutState(cfg, self.world, self.seed)
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0]))
        self.env_steps = 0
        self.phases = 0
        self.metrics: list[tuple] = []
        self.config_hash = cfg.config_hash()

    # one rollout + update phase
    def run_phase(self):
        self.env_steps = rollout_phase(self.cfg, self.agent, self.world, self.roll, self.buffer, self.dataset,
                                       self.env_steps)
        losses = update_phase(self.cfg, self.agent, self.buffer, self.dataset, self.rng) if self.cfg.grad_steps else {}
        self.phases += 1
        for name in sorted(losses):
            self._log("loss", name, losses[name])
        if self.phases % self.cfg.eval_every == 0:
            self.evaluate()
        return losses

    def _log(self, kind, name, value):
        self.metrics.append((self.env_steps, self.phases, kind, name, float(value)))

    def evaluate(self):
        cfg = self.cfg
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 3, self.phases]))
        n = min(cfg.reward_samples, len(self.buffer))
        reward_states = self.buffer.next_obs[rng.integers(len(self.buffer), size=n)] if n else None
        th = {"beta": cfg.goal_beta, "sigma": cfg.goal_sigma, "xi": cfg.track_xi, "window": cfg.track_window}
        rows = evaluate_suite(self.agent, self.world, self.tasks, cfg.eval_episodes,
                              seed=int(rng.integers(2**31)), reward_states=reward_states,
                              reward_mode=cfg.reward_mode, thresholds=th)
        for task_id, metric, value, _, _ in rows:
            self._log("eval", f"{task_id}/{metric}", value)
        summary = summarize_eval(rows, self.tasks)
        for name in sorted(summary):
            self._log("eval", name, summary[name])
        if cfg.update_priorities and self.dataset is not None:
            update_priorities(self.dataset, dataset_emds(self.agent, self.world, self.dataset, cfg.track_window))
        return rows

    def train(self, run_dir=None, until=None):
        """Run phases until total_steps (or ``until``) env steps; always finishes with an evaluation."""
        from pathlib import Path

        until = self.cfg.total_steps if until is None else until
        run_dir = Path(run_dir) if run_dir is not None else None
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            self.write_manifest(run_dir / "manifest.json")
        last_eval = None
        while self.env_steps < until:
            self.run_phase()
            if self.phases % self.cfg.eval_every == 0:
                last_eval = self.phases
            if run_dir is not None and self.cfg.checkpoint_every and self.phases % self.cfg.checkpoint_every == 0:
                self.save(run_dir / f"checkpoint_{self.phases:06d}.ckpt")
        if last_eval != self.phases and until >= self.cfg.total_steps:
            self.evaluate()
        if run_dir is not None:
            self.save(run_dir / "final.ckpt")
            self.write_metrics(run_dir / "metrics.csv")
        return self.metrics

    # -- outputs -------------------------------------------------------------------------
    def write_metrics(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRICS_HEADER)
            for steps, phase, kind, name, value in self.metrics:
                w.writerow([steps, phase, kind, name, repr(float(value)), self.seed, self.config_hash])

    def write_manifest(self, path):
        data_hash = None
        if self.cfg.dataset_path:
            with open(self.cfg.dataset_path, "rb") as fh:
                data_hash = hashlib.sha256(fh.read()).hexdigest()
        manifest = {"run_id": f"{self.config_hash}-{self.seed}", "seed": self.seed,
                    "config_hash": self.config_hash, "dataset_sha256": data_hash, "config": self.cfg.to_dict()}
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    # -- checkpointing ---------------------------------------------------------------------
    def save(self, path):
        from .checkpoint import save_checkpoint

        blocks = {f"agent.{k}": v for k, v in self.agent.param_blocks().items()}
        blocks.update({f"buffer.{k}": v for k, v in self.buffer.state_dict().items()})
        blocks.update({f"rollout.{k}": v for k, v in self.roll.state_dict().items()})
        if self.dataset is not None:
            blocks["dataset.priorities"] = self.dataset.priorities
        meta = {"config": self.cfg.to_dict(), "seed": self.seed, "env_steps": self.env_steps,
                "phases": self.phases, "rng": _rng_state(self.rng),
                "env_rngs": [_rng_state(r) for r in self.roll.rngs],
                "metrics": [list(m) for m in self.metrics], "tasks": self.tasks}
        save_checkpoint(path, meta, blocks)

    @classmethod
    def load(cls, path, world=None, dataset=None):
        from .checkpoint import load_checkpoint

        meta, blocks = load_checkpoint(path)
        cfg = TrainerConfig.from_dict(meta["config"])
        tr = cls(cfg, meta["seed"], world=world, dataset=dataset, tasks=meta["tasks"])
        tr.agent.load_param_blocks({k[len("agent."):]: v for k, v in blocks.items() if k.startswith("agent.")})
        tr.buffer.load_state_dict({k[len("buffer."):]: v for k, v in blocks.items() if k.startswith("buffer.")})
        tr.roll.load_state_dict({k[len("rollout."):]: v for k, v in blocks.items() if k.startswith("rollout.")})
        if tr.dataset is not None and "dataset.priorities" in blocks:
            tr.dataset.priorities = blocks["dataset.priorities"].copy()
        _set_rng_state(tr.rng, meta["rng"])
        for r, st in zip(tr.roll.rngs, meta["env_rngs"]):
            _set_rng_state(r, st)
        tr.env_steps, tr.phases = meta["env_steps"], meta["phases"]
        tr.metrics = [tuple(m) for m in meta["metrics"]]
        return tr


def summarize_eval(rows, tasks) -> dict:
    """Mean of each metric over the tasks of each kind (e.g. goal/success)."""
    kind_of = {}
    for kind in ("rewards", "goals", "motions"):
        for k, t in enumerate(tasks.get(kind, [])):
            kind_of[t.get("id", f"{kind[:-1]}_{k}")] = {"rewards": "reward", "goals": "goal", "motions": "tracking"}[kind]
    acc: dict[str, list] = {}
    for task_id, metric, value, _, _ in rows:
        acc.setdefault(f"{kind_of[task_id]}/{metric}", []).append(value)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def train(cfg: TrainerConfig, run_dir, seed=0):
    return Trainer(cfg, seed).train(run_dir)


def agent_from_checkpoint(path):
    """(config, agent, world, buffer next-states) without rebuilding dataset or rng streams."""
    from .checkpoint import load_checkpoint
    from .envs import PointMassWorld

    meta, blocks = load_checkpoint(path)
    cfg = TrainerConfig.from_dict(meta["config"])
    world = PointMassWorld(horizon=cfg.horizon)
    agent = Agent(cfg, world.state_dim, world.action_dim, np.random.default_rng(0))
    agent.load_param_blocks({k[len("agent."):]: v for k, v in blocks.items() if k.startswith("agent.")})
    size = int(blocks["buffer.meta"][1])
    states = blocks["buffer.next_obs"][:size] if size else None
    return cfg, agent, world, states
