"""Self-check suites: finite-difference gradients, tabular oracles, EMD oracle."""

from __future__ import annotations

import itertools

import numpy as np

from .cpr import CriticEnsemble, Discriminator, discriminator_reward
from .evaluation import emd, infer_reward_latent, reward_embedding
from .fb import FBModel, fb_td_loss, fz_loss, ortho_loss, regularized_cov_inverse
from .latent import sample_uniform_sphere
from .nn import gradcheck
from .policy import Actor, actor_loss_and_grad
from .tabular import bellman_residual, exact_q, exact_successor_measure, fit_tabular_fb, gridworld

TINY = dict(tower_hidden=(5,), embed_dim=4, head_hidden=(6,))


class GradFixture:
    """Tiny networks and a random batch for finite-difference checks."""

    def __init__(self, seed, n=6, S=3, A=2, d=4):
        rng = np.random.default_rng(seed)
        self.fb = FBModel(S, A, d, rng=rng, b_hidden=(5,), **TINY)
        # targets differ from live nets so target terms are exercised
        self.fb.F_targets = [self.fb.F.init(rng) for _ in range(2)]
        self.fb.B_target = self.fb.B.init(rng)
        self.critic = CriticEnsemble(S, A, d, rng=rng, **TINY)
        self.critic.targets = [self.critic.net.init(rng) for _ in range(2)]
        self.actor = Actor(S, A, d, rng=rng, **TINY)
        self.disc = Discriminator(S, d, (5, 4), rng=rng)
        self.obs, self.next_obs = rng.normal(size=(n, S)), rng.normal(size=(n, S))
        self.action = rng.uniform(-1, 1, size=(n, A))
        self.next_action = rng.uniform(-1, 1, size=(n, A))
        self.z = sample_uniform_sphere(n, d, rng)
        self.noise = rng.normal(size=(n, A))
        self.reward = rng.normal(size=n)
        self.pos_s, self.pos_z = rng.normal(size=(n + 2, S)), sample_uniform_sphere(n + 2, d, rng)
        self.demo = (rng.normal(size=(n, S)), sample_uniform_sphere(n, d, rng), rng.uniform(-1, 1, size=(n, A)))
        self.gamma = 0.9

    def _F_out(self, k, p):
        fb = self.fb
        return fb.F.forward(p, np.concatenate([self.obs, self.action], 1), np.concatenate([self.obs, self.z], 1))

    def _other_F(self, k):
        return self.fb.forward_F(1 - k, self.obs, self.action, self.z)[0]

    def closures(self):
        fb, g = self.fb, self.gamma
        F_tgt = fb.F_values(self.next_obs, self.next_action, self.z, target=True)
        B_tgt = fb.embed(self.next_obs, target=True)
        out = {}

        def fb_td_F(p):
            y, c = self._F_out(0, p)
            res = fb_td_loss(np.stack([y, self._other_F(0)]), fb.embed(self.next_obs), F_tgt, B_tgt, g)
            return res.member_losses[0], fb.F.backward(p, c, res.dF[0])[0]

        def fb_td_B(p):
            B, c = fb.B.forward(p, self.next_obs)
            F = fb.F_values(self.obs, self.action, self.z)
            res = fb_td_loss(F, B, F_tgt, B_tgt, g)
            return res.member_losses.sum(), fb.B.backward(p, c, res.dB)[0]

        def ortho_B(p):
            B, c = fb.B.forward(p, self.next_obs)
            loss, dB = ortho_loss(B)
            return loss, fb.B.backward(p, c, dB)[0]

        cov_inv = regularized_cov_inverse(fb.embed(self.next_obs))

        def fz_F(p):
            y, c = self._F_out(0, p)
            F = np.stack([y, self._other_F(0)])
            loss, dF = fz_loss(F, self.z, fb.embed(self.next_obs), cov_inv, F_tgt, g)
            return 2.0 * loss, fb.F.backward(p, c, dF[0])[0]

        out["fb_td[F]"] = (fb_td_F, fb.F_params[0], fb.F.manifest)
        out["fb_td[B]"] = (fb_td_B, fb.B_params, fb.B.manifest)
        out["ortho[B]"] = (ortho_B, fb.B_params, fb.B.manifest)
        out["fz[F]"] = (fz_F, fb.F_params[0], fb.F.manifest)

        for mode in ("wasserstein", "simplified"):
            def disc_closure(p, mode=mode):
                self.disc.gp_mode = mode
                losses, grad = self.disc.loss_and_grad(self.pos_s, self.pos_z, self.obs, self.z,
                                                       np.random.default_rng(7), params=p)
                return losses["disc"] + self.disc.gp_coef * losses["gp"], grad
            out[f"discriminator[{mode}]"] = (disc_closure, self.disc.params, self.disc.net.manifest)

        cr = self.critic

        def critic_closure(p):
            saved = cr.params[0]
            cr.params[0] = p
            try:
                loss, grads = cr.loss_and_grads(self.obs, self.action, self.z, self.reward, self.next_obs,
                                                self.next_action, g, 0.5)
            finally:
                cr.params[0] = saved
            # loss is the member mean, member 0 enters with weight 1/2
            return 2.0 * loss, 2.0 * grads[0]

        out["critic"] = (critic_closure, cr.params[0], cr.net.manifest)

        ac = self.actor
        mu = ac.mean(self.obs, self.z)
        a = mu + ac.std * self.noise
        Fv = np.einsum("mnd,nd->mn", fb.F_values(self.obs, a, self.z), self.z)
        f_bar = float(np.mean(np.abs(Fv.mean(0) - 0.5 * np.abs(Fv[0] - Fv[1]))))
        for variant in ("fbcpr", "no_fz", "bc"):
            def actor_closure(p, variant=variant):
                return actor_loss_and_grad(ac, fb, cr, self.obs, self.z, self.noise, variant=variant, alpha=0.3,
                                           alpha_bc=0.5, demo=self.demo, params=p, f_bar=f_bar)
            out[f"actor[{variant}]"] = (actor_closure, ac.params, ac.net.manifest)
        return out


def grad_suite(seeds=range(20), inject_fault=False):
    """Returns [(name, passed, detail)] with one entry per loss (worst case over seeds)."""
    worst: dict[str, float] = {}
    for seed in seeds:
        for name, (closure, params, manifest) in GradFixture(seed).closures().items():
            if inject_fault:
                base = closure
                closure = lambda p, base=base: (lambda lg: (lg[0], lg[1] * 1.01))(base(p))
            rep = gradcheck(closure, params.copy(), manifest)
            worst[name] = max(worst.get(name, 0.0), rep.max_error)
    return [(f"grad {n}", e < 1e-4, f"max rel err {e:.2e}") for n, e in worst.items()]


def tabular_suite(steps=5000, n_rewards=10, seed=0):
    mdp = gridworld()
    rng = np.random.default_rng(seed)
    policy = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
    M = exact_successor_measure(mdp, policy)
    results = [("tabular bellman residual", bellman_residual(mdp, policy, M) <= 1e-9,
                f"{bellman_residual(mdp, policy, M):.1e}")]
    model = fit_tabular_fb(mdp, policy, steps=steps, rng=rng)
    err = float(np.abs(model.successor_measure() - M).max())
    results.append(("tabular successor measure", err <= 0.05, f"max err {err:.2e}"))
    q_err = 0.0
    states = np.eye(mdp.n_states)
    for _ in range(n_rewards):
        r = rng.uniform(0, 1, size=mdp.n_states)
        q_err = max(q_err, tabular_zero_shot_q_error(model, mdp, policy, r, states))
    results.append(("tabular zero-shot Q", q_err <= 0.1, f"max err {q_err:.2e}"))
    return results


def tabular_zero_shot_q_error(model, mdp, policy, r, states):
    """|F z_r - Q| with z_r inferred from reward samples drawn at the FB sampling law rho.

    The sample mean of r B over rho-weighted states is the expectation that
    linear inference estimates; the projection onto the sphere is undone by
    rescaling with the raw embedding norm, since the sphere drops reward scale.
    """
    d = model.B.shape[1]
    B_lookup = lambda s: (s * model.rho[None, :] * len(model.rho)) @ model.B
    z = infer_reward_latent(states, r, B_lookup, "linear")
    raw = reward_embedding(states, r, B_lookup, "linear")
    q = model.F @ z * np.linalg.norm(raw) / np.sqrt(d)
    return float(np.abs(q - exact_q(mdp, policy, r)).max())


def brute_force_emd(a, b):
    n = len(a)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return min(cost[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))


def emd_suite(cases=1000, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 7))
        a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        worst = max(worst, abs(emd(a, b) - brute_force_emd(a, b)))
    results = [("emd vs permutation oracle", worst <= 1e-9, f"max |diff| {worst:.1e} over {cases} cases")]
    a, b, c = rng.normal(size=(3, 5, 2))
    tri = emd(a, c) <= emd(a, b) + emd(b, c) + 1e-12
    sym = abs(emd(a, b) - emd(b, a)) <= 1e-12
    results.append(("emd metric axioms", tri and sym and emd(a, a) == 0.0, "symmetry, identity, triangle"))
    return results


def discriminator_reward_check():
    return [("discriminator reward log-ratio", abs(discriminator_reward(0.8) - np.log(4.0)) < 1e-12, "D=0.8")]


SUITES = {"grad": grad_suite, "tabular": tabular_suite, "emd": emd_suite}


def run_suites(names, inject_fault=False):
    results = []
    for name in names:
        if name == "grad":
            results += grad_suite(inject_fault=inject_fault)
        else:
            results += SUITES[name]()
    return results
