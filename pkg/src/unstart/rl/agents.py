"""TD3 and SAC learners over numpy MLPs.

Networks act in normalized action space u in [-1, 1]^d; the environment sees
a = mid + half * u. Transitions store the environment-facing action.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Adam, Mlp, MlpSpec


class TrainingDivergence(FloatingPointError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at learner step {step}")
        self.step = step


@dataclass(frozen=True)
class ActionBounds:
    low: tuple = (0.0, 0.0, 0.0, -math.radians(30.0))
    high: tuple = (0.5, 0.5, 0.5, math.radians(30.0))

    def __post_init__(self):
        lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("action bounds need low < high componentwise")

    @property
    def dim(self):
        return len(self.low)

    @property
    def mid(self):
        return 0.5 * (np.asarray(self.high) + np.asarray(self.low))

    @property
    def half(self):
        return 0.5 * (np.asarray(self.high) - np.asarray(self.low))

    def clamp(self, a):
        return np.clip(a, self.low, self.high)

    def to_env(self, u):
        return self.clamp(self.mid + self.half * np.asarray(u))

    def to_unit(self, a):
        return (np.asarray(a) - self.mid) / self.half


@dataclass(frozen=True)
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 256
    hidden: tuple = (256, 256)
    exploration_sigma: float = 0.1
    target_sigma: float = 0.2
    target_clip: float = 0.5
    policy_update_interval: int = 2

    def __post_init__(self):
        _check_common(self)
        if self.exploration_sigma < 0 or self.target_sigma < 0 or not self.target_clip > 0:
            raise ValueError("need sigma >= 0 and clip > 0")


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    batch_size: int = 256
    hidden: tuple = (256, 256)
    init_alpha: float = 0.2
    target_entropy: float | None = None  # defaults to -dim(A)
    log_std_bounds: tuple = (-20.0, 2.0)

    def __post_init__(self):
        _check_common(self)
        if not self.init_alpha > 0:
            raise ValueError("initial temperature must be positive")


def _check_common(cfg):
    if not 0 < cfg.gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not 0 < cfg.tau <= 1:
        raise ValueError("tau must lie in (0, 1]")


def td3_target(r, gamma, q1_target, q2_target, terminated=False):
    r = np.asarray(r, float)
    boot = np.minimum(q1_target, q2_target)
    return r + gamma * (1.0 - np.asarray(terminated, float)) * boot


def sac_target(r, gamma, min_q, alpha, log_pi, terminated=False):
    return np.asarray(r, float) + gamma * (1.0 - np.asarray(terminated, float)) * (
        np.asarray(min_q) - alpha * np.asarray(log_pi))


def td3_smoothed_action(actor_target, s_next, sigma_target, clip_c, bounds: ActionBounds, rng,
                        eps=None):
    """clamp_bounds(pi'(s') + clamp(eps, -c, c)) with eps ~ N(0, sigma) scaled to the bounds."""
    u = actor_target(np.atleast_2d(s_next))
    if eps is None:
        eps = rng.standard_normal(u.shape) * sigma_target
    noise = np.clip(eps, -clip_c, clip_c) * bounds.half
    return bounds.clamp(bounds.mid + bounds.half * u + noise)


def _critic_spec(obs_dim, act_dim, hidden):
    return MlpSpec.make(obs_dim + act_dim, 1, hidden)


class _Base:
    kind = "base"

    def __init__(self, obs_dim: int, bounds: ActionBounds, cfg, seed: int = 0):
        self.obs_dim = obs_dim
        self.bounds = bounds
        self.act_dim = bounds.dim
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.updates = 0
        init = np.random.default_rng(seed + 7919)
        self.q1 = Mlp(_critic_spec(obs_dim, self.act_dim, cfg.hidden), init)
        self.q2 = Mlp(_critic_spec(obs_dim, self.act_dim, cfg.hidden), init)
        self.q1_t, self.q2_t = self.q1.copy(), self.q2.copy()
        self.q_opt = Adam(self.q1.params + self.q2.params, cfg.critic_lr)

    def _critics_step(self, s, u, y):
        x = np.concatenate([s, u], axis=1)
        q1, t1 = self.q1.forward(x, cache=True)
        q2, t2 = self.q2.forward(x, cache=True)
        B = len(s)
        e1, e2 = q1[:, 0] - y, q2[:, 0] - y
        loss = float(np.mean(e1 * e1) + np.mean(e2 * e2))
        if not np.isfinite(loss):
            raise TrainingDivergence(self.updates, "critic loss")
        g1, _ = self.q1.backward(t1, (2.0 / B * e1)[:, None])
        g2, _ = self.q2.backward(t2, (2.0 / B * e2)[:, None])
        self.q_opt.step(g1 + g2)
        return loss

    def _q_input_grad(self, net, s, u):
        x = np.concatenate([s, u], axis=1)
        q, tape = net.forward(x, cache=True)
        _, gx = net.backward(tape, np.ones_like(q))
        return q[:, 0], gx[:, self.obs_dim:]

    def check_obs(self, s):
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.obs_dim:
            raise IncompatibleError(f"policy expects {self.obs_dim} observations, got {s.shape[-1]}")
        return s

    # checkpoint support
    def networks(self):
        raise NotImplementedError

    def optimizers(self):
        raise NotImplementedError

    def state_arrays(self):
        out = {}
        for name, net in self.networks().items():
            for k, p in enumerate(net.params):
                out[f"{name}.{k}"] = p
        for name, opt in self.optimizers().items():
            for k, (m, v) in enumerate(zip(opt.m, opt.v)):
                out[f"opt.{name}.m{k}"] = m
                out[f"opt.{name}.v{k}"] = v
        return out

    def state_meta(self):
        return {"kind": self.kind, "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "bounds": {"low": list(self.bounds.low), "high": list(self.bounds.high)},
                "config": _jsonable(asdict(self.cfg)), "updates": self.updates,
                "opt_steps": {k: o.t for k, o in self.optimizers().items()},
                "rng": self.rng.bit_generator.state,
                "specs": {k: {"widths": list(n.spec.widths), "activations": list(n.spec.activations)}
                          for k, n in self.networks().items()}}

    def load_state(self, meta, arrays):
        for name, net in self.networks().items():
            for k, p in enumerate(net.params):
                a = arrays[f"{name}.{k}"]
                if a.shape != p.shape:
                    raise IncompatibleError(f"{name} layer {k} has shape {a.shape}, expected {p.shape}")
                p[...] = a
        for name, opt in self.optimizers().items():
            n = len(opt.m)
            if f"opt.{name}.m0" in arrays:
                opt.load(meta["opt_steps"][name], [arrays[f"opt.{name}.m{k}"] for k in range(n)],
                         [arrays[f"opt.{name}.v{k}"] for k in range(n)])
        self.updates = int(meta["updates"])
        self.rng.bit_generator.state = meta["rng"]


class IncompatibleError(ValueError):
    """Checkpoint and environment disagree on shapes."""


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


class Td3Agent(_Base):
    kind = "td3"

    def __init__(self, obs_dim, bounds: ActionBounds = ActionBounds(), cfg: Td3Config = Td3Config(),
                 seed: int = 0):
        super().__init__(obs_dim, bounds, cfg, seed)
        init = np.random.default_rng(seed + 104729)
        self.actor = Mlp(MlpSpec.make(obs_dim, self.act_dim, cfg.hidden, out_act="tanh"), init)
        self.actor_t = self.actor.copy()
        self.a_opt = Adam(self.actor.params, cfg.actor_lr)

    def networks(self):
        return {"actor": self.actor, "actor_t": self.actor_t, "q1": self.q1, "q2": self.q2,
                "q1_t": self.q1_t, "q2_t": self.q2_t}

    def optimizers(self):
        return {"actor": self.a_opt, "critic": self.q_opt}

    def act(self, s, rng=None, deterministic: bool = False):
        s = self.check_obs(s)
        u = self.actor(s[None])[0]
        if not deterministic and self.cfg.exploration_sigma > 0:
            rng = rng if rng is not None else self.rng
            u = u + self.cfg.exploration_sigma * rng.standard_normal(u.shape)
        return self.bounds.to_env(np.clip(u, -1, 1))

    def update(self, batch):
        cfg, b = self.cfg, self.bounds
        s, s2 = batch["s"], batch["s2"]
        u = b.to_unit(batch["a"])
        a2 = td3_smoothed_action(self.actor_t, s2, cfg.target_sigma, cfg.target_clip, b, self.rng)
        u2 = b.to_unit(a2)
        x2 = np.concatenate([s2, u2], axis=1)
        y = td3_target(batch["r"], cfg.gamma, self.q1_t(x2)[:, 0], self.q2_t(x2)[:, 0], batch["d"])
        closs = self._critics_step(s, u, y)
        self.updates += 1
        out = {"critic_loss": closs}
        if self.updates % cfg.policy_update_interval == 0:
            ua, tape = self.actor.forward(s, cache=True)
            q, dq = self._q_input_grad(self.q1, s, ua)
            aloss = -float(np.mean(q))
            if not np.isfinite(aloss):
                raise TrainingDivergence(self.updates, "actor loss")
            grads, _ = self.actor.backward(tape, -dq / len(s))
            self.a_opt.step(grads)
            for tgt, net in ((self.actor_t, self.actor), (self.q1_t, self.q1), (self.q2_t, self.q2)):
                tgt.soft_update_from(net, cfg.tau)
            out["actor_loss"] = aloss
        return out


def _log1m_tanh2(z):
    # log(1 - tanh(z)^2) without cancellation
    return 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))


def squashed_gaussian_log_prob(z, mu, log_std):
    """log density of u = tanh(z), z ~ N(mu, exp(log_std)^2), summed over the last axis."""
    std = np.exp(log_std)
    xi = (z - mu) / std
    lp = -0.5 * xi * xi - log_std - 0.5 * math.log(2 * math.pi) - _log1m_tanh2(z)
    return lp.sum(axis=-1)


class SacAgent(_Base):
    kind = "sac"

    def __init__(self, obs_dim, bounds: ActionBounds = ActionBounds(), cfg: SacConfig = SacConfig(),
                 seed: int = 0):
        super().__init__(obs_dim, bounds, cfg, seed)
        init = np.random.default_rng(seed + 104729)
        self.actor = Mlp(MlpSpec.make(obs_dim, 2 * self.act_dim, cfg.hidden), init)
        self.log_alpha = np.array([math.log(cfg.init_alpha)])
        self.a_opt = Adam(self.actor.params, cfg.actor_lr)
        self.alpha_opt = Adam([self.log_alpha], cfg.alpha_lr)

    @property
    def target_entropy(self):
        te = self.cfg.target_entropy
        return -float(self.act_dim) if te is None else te

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha[0]))

    def networks(self):
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2, "q1_t": self.q1_t, "q2_t": self.q2_t}

    def optimizers(self):
        return {"actor": self.a_opt, "critic": self.q_opt, "alpha": self.alpha_opt}

    def state_arrays(self):
        out = super().state_arrays()
        out["log_alpha"] = self.log_alpha
        return out

    def load_state(self, meta, arrays):
        super().load_state(meta, arrays)
        self.log_alpha[...] = arrays["log_alpha"]

    def _heads(self, s, cache=False):
        res = self.actor.forward(s, cache=cache)
        out, tape = res if cache else (res, None)
        mu, raw = out[:, : self.act_dim], out[:, self.act_dim:]
        lo, hi = self.cfg.log_std_bounds
        log_std = np.clip(raw, lo, hi)
        inside = (raw > lo) & (raw < hi)
        return mu, log_std, inside, tape

    def sample(self, s, rng, xi=None):
        mu, log_std, inside, tape = self._heads(s, cache=True)
        xi = rng.standard_normal(mu.shape) if xi is None else xi
        z = mu + np.exp(log_std) * xi
        u = np.tanh(z)
        return u, squashed_gaussian_log_prob(z, mu, log_std), (mu, log_std, inside, tape, xi, z)

    def act(self, s, rng=None, deterministic: bool = False):
        s = self.check_obs(s)[None]
        if deterministic:
            mu, _, _, _ = self._heads(s)
            return self.bounds.to_env(np.tanh(mu[0]))
        u, _, _ = self.sample(s, rng if rng is not None else self.rng)
        return self.bounds.to_env(u[0])

    def update(self, batch):
        cfg, b = self.cfg, self.bounds
        s, s2 = batch["s"], batch["s2"]
        u = b.to_unit(batch["a"])
        alpha = self.alpha
        u2, lp2, _ = self.sample(s2, self.rng)
        x2 = np.concatenate([s2, u2], axis=1)
        mq = np.minimum(self.q1_t(x2)[:, 0], self.q2_t(x2)[:, 0])
        y = sac_target(batch["r"], cfg.gamma, mq, alpha, lp2, batch["d"])
        closs = self._critics_step(s, u, y)

        # actor: minimize E[alpha log pi - min Q] through u = tanh(mu + std xi)
        un, lp, (mu, log_std, inside, tape, xi, z) = self.sample(s, self.rng)
        q1, g1 = self._q_input_grad(self.q1, s, un)
        q2, g2 = self._q_input_grad(self.q2, s, un)
        use1 = (q1 <= q2)[:, None]
        dq = np.where(use1, g1, g2)
        qmin = np.minimum(q1, q2)
        aloss = float(np.mean(alpha * lp - qmin))
        if not np.isfinite(aloss):
            raise TrainingDivergence(self.updates, "actor loss")
        B = len(s)
        std = np.exp(log_std)
        dz = (1.0 - un * un)
        g_mu = (alpha * 2.0 * un - dq * dz) / B
        g_ls = (alpha * (-1.0 + 2.0 * un * std * xi) - dq * dz * std * xi) / B
        g_ls = np.where(inside, g_ls, 0.0)
        grads, _ = self.actor.backward(tape, np.concatenate([g_mu, g_ls], axis=1))
        self.a_opt.step(grads)

        # temperature: minimize -alpha * E[log pi + target entropy]
        gap = float(np.mean(lp + self.target_entropy))
        self.alpha_opt.step([np.array([-alpha * gap])])
        for tgt, net in ((self.q1_t, self.q1), (self.q2_t, self.q2)):
            tgt.soft_update_from(net, cfg.tau)
        self.updates += 1
        return {"critic_loss": closs, "actor_loss": aloss, "alpha": self.alpha}


def make_agent(kind: str, obs_dim: int, bounds: ActionBounds, cfg=None, seed: int = 0):
    if kind == "td3":
        return Td3Agent(obs_dim, bounds, cfg or Td3Config(), seed)
    if kind == "sac":
        return SacAgent(obs_dim, bounds, cfg or SacConfig(), seed)
    raise ValueError(f"unknown algorithm {kind!r}")
