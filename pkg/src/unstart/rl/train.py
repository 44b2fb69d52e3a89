"""Training loop: rollout workers feed one replay buffer, a single learner consumes it."""

from __future__ import annotations

import csv
import logging
import os
import threading
from dataclasses import asdict, dataclass

import numpy as np

from .. import binio
from .agents import ActionBounds, IncompatibleError, SacAgent, SacConfig, Td3Agent, Td3Config
from .buffer import NotReady, ReplayBuffer, Transition

log = logging.getLogger(__name__)

LOG_COLUMNS = ("update", "env_steps", "episode_return", "critic_loss", "actor_loss", "alpha")


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 50_000
    start_steps: int = 1_000  # uniform random actions before the policy takes over
    updates_per_step: float = 1.0
    buffer_capacity: int = 1_000_000
    checkpoint_every: int = 10_000  # learner updates
    reward_scale: float = 1.0
    seed: int = 0
    save_buffer: bool = False
    max_worker_restarts: int = 10


class TrainingLog:
    def __init__(self, path=None):
        self.rows = []
        self.path = path
        self._fh = None
        if path:
            self._fh = open(path, "w", newline="")
            self._w = csv.writer(self._fh)
            self._w.writerow(LOG_COLUMNS)

    def add(self, row):
        self.rows.append(row)
        if self._fh:
            self._w.writerow(["" if row.get(c) is None else repr(row[c]) if isinstance(row.get(c), float)
                              else row[c] for c in LOG_COLUMNS])

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


# checkpoints ------------------------------------------------------------------------------

def save_checkpoint(path, agent, buffer: ReplayBuffer | None = None, extra: dict | None = None,
                    include_buffer: bool = False):
    meta = agent.state_meta()
    arrays = dict(agent.state_arrays())
    if buffer is not None:
        meta["buffer"] = buffer.meta()
        if include_buffer:
            arrays.update({"buffer.s": buffer.s, "buffer.a": buffer.a, "buffer.r": buffer.r,
                           "buffer.s2": buffer.s2, "buffer.d": buffer.d})
    meta["extra"] = extra or {}
    binio.write(path, "checkpoint", meta, arrays)


def load_checkpoint(path, obs_dim: int | None = None):
    """Rebuild the agent (and buffer, if stored); checks observation compatibility."""
    meta, arrays = binio.read(path, "checkpoint")
    if obs_dim is not None and meta["obs_dim"] != obs_dim:
        raise IncompatibleError(
            f"checkpoint policy observes {meta['obs_dim']} sensors but the environment provides {obs_dim}")
    bounds = ActionBounds(tuple(meta["bounds"]["low"]), tuple(meta["bounds"]["high"]))
    cfg = dict(meta["config"])
    for k in ("hidden", "log_std_bounds"):
        if k in cfg and cfg[k] is not None:
            cfg[k] = tuple(cfg[k])
    if meta["kind"] == "td3":
        agent = Td3Agent(meta["obs_dim"], bounds, Td3Config(**cfg))
    else:
        agent = SacAgent(meta["obs_dim"], bounds, SacConfig(**cfg))
    agent.load_state(meta, arrays)
    buffer = None
    if "buffer" in meta:
        bm = meta["buffer"]
        buffer = ReplayBuffer(bm["capacity"], bm["obs_dim"], bm["act_dim"])
        buffer.inserted = bm["inserted"]
        if "buffer.s" in arrays:
            buffer.s[...] = arrays["buffer.s"]
            buffer.a[...] = arrays["buffer.a"]
            buffer.r[...] = arrays["buffer.r"]
            buffer.s2[...] = arrays["buffer.s2"]
            buffer.d[...] = arrays["buffer.d"]
    return agent, buffer, meta


# rollout ------------------------------------------------------------------------------------

class _Worker:
    """Runs one environment; exceptions restart the environment."""

    def __init__(self, wid, env_factory, policy_snapshot, buffer, cfg, rng):
        self.wid = wid
        self.env_factory = env_factory
        self.env = env_factory(wid)
        self.snapshot = policy_snapshot
        self.buffer = buffer
        self.cfg = cfg
        self.rng = rng
        self.obs = None
        self.ep_return = 0.0
        self.returns = []
        self.failures = 0
        self.policy = None

    def restart(self, err):
        self.failures += 1
        log.warning("worker %d failed (%s); restarting", self.wid, err)
        if self.failures > self.cfg.max_worker_restarts:
            raise RuntimeError(f"worker {self.wid} exceeded its restart budget") from err
        self.env = self.env_factory(self.wid)
        self.obs = None

    def step(self, global_steps: int):
        if self.obs is None:
            self.obs = self.env.reset(int(self.rng.integers(2**31)))
            self.ep_return = 0.0
            self.policy = self.snapshot()  # parameters refreshed per episode
        if global_steps < self.cfg.start_steps:
            b = self.env.bounds
            a = self.rng.uniform(b.low, b.high)
        else:
            a = self.policy(self.obs, self.rng)
        res = self.env.step(a)
        self.buffer.push(Transition(self.obs, a, res.reward * self.cfg.reward_scale, res.observation,
                                    res.terminated))
        self.ep_return += res.reward
        self.obs = res.observation
        if res.terminated or res.truncated:
            self.returns.append(self.ep_return)
            self.obs = None
            return self.ep_return
        return None


def _policy_snapshot_fn(agent, lock):
    def snapshot():
        with lock:
            actor = agent.actor.copy()
        clone = agent.__class__.__new__(agent.__class__)
        clone.__dict__.update(agent.__dict__)
        clone.actor = actor
        return lambda s, rng: clone.act(s, rng)
    return snapshot


def train(agent, env_factory, n_envs: int, cfg: TrainConfig, log_path=None, checkpoint_dir=None,
          buffer: ReplayBuffer | None = None, callback=None):
    """Collect ``cfg.total_steps`` environment steps and learn from them.

    With one environment the loop is lockstep and fully deterministic. With
    several, workers run in threads and the learner trains concurrently.
    """
    env0 = env_factory(0)
    if env0.obs_dim != agent.obs_dim:
        raise IncompatibleError(f"agent observes {agent.obs_dim}, environment provides {env0.obs_dim}")
    buffer = buffer or ReplayBuffer(cfg.buffer_capacity, agent.obs_dim, agent.act_dim)
    tlog = TrainingLog(log_path)
    lock = threading.Lock()
    snapshot = _policy_snapshot_fn(agent, lock)
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_envs + 1)
    learn_rng = np.random.default_rng(seeds[-1])
    factories = [env_factory] * n_envs
    workers = []
    for w in range(n_envs):
        workers.append(_Worker(w, factories[w], snapshot, buffer, cfg, np.random.default_rng(seeds[w])))
    workers[0].env = env0
    checkpoints = []
    last_return = [None]
    state = {"steps": buffer.inserted, "owed": 0.0}

    def learn_once():
        try:
            batch = buffer.sample(agent.cfg.batch_size, learn_rng)
        except NotReady:
            return False
        with lock:
            losses = agent.update(batch)
        tlog.add({"update": agent.updates, "env_steps": buffer.inserted,
                  "episode_return": last_return[0], "critic_loss": losses.get("critic_loss"),
                  "actor_loss": losses.get("actor_loss"), "alpha": losses.get("alpha")})
        if checkpoint_dir and agent.updates % cfg.checkpoint_every == 0:
            path = os.path.join(checkpoint_dir, f"ckpt_{agent.updates:08d}.bin")
            save_checkpoint(path, agent, buffer, {"env_steps": buffer.inserted,
                                                  "learn_rng": learn_rng.bit_generator.state},
                            cfg.save_buffer)
            checkpoints.append(path)
        return True

    try:
        if n_envs == 1:
            w = workers[0]
            while state["steps"] < cfg.total_steps:
                try:
                    ret = w.step(state["steps"])
                except Exception as err:  # noqa: BLE001 - restart the environment and go on
                    w.restart(err)
                    continue
                state["steps"] += 1
                if ret is not None:
                    last_return[0] = ret
                    if callback:
                        callback(state["steps"], ret, agent)
                state["owed"] += cfg.updates_per_step
                while state["owed"] >= 1.0:
                    state["owed"] -= 1.0
                    learn_once()
        else:
            stop = threading.Event()
            counter = threading.Lock()

            def run(w):
                while not stop.is_set():
                    with counter:
                        if state["steps"] >= cfg.total_steps:
                            return
                        state["steps"] += 1
                        k = state["steps"]
                    try:
                        ret = w.step(k)
                    except Exception as err:  # noqa: BLE001
                        try:
                            w.restart(err)
                        except RuntimeError:
                            stop.set()
                            raise
                        continue
                    if ret is not None:
                        last_return[0] = ret

            threads = [threading.Thread(target=run, args=(w,), daemon=True) for w in workers]
            for t in threads:
                t.start()
            done_updates = 0
            while any(t.is_alive() for t in threads) or done_updates < buffer.inserted * cfg.updates_per_step:
                if done_updates < buffer.inserted * cfg.updates_per_step:
                    if learn_once():
                        done_updates += 1
                    else:
                        threading.Event().wait(0.001)
                else:
                    threading.Event().wait(0.001)
                if not any(t.is_alive() for t in threads) and buffer.inserted == 0:
                    break
            stop.set()
            for t in threads:
                t.join()
    finally:
        tlog.close()
    if checkpoint_dir:
        path = os.path.join(checkpoint_dir, "final.bin")
        save_checkpoint(path, agent, buffer, {"env_steps": buffer.inserted,
                                              "learn_rng": learn_rng.bit_generator.state}, cfg.save_buffer)
        checkpoints.append(path)
    returns = [r for w in workers for r in w.returns]
    return {"log": tlog.rows, "checkpoints": checkpoints, "buffer": buffer, "returns": returns,
            "learn_rng": learn_rng}


def infer(agent, env, deterministic: bool = True, seed: int = 0, csv_path=None):
    """One episode without learning; returns the per-step rows."""
    if env.obs_dim != agent.obs_dim:
        raise IncompatibleError(
            f"policy observes {agent.obs_dim} sensors but the environment provides {env.obs_dim}")
    rng = np.random.default_rng(seed)
    obs = env.reset(seed)
    rows, t = [], 0
    done = getattr(env, "_done", False)
    while not done:
        a = agent.act(obs, rng, deterministic=deterministic)
        res = env.step(a)
        t += 1
        rows.append({"step": t, "action": a, "reward": res.reward, "info": res.info})
        obs = res.observation
        done = res.terminated or res.truncated
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "lambda_b", "lambda_s1", "lambda_s2", "beta_rad", "reward"])
            for r in rows:
                w.writerow([r["step"], *[repr(float(v)) for v in r["action"]], repr(float(r["reward"]))])
    return rows
