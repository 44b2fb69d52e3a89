"""Control environment around the inlet case: observations, reward, reset/step protocol."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .dg.reference import ConfigurationError
from .inlet import GROUPS, InletCase, JetCommand, SolverAbort, advance
from .rl.agents import ActionBounds


class ProtocolError(RuntimeError):
    pass


def reward_terms(p, baseline, power, flux_change, dt, *, p_inf=900.0, w_p=0.005, w_r=0.05,
                 p_max=1.0, q_max=1.0):
    """The three (non-positive) reward components: pressure, power and rate penalties."""
    p = np.asarray(p, dtype=float)
    b = np.asarray(baseline, dtype=float)
    if p.shape != b.shape:
        raise ConfigurationError(f"pressure vector {p.shape} and baseline {b.shape} differ")
    if np.any(b == 0):
        raise ConfigurationError("baseline has zero entries")
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    rel = (p / p_inf - b / p_inf) / (b / p_inf)
    r_p = -float(np.dot(rel, rel))
    r_pow = -w_p * (power / p_max) ** 2
    r_rate = -w_r * (abs(flux_change) / (q_max * dt))
    return r_p, r_pow, r_rate


def reward(p, baseline, power, flux_change, dt, **kw) -> float:
    return float(sum(reward_terms(p, baseline, power, flux_change, dt, **kw)))


def inject_noise(p, delta_pct: float, rng: np.random.Generator, z=None):
    """p * (1 + delta/100 * z) with z standard normal; delta = 0 returns p untouched."""
    if delta_pct < 0:
        raise ConfigurationError("noise intensity must be non-negative")
    p = np.asarray(p, dtype=float)
    if delta_pct == 0:
        return p
    z = rng.standard_normal(p.shape) if z is None else np.asarray(z, dtype=float)
    return p * (1.0 + delta_pct / 100.0 * z)


@dataclass(frozen=True)
class EnvConfig:
    control_interval: float = 20e-6
    episode_duration: float = 2e-3
    tr: float = 40.0
    noise_pct: float = 0.0
    w_p: float = 0.005
    w_r: float = 0.05
    gamma: float = 0.99
    bounds: ActionBounds = field(default_factory=ActionBounds)
    seed: int = 0
    failure_penalty: float = -1e4
    rate_time_ref: float | None = None  # time unit of the rate penalty; default one interval

    def __post_init__(self):
        if not self.control_interval > 0:
            raise ConfigurationError("control_interval must be positive")
        if self.noise_pct < 0 or self.w_p < 0 or self.w_r < 0:
            raise ConfigurationError("noise and weights must be non-negative")
        if not self.episode_duration >= 0:
            raise ConfigurationError("episode_duration must be non-negative")

    @property
    def rate_dt(self):
        ref = self.rate_time_ref or self.control_interval
        return self.control_interval / ref

    @property
    def n_steps(self):
        return int(round(self.episode_duration / self.control_interval))


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict


LOG_COLUMNS = ("time_s", "lambda_b", "lambda_s1", "lambda_s2", "beta_rad", "reward",
               "r_pressure", "r_power", "r_rate", "p1_over_pinf", "p2_over_pinf", "exit_mass_flow_kg_s_m")


def write_episode_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in LOG_COLUMNS])


def command_from_action(a) -> JetCommand:
    """Blowing and suction are tied by the mass balance, so one without the other is dropped."""
    lb, ls1, ls2, beta = (float(v) for v in a)
    if lb <= 0 or (ls1 <= 0 and ls2 <= 0):
        lb = ls1 = ls2 = 0.0
    return JetCommand(lb, max(ls1, 0.0), max(ls2, 0.0), beta)


def jet_normalizers(case: InletCase, bounds: ActionBounds):
    """P_max and Q_max at the upper actuator bounds with freestream density."""
    rho, u = case.freestream.rho, case.freestream.speed
    lam = dict(zip(GROUPS, bounds.high[:3]))
    q = {g: rho * case.geometry.group_area(g) * lam[g] * u for g in GROUPS}
    p = sum(0.5 * q[g] ** 3 / (rho**2 * case.geometry.group_area(g) ** 2) for g in GROUPS if q[g] > 0)
    return p, sum(q.values())


# snapshots ------------------------------------------------------------------------------

def save_snapshot(path, case: InletCase, U, t: float, extra: dict | None = None):
    leaves = [list(l) for l in case.solver.mesh.leaves]
    meta = {"t": t, "order": case.solver.order, "tr": case.geometry.throttle_ratio,
            "leaves": leaves, **(extra or {})}
    binio.write(path, "snapshot", meta, {"U": U})


def load_snapshot(path, case: InletCase):
    meta, arrays = binio.read(path, "snapshot")
    if meta["order"] != case.solver.order or [list(l) for l in case.solver.mesh.leaves] != meta["leaves"]:
        raise ConfigurationError(f"{path}: snapshot mesh/order does not match the case")
    return arrays["U"], float(meta["t"])


class InletEnv:
    """One throttled transient per episode, starting from a warm-start snapshot."""

    def __init__(self, case: InletCase, cfg: EnvConfig, baseline, warm_start=None, cfl=None):
        self.case = case
        self.cfg = cfg
        self.cfl = cfl
        b = np.asarray(baseline, dtype=float) if baseline is not None else None
        if b is None or warm_start is None:
            raise ConfigurationError("the environment needs a baseline and a warm-start snapshot")
        if b.shape != (case.probes.count,):
            raise ConfigurationError(f"baseline has {b.size} entries for {case.probes.count} sensors")
        if np.any(b == 0):
            raise ConfigurationError("baseline has zero entries")
        self.baseline = b
        self.warm_U, self.warm_t = warm_start
        self.p_max, self.q_max = jet_normalizers(case, cfg.bounds)
        self.bounds = cfg.bounds
        self.obs_dim = case.probes.count
        self._done = True
        self.rng = np.random.default_rng(cfg.seed)
        self.log = []

    def _observe(self, U):
        p = self.case.sample_wall_pressures(U)
        return inject_noise(p, self.cfg.noise_pct, self.rng) / self.case.freestream.p_inf, p

    def reset(self, seed: int | None = None):
        self.rng = np.random.default_rng(self.cfg.seed if seed is None else seed)
        self.U = self.warm_U.copy()
        self.t = self.warm_t
        self.t0 = self.warm_t
        self.k = 0
        self.prev_q = 0.0
        self.case.actuation.apply(JetCommand(), 0.0, 0.0)
        self._done = self.cfg.n_steps == 0
        self.log = []
        obs, _ = self._observe(self.U)
        self.last_obs = obs
        return obs

    def step(self, action) -> StepResult:
        if self._done:
            raise ProtocolError("step called on a finished episode; call reset first")
        cfg = self.cfg
        a = self.bounds.clamp(np.asarray(action, dtype=float))
        cmd = command_from_action(a)
        act = self.case.actuation
        rho_s = self.case.suction_densities(self.U) if cmd.active else (0.0, 0.0)
        act.apply(cmd, *rho_s)
        flows = act.mass_flows()
        q_total = sum(flows.values())
        balance = (abs(flows["blow"] - flows["suction1"] - flows["suction2"]) / flows["blow"]
                   if flows["blow"] > 0 else 0.0)
        power = act.kinetic_power()
        t_target = self.t0 + (self.k + 1) * cfg.control_interval
        truncated = False
        try:
            self.U, self.t, _ = advance(self.case, self.U, self.t, t_target, self.cfl)
        except SolverAbort as err:
            truncated = True
            failure = str(err)
        self.k += 1
        terminated = self.k >= cfg.n_steps
        self._done = terminated or truncated
        if truncated:
            r, terms, obs = cfg.failure_penalty, (cfg.failure_penalty, 0.0, 0.0), self.last_obs
            p1 = p2 = mexit = float("nan")
            info = {"failure": failure}
        else:
            obs, p = self._observe(self.U)
            terms = reward_terms(p, self.baseline, power, q_total - self.prev_q, cfg.rate_dt,
                                 p_inf=self.case.freestream.p_inf, w_p=cfg.w_p, w_r=cfg.w_r,
                                 p_max=self.p_max, q_max=self.q_max)
            r = float(sum(terms))
            p1, p2 = self.case.probe_pressures(self.U) / self.case.freestream.p_inf
            mexit = self.case.exit_mass_flow(self.U)
            info = {}
        self.prev_q = q_total
        self.last_obs = obs
        info.update({"exit_mass_flow": mexit, "power": power, "flux": q_total, "balance": balance,
                     "p1": p1, "p2": p2, "mass_flows": flows, "t": self.t})
        self.log.append({"time_s": self.t, "lambda_b": cmd.lambda_b, "lambda_s1": cmd.lambda_s1,
                         "lambda_s2": cmd.lambda_s2, "beta_rad": cmd.beta, "reward": r,
                         "r_pressure": terms[0], "r_power": terms[1], "r_rate": terms[2],
                         "p1_over_pinf": p1, "p2_over_pinf": p2, "exit_mass_flow_kg_s_m": mexit})
        return StepResult(obs, r, terminated, truncated, info)
