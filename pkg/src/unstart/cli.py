"""Command-line entry point: simulate, baseline, train, infer, sensors, convergence.

Precedence: built-in defaults < config file < command-line flags. Every run
gets its own output directory with a manifest written before any work starts
and rewritten when the run ends, whether it succeeded or not.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dg.reference import ConfigurationError

log = logging.getLogger("unstart")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INCOMPATIBLE = 0, 2, 3, 4
COMMANDS = ("simulate", "baseline", "train", "infer", "sensors", "convergence")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _code_version():
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Manifest:
    def __init__(self, out_dir: Path, command: str, config_path, config_hash: str, seed: int):
        self.path = out_dir / "manifest.json"
        self.doc = {"command": command, "config_path": str(config_path) if config_path else None,
                    "config_sha256": config_hash, "seed": seed, "code_version": _code_version(),
                    "started": _now(), "finished": None, "out_dir": str(out_dir),
                    "status": "running", "outputs": []}
        self.write()

    def output(self, path):
        self.doc["outputs"].append(os.path.relpath(path, self.path.parent))

    def finish(self, status: str, **extra):
        self.doc.update(status=status, finished=_now(), **extra)
        self.write()

    def write(self):
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.doc, indent=2))
        os.replace(tmp, self.path)


# helpers ----------------------------------------------------------------------------------

def _csv_writer(path, header):
    fh = open(path, "w", newline="")
    w = csv.writer(fh)
    w.writerow(header)
    return fh, w


def _f(x):
    return repr(float(x))


def sensor_hash(probes) -> str:
    data = np.ascontiguousarray(np.asarray(probes.sensors, dtype="<f8")).tobytes()
    return hashlib.sha256(data).hexdigest()


def write_field(path, case, U):
    """Point cloud of Mach number and Q-criterion at every solution node."""
    X = case.solver.X
    x = X[:, 0].ravel()
    y = X[:, 1].ravel()
    mach = case.mach_field(U).ravel()
    q = case.q_field(U).ravel()
    fh, w = _csv_writer(path, ["x_m", "y_m", "mach", "q_criterion_1_per_s2"])
    with fh:
        for row in zip(x, y, mach, q):
            w.writerow([_f(v) for v in row])


def load_baseline(path, probes):
    doc = json.loads(Path(path).read_text())
    if doc.get("sensor_hash") != sensor_hash(probes):
        raise ConfigurationError(f"{path}: baseline was recorded for a different sensor set")
    return np.asarray(doc["pressure_pa"], dtype=float)


# commands -----------------------------------------------------------------------------------

def cmd_simulate(cfg, out: Path, man: Manifest):
    from .config import build_case
    from .env import load_snapshot, save_snapshot
    from .inlet import SolverAbort, advance, unstart_onset
    from .sensors import SnapshotMatrix, write_snapshot_csv
    sim = cfg.simulate
    case = build_case(cfg.case)
    cfl = cfg.case.solver.cfl
    if sim.initial_file:
        U, t = load_snapshot(sim.initial_file, case)
    else:
        U, t = case.U0, 0.0
    t0 = t
    t_end = t0 + sim.duration
    p_inf = case.freestream.p_inf
    probe_path = out / "probes.csv"
    man.output(probe_path)
    fields = out / "fields"
    fields.mkdir(exist_ok=True)
    ts, p2s, sensor_rows = [], [], []
    next_field = t0 if sim.field_every else None
    warm_pending = sim.warm_start_time is not None
    status, failure = "ok", None
    fh, w = _csv_writer(probe_path, ["t_s", "p1_over_pinf", "p2_over_pinf", "exit_mass_flow_kg_s_m"])

    def record(U, t):
        p1, p2 = case.probe_pressures(U) / p_inf
        w.writerow([_f(t), _f(p1), _f(p2), _f(case.exit_mass_flow(U))])
        fh.flush()
        ts.append(t)
        p2s.append(p2)
        sensor_rows.append(case.sample_wall_pressures(U) / p_inf)

    try:
        record(U, t)
        k = 0
        while t < t_end - 1e-15:
            t_next = min(t0 + (k + 1) * sim.probe_every, t_end)
            if warm_pending and t < sim.warm_start_time < t_next:
                t_next = sim.warm_start_time
            U, t, _ = advance(case, U, t, t_next, cfl)
            if abs(t - (t0 + (k + 1) * sim.probe_every)) < 1e-15 or t >= t_end - 1e-15:
                k += 1
                record(U, t)
            if warm_pending and t >= sim.warm_start_time - 1e-15:
                path = out / "warm_start.bin"
                save_snapshot(path, case, U, t)
                man.output(path)
                warm_pending = False
            if next_field is not None and t >= next_field - 1e-15:
                path = fields / f"field_{len(list(fields.iterdir())):05d}.csv"
                write_field(path, case, U)
                man.output(path)
                next_field += sim.field_every
    except SolverAbort as err:
        status, failure = "solver_failure", str(err)
        log.error("%s", err)
    finally:
        fh.close()
    final = out / "final_state.bin"
    save_snapshot(final, case, U, t)
    man.output(final)
    snap_path = out / "sensor_snapshots.csv"
    write_snapshot_csv(snap_path, SnapshotMatrix(np.array(sensor_rows).T, None, np.array(ts)))
    man.output(snap_path)
    onset, ratio = unstart_onset(ts, p2s, sim.unstart_threshold)
    summary = {"tr": case.geometry.throttle_ratio, "t_end": t, "unstart_onset_s": onset,
               "max_jump_ratio": ratio, "unstarted": onset is not None}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    man.output(out / "summary.json")
    if failure:
        man.finish(status, failure=failure)
        return EXIT_SOLVER
    man.finish(status)
    return EXIT_OK


def cmd_baseline(cfg, out: Path, man: Manifest):
    from .config import build_case
    from .env import save_snapshot
    from .inlet import SolverAbort, run_baseline
    b = cfg.baseline
    case = build_case(cfg.case, tr=0.0)
    try:
        p, U, t = run_baseline(case, b.duration, b.window, b.sample_every, cfl=cfg.case.solver.cfl)
    except SolverAbort as err:
        man.finish("solver_failure", failure=str(err))
        return EXIT_SOLVER
    doc = {"pressure_pa": [float(v) for v in p], "p_inf_pa": case.freestream.p_inf,
           "n_sensors": int(p.size), "sensor_hash": sensor_hash(case.probes),
           "window_s": b.window, "duration_s": b.duration}
    path = out / "baseline.json"
    path.write_text(json.dumps(doc, indent=2))
    man.output(path)
    state = out / "baseline_state.bin"
    save_snapshot(state, case, U, t)
    man.output(state)
    man.finish("ok", min_over_pinf=float(p.min() / case.freestream.p_inf))
    return EXIT_OK


def _toy_env_factory(cfg):
    from .surrogate import SurrogateEnv
    sc = dataclasses.replace(cfg.train.surrogate, bounds=cfg.env.bounds)
    return lambda wid: SurrogateEnv(dataclasses.replace(sc, seed=sc.seed + wid))


def _cfd_env_factory(cfg):
    from .config import build_case
    from .env import EnvConfig, InletEnv, load_snapshot
    es = cfg.env
    if not es.baseline_file or not es.warm_start_file:
        raise ConfigurationError("env.baseline_file and env.warm_start_file are required for CFD training")

    def factory(wid):
        case = build_case(cfg.case)
        baseline = load_baseline(es.baseline_file, case.probes)
        warm = load_snapshot(es.warm_start_file, case)
        ecfg = EnvConfig(es.control_interval, es.episode_duration, case.geometry.throttle_ratio,
                         es.noise_pct, es.w_p, es.w_r, es.gamma, es.bounds, cfg.seed + wid,
                         es.failure_penalty)
        return InletEnv(case, ecfg, baseline, warm, cfg.case.solver.cfl)
    return factory


def cmd_train(cfg, out: Path, man: Manifest, toy: bool):
    from .rl.agents import make_agent
    from .rl.train import train
    ts = cfg.train
    factory = _toy_env_factory(cfg) if toy else _cfd_env_factory(cfg)
    env0 = factory(0)
    algo_cfg = ts.td3 if ts.algo == "td3" else ts.sac
    agent = make_agent(ts.algo, env0.obs_dim, env0.bounds, algo_cfg, cfg.seed)
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    run = dataclasses.replace(ts.run, seed=cfg.seed)
    log_path = out / "training_log.csv"
    man.output(log_path)
    res = train(agent, factory, ts.n_envs, run, log_path, str(ckpt))
    for p in res["checkpoints"]:
        man.output(p)
    summary = {"algo": ts.algo, "updates": agent.updates, "env_steps": res["buffer"].inserted,
               "episodes": len(res["returns"]),
               "last_returns": [float(r) for r in res["returns"][-10:]]}
    if toy:
        from .surrogate import episode_return, normalized_score, reference_returns
        r0, r_opt, _ = reference_returns(env0)
        ret = float(np.mean([episode_return(env0, lambda o: agent.act(o, None, deterministic=True), s)
                             for s in (0, 1, 2)]))
        summary.update(eval_return=ret, zero_action_return=r0, scripted_optimal_return=r_opt,
                       normalized_score=normalized_score(ret, r0, r_opt))
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    man.output(out / "summary.json")
    man.finish("ok")
    return EXIT_OK


ACTION_REWARD_COLUMNS = ("t_s", "lambda_b", "lambda_s1", "lambda_s2", "beta_rad", "reward")


def cmd_infer(cfg, out: Path, man: Manifest, toy: bool, checkpoint):
    from .env import LOG_COLUMNS, write_episode_csv
    from .rl.train import load_checkpoint
    if not checkpoint:
        raise ConfigurationError("infer needs --checkpoint")
    factory = _toy_env_factory(cfg) if toy else _cfd_env_factory(cfg)
    env = factory(0)
    agent, _, meta = load_checkpoint(checkpoint, obs_dim=env.obs_dim)
    rng = np.random.default_rng(cfg.seed)
    obs = env.reset(cfg.seed)
    rows = []
    done = env._done
    k = 0
    while not done:
        a = agent.act(obs, rng, deterministic=True)
        res = env.step(a)
        k += 1
        obs = res.observation
        done = res.terminated or res.truncated
        if toy:
            terms = res.info["terms"]
            rows.append({"time_s": float(k), "lambda_b": a[0], "lambda_s1": a[1], "lambda_s2": a[2],
                         "beta_rad": a[3], "reward": res.reward, "r_pressure": terms[0],
                         "r_power": terms[1], "r_rate": terms[2], "p1_over_pinf": float("nan"),
                         "p2_over_pinf": float("nan"), "exit_mass_flow_kg_s_m": float("nan")})
    if not toy:
        rows = env.log
    ep = out / "episode.csv"
    write_episode_csv(ep, rows)
    man.output(ep)
    sc = out / "action_reward.csv"
    fh, w = _csv_writer(sc, ACTION_REWARD_COLUMNS)
    with fh:
        for r in rows:
            w.writerow([_f(r[c if c != "t_s" else "time_s"]) for c in ACTION_REWARD_COLUMNS])
    man.output(sc)
    assert set(ACTION_REWARD_COLUMNS[1:]) <= set(LOG_COLUMNS)
    total = float(sum(r["reward"] for r in rows))
    man.finish("ok", episode_return=total, steps=len(rows), checkpoint=str(checkpoint),
               checkpoint_kind=meta["kind"])
    return EXIT_OK


def cmd_sensors(cfg, out: Path, man: Manifest):
    from .sensors import read_snapshot_csv, select_sensors, selection_json
    sc = cfg.sensors
    if not sc.snapshot_file:
        raise ConfigurationError("sensors needs a snapshot file (sensors.snapshot_file or --snapshots)")
    snap = read_snapshot_csv(sc.snapshot_file, sc.coords_file)
    if sc.window is not None:
        snap = snap.window(*sc.window)
    summary = out / "sensors_summary.csv"
    fh, w = _csv_writer(summary, ["r", "reconstruction_rms", "file"])
    with fh:
        for r in sc.r:
            sel = select_sensors(snap, int(r), sc.center)
            path = out / f"sensors_r{int(r):03d}.json"
            path.write_text(selection_json(sel, snap.coords))
            man.output(path)
            w.writerow([int(r), _f(sel.reconstruction_rms), path.name])
    man.output(summary)
    man.finish("ok")
    return EXIT_OK


def cmd_convergence(cfg, out: Path, man: Manifest):
    cc = cfg.convergence
    if cc.mode == "vortex":
        from .verification import vortex_convergence
        path = out / "convergence.csv"
        rows, fits = vortex_convergence(cc.orders, cc.meshes, cc.final_time, cc.safety, cc.background_speed)
        fh, w = _csv_writer(path, ["order", "trees_per_side", "h", "l2_density_error"])
        with fh:
            for p, n, h, e in rows:
                w.writerow([p, n, _f(h), _f(e)])
        fits = {str(k): v for k, v in fits.items()}
        man.output(path)
        (out / "orders.json").write_text(json.dumps(fits, indent=2))
        man.output(out / "orders.json")
        man.finish("ok", fitted_orders=fits)
        return EXIT_OK
    if cc.mode == "inlet":
        from .config import build_case
        from .inlet import SolverAbort, advance
        p_inf = cfg.case.freestream.p_inf
        path = out / "probe_traces.csv"
        fh, w = _csv_writer(path, ["order", "t_s", "p1_over_pinf", "p2_over_pinf"])
        failure = None
        with fh:
            for p in cc.inlet_orders:
                case = build_case(cfg.case, order=int(p))
                U, t = case.U0, 0.0
                n = max(1, int(round(cc.inlet_duration / cfg.simulate.probe_every)))
                try:
                    for k in range(n + 1):
                        if k:
                            U, t, _ = advance(case, U, t, k * cc.inlet_duration / n, cfg.case.solver.cfl)
                        p1, p2 = case.probe_pressures(U) / p_inf
                        w.writerow([p, _f(t), _f(p1), _f(p2)])
                except SolverAbort as err:
                    failure = f"p={p}: {err}"
                    break
        man.output(path)
        if failure:
            man.finish("solver_failure", failure=failure)
            return EXIT_SOLVER
        man.finish("ok")
        return EXIT_OK
    raise ConfigurationError(f"unknown convergence mode {cc.mode!r}")


# argument handling ------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="unstart", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tr", type=float, help="throttling ratio in percent")
        sp.add_argument("--noise-pct", type=float, help="sensor noise intensity delta in percent")
        sp.add_argument("--re-unit", type=float, help="unit Reynolds number (1/m); rescales viscosity only")
        sp.add_argument("--algo", choices=("td3", "sac"))
        sp.add_argument("--checkpoint")
        sp.add_argument("--out-dir", default=None)
        sp.add_argument("--toy-env", action="store_true", help="use the built-in surrogate instead of CFD")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set train.run.total_steps=500")
        if name == "sensors":
            sp.add_argument("--snapshots")
            sp.add_argument("--coords")
            sp.add_argument("--r", help="comma-separated sensor counts")
    return ap


def _overrides(args):
    import yaml
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = yaml.safe_load(v)
    flag_map = {"seed": ["seed"], "tr": ["case.geometry.throttle_ratio", "train.surrogate.tr"],
                "noise_pct": ["env.noise_pct", "train.surrogate.noise_pct"],
                "re_unit": ["case.freestream.re_unit"], "algo": ["train.algo"],
                "snapshots": ["sensors.snapshot_file"], "coords": ["sensors.coords_file"]}
    for flag, keys in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            for k in keys:
                ov[k] = v
    if getattr(args, "r", None):
        try:
            ov["sensors.r"] = [int(x) for x in args.r.split(",") if x.strip()]
        except ValueError:
            raise ConfigurationError(f"--r expects integers, got {args.r!r}") from None
    return ov


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    from .config import load_config, to_dict
    from .inlet import SolverAbort
    from .rl.agents import IncompatibleError
    from .sensors import SnapshotParseError
    try:
        cfg, _, digest = load_config(args.config, _overrides(args))
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    out = Path(args.out_dir or f"runs/{args.command}-{stamp}")
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out, args.command, args.config, digest, cfg.seed)
    (out / "resolved_config.json").write_text(json.dumps(to_dict(cfg), indent=2))
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, out, man)
        if args.command == "baseline":
            return cmd_baseline(cfg, out, man)
        if args.command == "train":
            return cmd_train(cfg, out, man, args.toy_env)
        if args.command == "infer":
            return cmd_infer(cfg, out, man, args.toy_env, args.checkpoint)
        if args.command == "sensors":
            return cmd_sensors(cfg, out, man)
        return cmd_convergence(cfg, out, man)
    except (ConfigurationError, SnapshotParseError, OSError) as err:
        man.finish("config_error", failure=str(err))
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except IncompatibleError as err:
        man.finish("incompatible", failure=str(err))
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except SolverAbort as err:
        man.finish("solver_failure", failure=str(err))
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except BaseException as err:
        man.finish("failed", failure=f"{type(err).__name__}: {err}")
        raise


if __name__ == "__main__":
    sys.exit(main())
