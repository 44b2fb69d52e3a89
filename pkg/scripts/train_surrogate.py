"""Train TD3 and SAC on the surrogate intake over a few seeds and report normalized scores."""

import argparse
import time

import numpy as np

from unstart.rl.agents import SacConfig, Td3Config, make_agent
from unstart.rl.train import TrainConfig, train
from unstart.surrogate import (SurrogateConfig, SurrogateEnv, episode_return, normalized_score,
                               reference_returns)

SMALL = dict(hidden=(64, 64), batch_size=64, actor_lr=1e-3, critic_lr=1e-3)


def score(algo, seed, steps, tr):
    env = SurrogateEnv(SurrogateConfig(tr=tr))
    cfg = Td3Config(**SMALL) if algo == "td3" else SacConfig(alpha_lr=1e-3, **SMALL)
    agent = make_agent(algo, env.obs_dim, env.bounds, cfg, seed)
    train(agent, lambda w: SurrogateEnv(SurrogateConfig(tr=tr, seed=seed + w)), 1,
          TrainConfig(total_steps=steps, start_steps=1000, seed=seed, reward_scale=0.01))
    policy = lambda o: agent.act(o, None, deterministic=True)
    return float(np.mean([episode_return(env, policy, s) for s in (0, 1, 2)]))


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--algo", nargs="+", default=["td3", "sac"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--tr", type=float, default=40.0)
    args = ap.parse_args()

    r0, r_opt, a_opt = reference_returns(SurrogateEnv(SurrogateConfig(tr=args.tr)))
    print(f"zero-action return {r0:.2f}, scripted optimum {r_opt:.2f} at {np.round(a_opt, 3)}")
    for algo in args.algo:
        scores = []
        for seed in args.seeds:
            t0 = time.perf_counter()
            ret = score(algo, seed, args.steps, args.tr)
            scores.append(normalized_score(ret, r0, r_opt))
            print(f"{algo} seed {seed}: return {ret:.2f} score {scores[-1]:.3f} ({time.perf_counter() - t0:.0f} s)")
        print(f"{algo} median score {np.median(scores):.3f}")
