import math
import threading

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from unstart.rl.agents import (ActionBounds, IncompatibleError, SacAgent, SacConfig, Td3Agent, Td3Config,
                               make_agent, sac_target, squashed_gaussian_log_prob, td3_smoothed_action,
                               td3_target)
from unstart.rl.buffer import ContractError, NotReady, ReplayBuffer, Transition
from unstart.rl.nn import Adam, Mlp, MlpSpec, check_gradients
from unstart.rl.train import TrainConfig, load_checkpoint, save_checkpoint, train
from unstart.surrogate import SurrogateConfig, SurrogateEnv

SMALL = dict(hidden=(32, 32), batch_size=32)


@pytest.mark.parametrize("act", ["relu", "tanh", "softplus"])
def test_backprop_matches_finite_differences(act):
    rng = np.random.default_rng(0)
    net = Mlp(MlpSpec.make(5, 3, (8, 7), hidden_act=act, out_act="tanh"), rng)
    x = rng.standard_normal((4, 5))
    assert check_gradients(net, x, rng) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    net = Mlp(MlpSpec.make(3, 1, (6,), hidden_act="tanh"), rng)
    x = rng.standard_normal((2, 3))
    _, tape = net.forward(x, cache=True)
    _, gx = net.backward(tape, np.ones((2, 1)))
    eps = 1e-6
    for i in range(3):
        d = np.zeros_like(x)
        d[:, i] = eps
        num = (net.forward(x + d) - net.forward(x - d))[:, 0] / (2 * eps)
        np.testing.assert_allclose(gx[:, i], num, rtol=1e-5, atol=1e-8)


@given(st.floats(0.0, 1.0), st.integers(0, 1000))
def test_soft_update_is_convex_combination(tau, seed):
    rng = np.random.default_rng(seed)
    spec = MlpSpec.make(3, 2, (4,))
    online, target = Mlp(spec, rng), Mlp(spec, rng)
    before = [p.copy() for p in target.params]
    target.soft_update_from(online, tau)
    for b, o, t in zip(before, online.params, target.params):
        np.testing.assert_allclose(t, tau * o + (1 - tau) * b, rtol=1e-12, atol=1e-15)


def test_adam_minimises_quadratic():
    x = np.array([3.0, -2.0])
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.step([2 * x])
    assert np.abs(x).max() < 1e-2


def test_td3_target_oracle():
    assert td3_target(1.0, 0.9, 5.0, 3.0, False) == pytest.approx(1 + 0.9 * 3)
    assert td3_target(1.0, 0.9, 5.0, 3.0, True) == pytest.approx(1.0)


def test_sac_target_oracle():
    assert sac_target(1.0, 0.5, 2.0, 0.2, -1.0, False) == pytest.approx(1 + 0.5 * (2 + 0.2))
    assert sac_target(1.0, 0.5, 2.0, 0.2, -1.0, True) == pytest.approx(1.0)


def test_smoothed_action_clips_noise_and_bounds():
    b = ActionBounds()
    eps = np.array([[10.0, -10.0, 0.0, 0.1]])
    a = td3_smoothed_action(lambda s: np.zeros((1, 4)), np.zeros(2), 0.2, 0.5, b, None, eps=eps)
    expect = b.mid + np.array([0.5, -0.5, 0.0, 0.1]) * b.half
    np.testing.assert_allclose(a[0], b.clamp(expect))


def test_bounds_roundtrip():
    b = ActionBounds()
    u = np.array([-1.0, 0.0, 0.5, 1.0])
    np.testing.assert_allclose(b.to_unit(b.to_env(u)), u, atol=1e-15)
    np.testing.assert_allclose(b.clamp(np.array([-1, 1, 0.2, 9])), [0, 0.5, 0.2, math.radians(30)])


def test_squashed_log_prob_integrates_to_one():
    # 1-D density of u = tanh(z) integrated over (-1, 1)
    mu, log_std = np.array([0.3]), np.array([-0.4])
    u = np.linspace(-1 + 1e-9, 1 - 1e-9, 200001)
    z = np.arctanh(u)[:, None]
    pdf = np.exp(squashed_gaussian_log_prob(z, mu, log_std))
    assert np.trapezoid(pdf, u) == pytest.approx(1.0, abs=1e-3)


def test_log_prob_stable_for_saturated_z():
    lp = squashed_gaussian_log_prob(np.array([[30.0]]), np.array([[30.0]]), np.array([[0.0]]))
    assert np.isfinite(lp).all()


def test_buffer_fifo_and_contract():
    buf = ReplayBuffer(3, 2, 1)
    for k in range(5):
        buf.push(Transition(np.full(2, k), np.zeros(1), float(k), np.zeros(2), False))
    assert [t.r for t in buf.items()] == [2.0, 3.0, 4.0]
    with pytest.raises(ContractError):
        buf.push(Transition(np.zeros(3), np.zeros(1), 0.0, np.zeros(2), False))
    with pytest.raises(ContractError):
        buf.push(Transition(np.zeros(2), np.zeros(1), float("nan"), np.zeros(2), False))
    with pytest.raises(NotReady):
        ReplayBuffer(10, 2, 1).sample(1, np.random.default_rng(0))


def test_buffer_sampling_is_uniform():
    buf = ReplayBuffer(20, 1, 1)
    for k in range(20):
        buf.push(Transition(np.array([k]), np.zeros(1), float(k), np.zeros(1), False))
    rng = np.random.default_rng(0)
    counts = np.zeros(20)
    for _ in range(500):
        counts += np.bincount(buf.sample(16, rng)["r"].astype(int), minlength=20)
    assert scipy.stats.chisquare(counts).pvalue > 1e-3


def test_buffer_concurrent_pushes():
    buf = ReplayBuffer(10_000, 1, 1)

    def work():
        for _ in range(500):
            buf.push(Transition(np.zeros(1), np.zeros(1), 0.0, np.zeros(1), False))
    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert buf.inserted == 2000


@pytest.mark.parametrize("kind", ["td3", "sac"])
def test_agent_rejects_wrong_observation(kind):
    agent = make_agent(kind, 5, ActionBounds(), None, 0)
    with pytest.raises(IncompatibleError):
        agent.act(np.zeros(4), np.random.default_rng(0))


@pytest.mark.parametrize("kind", ["td3", "sac"])
def test_actions_respect_bounds(kind):
    agent = make_agent(kind, 3, ActionBounds(), None, 0)
    rng = np.random.default_rng(0)
    b = ActionBounds()
    for _ in range(20):
        a = agent.act(rng.standard_normal(3) * 10, rng)
        assert np.all(a >= np.array(b.low) - 1e-12) and np.all(a <= np.array(b.high) + 1e-12)


def test_td3_delayed_actor_updates():
    agent = Td3Agent(3, ActionBounds(), Td3Config(**SMALL), 0)
    rng = np.random.default_rng(0)
    batch = {"s": rng.standard_normal((32, 3)), "a": rng.uniform(0, 0.5, (32, 4)),
             "r": rng.standard_normal(32), "s2": rng.standard_normal((32, 3)), "d": np.zeros(32)}
    actor0 = [p.copy() for p in agent.actor.params]
    agent.update(batch)
    assert all(np.array_equal(a, b) for a, b in zip(actor0, agent.actor.params))
    agent.update(batch)
    assert not all(np.array_equal(a, b) for a, b in zip(actor0, agent.actor.params))


def test_sac_alpha_moves_toward_target_entropy():
    agent = SacAgent(2, ActionBounds(), SacConfig(**SMALL, alpha_lr=1e-2), 0)
    rng = np.random.default_rng(0)
    batch = {"s": rng.standard_normal((32, 2)), "a": rng.uniform(0, 0.5, (32, 4)),
             "r": np.zeros(32), "s2": rng.standard_normal((32, 2)), "d": np.zeros(32)}
    a0 = agent.alpha
    for _ in range(5):
        agent.update(batch)
    assert agent.alpha != a0
    assert agent.target_entropy == -4


@pytest.mark.parametrize("kind", ["td3", "sac"])
def test_checkpoint_roundtrip(tmp_path, kind):
    agent = make_agent(kind, 4, ActionBounds(), None, 3)
    buf = ReplayBuffer(10, 4, 4)
    buf.push(Transition(np.ones(4), np.zeros(4), 1.0, np.ones(4), True))
    path = tmp_path / "c.bin"
    save_checkpoint(path, agent, buf, {"env_steps": 1}, include_buffer=True)
    again, buf2, meta = load_checkpoint(path, obs_dim=4)
    s = np.linspace(0, 1, 4)
    np.testing.assert_array_equal(again.act(s, None, deterministic=True), agent.act(s, None, deterministic=True))
    assert buf2.items()[0].r == 1.0 and meta["extra"]["env_steps"] == 1
    with pytest.raises(IncompatibleError):
        load_checkpoint(path, obs_dim=5)


def test_training_is_deterministic_with_one_env():
    cfg = SurrogateConfig(n_sensors=6, episode_steps=10)
    run = TrainConfig(total_steps=120, start_steps=40, checkpoint_every=10**9, seed=5)

    def go():
        agent = Td3Agent(6, ActionBounds(), Td3Config(**SMALL), 5)
        res = train(agent, lambda w: SurrogateEnv(cfg), 1, run)
        return res["returns"], agent.actor.params[0].copy()
    r1, p1 = go()
    r2, p2 = go()
    assert r1 == r2 and np.array_equal(p1, p2)


def test_log_rows_equal_updates(tmp_path):
    cfg = SurrogateConfig(n_sensors=6, episode_steps=10)
    agent = SacAgent(6, ActionBounds(), SacConfig(**SMALL), 0)
    res = train(agent, lambda w: SurrogateEnv(cfg), 2,
                TrainConfig(total_steps=100, start_steps=50, checkpoint_every=20), tmp_path / "log.csv",
                str(tmp_path))
    lines = (tmp_path / "log.csv").read_text().strip().splitlines()
    assert len(lines) - 1 == agent.updates == len(res["log"])
    assert res["buffer"].inserted == 100
    assert any(p.endswith("final.bin") for p in res["checkpoints"])


def test_worker_restarts_after_env_failure():
    cfg = SurrogateConfig(n_sensors=3, episode_steps=5)
    state = {"n": 0}

    class Flaky(SurrogateEnv):
        def step(self, a):
            state["n"] += 1
            if state["n"] == 7:
                raise RuntimeError("solver blew up")
            return super().step(a)
    agent = Td3Agent(3, ActionBounds(), Td3Config(**SMALL), 0)
    res = train(agent, lambda w: Flaky(cfg), 1, TrainConfig(total_steps=30, start_steps=30))
    assert res["buffer"].inserted == 30
