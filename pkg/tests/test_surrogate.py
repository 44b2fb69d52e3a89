import numpy as np
import pytest

from unstart.env import ProtocolError
from unstart.surrogate import (SurrogateConfig, SurrogateEnv, episode_return, normalized_score,
                               reference_returns, scripted_optimal_action)


def test_zero_action_return_is_negative_and_opt_better():
    env = SurrogateEnv(SurrogateConfig())
    r0, r_opt, a = reference_returns(env, seeds=(0,))
    assert r_opt > r0
    assert normalized_score(r_opt, r0, r_opt) == 1.0
    assert np.all(a >= np.array(env.bounds.low)) and np.all(a <= np.array(env.bounds.high))


def test_unthrottled_zero_action_sits_at_baseline():
    env = SurrogateEnv(SurrogateConfig(tr=0.0, init_jitter=0.0))
    assert episode_return(env, lambda o: np.zeros(4)) == pytest.approx(0.0, abs=1e-12)


def test_throttling_moves_shock_upstream():
    assert SurrogateEnv(SurrogateConfig(tr=40)).x_throttled < SurrogateEnv(SurrogateConfig(tr=34)).x_throttled


def test_protocol_and_shapes():
    env = SurrogateEnv(SurrogateConfig(n_sensors=15))
    with pytest.raises(ProtocolError):
        env.step(np.zeros(4))
    obs = env.reset(0)
    assert obs.shape == (15,)
    res = env.step(np.zeros(4))
    assert set(res.info) >= {"x", "terms"}


def test_noise_only_changes_observations():
    a = SurrogateEnv(SurrogateConfig(noise_pct=10.0))
    b = SurrogateEnv(SurrogateConfig(noise_pct=0.0))
    a.reset(3), b.reset(3)
    ra, rb = a.step(np.full(4, 0.2)), b.step(np.full(4, 0.2))
    assert ra.reward == rb.reward
    assert not np.allclose(ra.observation, rb.observation)


def test_scripted_action_beats_random_constants():
    env = SurrogateEnv(SurrogateConfig())
    a_opt = scripted_optimal_action(env)
    best = episode_return(env, lambda o: a_opt)
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.uniform(env.bounds.low, env.bounds.high)
        assert episode_return(env, lambda o: a) <= best + 1e-9
