import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unstart.dg.reference import ConfigurationError
from unstart.env import (EnvConfig, InletEnv, ProtocolError, command_from_action, inject_noise,
                         jet_normalizers, load_snapshot, reward, reward_terms, save_snapshot, write_episode_csv)
from unstart.inlet import InletGeometry, build_inlet_case, jet_kinetic_power


@pytest.fixture(scope="module")
def case():
    return build_inlet_case(InletGeometry(throttle_ratio=40.0), base_size=10.0, order=2)


def _env(case, **kw):
    base = np.full(case.probes.count, case.freestream.p_inf)
    cfg = EnvConfig(**{"control_interval": 2e-7, "episode_duration": 6e-7, **kw})
    return InletEnv(case, cfg, base, (case.U0, 0.0))


def test_reward_zero_at_baseline():
    b = np.linspace(1000, 3000, 100)
    assert reward(b, b, 0.0, 0.0, 1.0) == 0.0


def test_reward_doubled_pressure():
    b = np.linspace(1000, 3000, 100)
    assert reward(2 * b, b, 0.0, 0.0, 1.0, w_p=0.0, w_r=0.0) == pytest.approx(-100.0, abs=1e-9)


def test_reward_terms_hand_arithmetic():
    r_p, r_pow, r_rate = reward_terms([2.0], [1.0], 3.0, -0.5, 0.25, p_inf=1.0, w_p=0.1, w_r=0.2,
                                      p_max=6.0, q_max=2.0)
    assert r_p == -1.0
    assert r_pow == pytest.approx(-0.1 * 0.25)
    assert r_rate == pytest.approx(-0.2 * 0.5 / (2.0 * 0.25))


def test_reward_validation():
    with pytest.raises(ConfigurationError):
        reward([1.0, 2.0], [1.0], 0, 0, 1.0)
    with pytest.raises(ConfigurationError):
        reward([1.0], [0.0], 0, 0, 1.0)
    with pytest.raises(ConfigurationError):
        reward([1.0], [1.0], 0, 0, 0.0)


def test_noise_model():
    rng = np.random.default_rng(0)
    p = np.array([1.0, 2.0])
    assert inject_noise(p, 0.0, rng) is not None
    np.testing.assert_array_equal(inject_noise(p, 0.0, rng), p)
    np.testing.assert_allclose(inject_noise(p, 10.0, rng, z=np.array([1.0, -2.0])), [1.1, 1.6])
    with pytest.raises(ConfigurationError):
        inject_noise(p, -1.0, rng)


@given(st.sampled_from([0.0, 5.0, 10.0]), st.integers(0, 1000))
def test_noise_statistics(delta, seed):
    rng = np.random.default_rng(seed)
    p = np.full(20000, 3.0)
    rel = inject_noise(p, delta, rng) / p - 1
    assert abs(rel.std() - delta / 100) < 0.05 * delta / 100 + 1e-15


def test_one_sided_actions_are_dropped():
    assert not command_from_action([0.3, 0.0, 0.0, 0.1]).active
    assert not command_from_action([0.0, 0.2, 0.2, 0.1]).active
    assert command_from_action([0.3, 0.2, 0.0, 0.1]).active


def test_env_config_validation():
    with pytest.raises(ConfigurationError):
        EnvConfig(control_interval=0.0)
    with pytest.raises(ConfigurationError):
        EnvConfig(noise_pct=-1.0)
    assert EnvConfig().rate_dt == 1.0


def test_normalizers_positive(case):
    p_max, q_max = jet_normalizers(case, EnvConfig().bounds)
    assert p_max > 0 and q_max > 0


def test_protocol(case):
    env = _env(case)
    with pytest.raises(ProtocolError):
        env.step(np.zeros(4))
    obs = env.reset(0)
    assert obs.shape == (case.probes.count,)
    np.testing.assert_allclose(obs, 1.0)
    steps = 0
    done = False
    while not done:
        res = env.step(np.array([0.3, 0.2, 0.1, 0.0]))
        steps += 1
        done = res.terminated or res.truncated
    assert steps == 3 and res.terminated
    with pytest.raises(ProtocolError):
        env.step(np.zeros(4))


def test_mass_balance_every_active_step(case):
    env = _env(case)
    env.reset(1)
    rng = np.random.default_rng(1)
    for _ in range(3):
        a = np.array([rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(0, 0.5), rng.uniform(-0.5, 0.5)])
        res = env.step(a)
        assert res.info["balance"] <= 1e-12


def test_power_term_matches_hand_formula(case):
    env = _env(case)
    env.reset(0)
    res = env.step(np.array([0.4, 0.3, 0.2, 0.1]))
    act = case.actuation
    q = act.mass_flows()
    geo = case.geometry
    groups = ("blow", "suction1", "suction2")
    hand = sum(0.5 * q[g] ** 3 / (act.density[g] ** 2 * geo.group_area(g) ** 2) for g in groups)
    assert res.info["power"] == pytest.approx(hand, rel=1e-12)
    assert hand == pytest.approx(jet_kinetic_power([q[g] for g in groups], [act.density[g] for g in groups],
                                                   [geo.group_area(g) for g in groups]), rel=1e-12)


def test_zero_length_episode_and_csv(case, tmp_path):
    env = _env(case, episode_duration=0.0)
    env.reset(0)
    with pytest.raises(ProtocolError):
        env.step(np.zeros(4))
    path = tmp_path / "ep.csv"
    write_episode_csv(path, env.log)
    assert len(path.read_text().strip().splitlines()) == 1


def test_baseline_validation(case):
    with pytest.raises(ConfigurationError):
        InletEnv(case, EnvConfig(), np.ones(3), (case.U0, 0.0))
    with pytest.raises(ConfigurationError):
        InletEnv(case, EnvConfig(), np.ones(case.probes.count), None)


def test_snapshot_roundtrip_and_mismatch(case, tmp_path):
    path = tmp_path / "s.bin"
    save_snapshot(path, case, case.U0, 1.5e-4)
    U, t = load_snapshot(path, case)
    np.testing.assert_array_equal(U, case.U0)
    assert t == 1.5e-4
    other = build_inlet_case(InletGeometry(), base_size=10.0, order=3)
    with pytest.raises(ConfigurationError):
        load_snapshot(path, other)


def test_binary_format_rejects_garbage(tmp_path):
    from unstart import binio
    p = tmp_path / "x.bin"
    p.write_bytes(b"nonsense")
    with pytest.raises(binio.FormatError):
        binio.read(p)
    binio.write(p, "snapshot", {"a": 1}, {"U": np.arange(3.0)})
    with pytest.raises(binio.FormatError):
        binio.read(p, "checkpoint")
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(binio.FormatError):
        binio.read(p)
