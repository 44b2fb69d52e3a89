import numpy as np
import pytest

from unstart.config import RunConfig, build_case, load_config, to_dict
from unstart.dg.reference import ConfigurationError

ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]


def test_defaults_without_file():
    cfg, raw, digest = load_config(None)
    assert cfg == RunConfig()
    assert raw == b""


def test_shipped_config_loads():
    cfg, raw, digest = load_config(ROOT / "configs" / "inlet_default.yaml")
    assert len(digest) == 64
    assert cfg.case.geometry.validate()
    assert cfg.case.geometry == RunConfig().case.geometry
    for name in ("desk_unstart.yaml", "toy_train.yaml"):
        load_config(ROOT / "configs" / name)


def test_overrides_and_unknown_keys(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\ncase:\n  geometry:\n    throttle_ratio: 34\n")
    cfg, _, _ = load_config(p, {"case.geometry.throttle_ratio": 40.0, "train.algo": "sac"})
    assert cfg.seed == 3 and cfg.case.geometry.throttle_ratio == 40.0 and cfg.train.algo == "sac"
    p.write_text("case:\n  geometri: {}\n")
    with pytest.raises(ConfigurationError, match="geometri"):
        load_config(p)


def test_type_errors(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: abc\n")
    with pytest.raises(ConfigurationError):
        load_config(p)
    p.write_text("[1, 2")
    with pytest.raises(ConfigurationError):
        load_config(p)


def test_jets_from_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("""case:
  geometry:
    jets:
      - {name: b0, group: blow, wall: ramp2, start: 20, end: 24}
      - {name: s0, group: suction1, wall: floor, start: 10, end: 18}
      - {name: s1, group: suction2, wall: floor, start: 60, end: 64}
""")
    cfg, _, _ = load_config(p)
    assert cfg.case.geometry.validate()
    assert cfg.case.geometry.group_area("suction1") == pytest.approx(8e-3)


def test_round_trip_dict():
    d = to_dict(RunConfig())
    assert d["case"]["geometry"]["ramp2_angle"] == 21.0
    assert d["train"]["run"]["total_steps"] > 0


def test_re_override_rescales_viscosity_only():
    cfg = RunConfig()
    a = build_case(cfg.case, re_unit=1e7, order=2)
    b = build_case(cfg.case, re_unit=5e6, order=2)
    assert a.gas.mu == pytest.approx(b.gas.mu / 2)
    np.testing.assert_array_equal(a.U0, b.U0)
