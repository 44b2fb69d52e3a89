"""Run configuration: nested dataclasses loaded from YAML, with CLI overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dg.reference import ConfigurationError
from .dg.solver import ShockCapturing
from .inlet import Freestream, InletGeometry, JetSegment, ProbeSet, build_inlet_case, default_probes
from .mesh import RefinementControl
from .rl.agents import ActionBounds, SacConfig, Td3Config
from .rl.train import TrainConfig
from .surrogate import SurrogateConfig
from .timestep import CflSettings


@dataclass(frozen=True)
class SolverSettings:
    order: int = 4
    base_size_mm: float = 5.0
    level: int = 0
    safety: float = 0.9
    shock_capturing: ShockCapturing | None = field(default_factory=ShockCapturing)
    refinement: RefinementControl | None = None
    lohner_epsilon: float | None = None

    @property
    def cfl(self):
        return CflSettings(safety=self.safety)


@dataclass(frozen=True)
class ProbeSettings:
    n_sensors: int = 100
    p1: tuple | None = None  # mm; defaults under the cowl lip
    p2: tuple | None = None  # mm; defaults mid-isolator on the floor
    sensors_file: str | None = None  # selection JSON restricting the sensor set


@dataclass(frozen=True)
class CaseConfig:
    geometry: InletGeometry = field(default_factory=InletGeometry)
    freestream: Freestream = field(default_factory=Freestream)
    solver: SolverSettings = field(default_factory=SolverSettings)
    probes: ProbeSettings = field(default_factory=ProbeSettings)


@dataclass(frozen=True)
class SimulateConfig:
    duration: float = 2e-3
    probe_every: float = 5e-6
    field_every: float | None = None
    warm_start_time: float | None = None  # write a warm-start snapshot at this time
    unstart_threshold: float = 5.0
    initial_file: str | None = None  # snapshot to start from instead of uniform freestream


@dataclass(frozen=True)
class BaselineConfig:
    duration: float = 1e-3
    window: float = 2e-4
    sample_every: float = 1e-5


@dataclass(frozen=True)
class EnvSettings:
    control_interval: float = 20e-6
    episode_duration: float = 2e-3
    noise_pct: float = 0.0
    w_p: float = 0.005
    w_r: float = 0.05
    gamma: float = 0.99
    failure_penalty: float = -1e4
    bounds: ActionBounds = field(default_factory=ActionBounds)
    baseline_file: str | None = None
    warm_start_file: str | None = None


@dataclass(frozen=True)
class TrainSettings:
    algo: str = "td3"
    n_envs: int = 1
    run: TrainConfig = field(default_factory=TrainConfig)
    td3: Td3Config = field(default_factory=Td3Config)
    sac: SacConfig = field(default_factory=SacConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)


@dataclass(frozen=True)
class ConvergenceConfig:
    mode: str = "vortex"
    orders: tuple = (3, 4, 5)
    meshes: tuple = (16, 32, 64)  # trees per side of the periodic square
    final_time: float = 1.0
    safety: float = 0.5
    background_speed: float = 3.0  # vortex advection speed along x and y
    inlet_orders: tuple = (4, 5, 6)
    inlet_duration: float = 2e-4


@dataclass(frozen=True)
class SensorsConfig:
    snapshot_file: str | None = None  # rows are sensor locations, columns are snapshots
    coords_file: str | None = None
    r: tuple = (10, 15, 20, 50)
    window: tuple | None = None  # (t0, t1) in seconds; needs time stamps in the header
    center: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    case: CaseConfig = field(default_factory=CaseConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    env: EnvSettings = field(default_factory=EnvSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    convergence: ConvergenceConfig = field(default_factory=ConvergenceConfig)
    sensors: SensorsConfig = field(default_factory=SensorsConfig)


def _build(cls, data, path="config"):
    """Recursively construct dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    hints = _hints(cls)
    for name, value in data.items():
        kwargs[name] = _convert(hints[name], value, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigurationError(f"{path}: {err}") from None


def _hints(cls):
    return typing.get_type_hints(cls)


def _convert(tp, value, path):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is tuple or origin is tuple:
        if path.endswith(".jets"):
            return tuple(_build(JetSegment, j, f"{path}[{k}]") for k, j in enumerate(value))
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{path}: expected a list")
        return tuple(value)
    if tp is float:
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigurationError(f"{path}: expected a number") from None
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected a number")
        return float(value)
    if tp is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true/false")
        return value
    if tp is str and not isinstance(value, str):
        raise ConfigurationError(f"{path}: expected a string")
    return value


def load_config(path=None, overrides: dict | None = None):
    """Returns (RunConfig, raw bytes, sha256 of the bytes)."""
    raw = b""
    data = {}
    if path is not None:
        try:
            raw = Path(path).read_bytes()
        except OSError as err:
            raise ConfigurationError(f"cannot read config {path}: {err}") from None
        try:
            data = yaml.safe_load(raw) or {}
        except yaml.YAMLError as err:
            raise ConfigurationError(f"{path}: invalid YAML: {err}") from None
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    cfg = _build(RunConfig, data)
    return cfg, raw, hashlib.sha256(raw).hexdigest()


def to_dict(cfg) -> dict:
    def conv(x):
        if dataclasses.is_dataclass(x):
            return {f.name: conv(getattr(x, f.name)) for f in dataclasses.fields(x)}
        if isinstance(x, (list, tuple)):
            return [conv(v) for v in x]
        if isinstance(x, np.ndarray):
            return x.tolist()
        return x
    return conv(cfg)


def make_probes(case_cfg: CaseConfig, geometry: InletGeometry) -> ProbeSet:
    pc = case_cfg.probes
    probes = default_probes(geometry, pc.n_sensors)
    if pc.p1 is not None:
        probes = dataclasses.replace(probes, p1=tuple(pc.p1))
    if pc.p2 is not None:
        probes = dataclasses.replace(probes, p2=tuple(pc.p2))
    if pc.sensors_file:
        import json
        doc = json.loads(Path(pc.sensors_file).read_text())
        probes = probes.subset(doc["indices"])
    return probes


def build_case(case_cfg: CaseConfig, tr: float | None = None, re_unit: float | None = None,
               order: int | None = None):
    geo = case_cfg.geometry if tr is None else dataclasses.replace(case_cfg.geometry, throttle_ratio=tr)
    fs = case_cfg.freestream if re_unit is None else dataclasses.replace(case_cfg.freestream, re_unit=re_unit)
    s = case_cfg.solver
    return build_inlet_case(geo, s.base_size_mm, order or s.order, fs, s.level, s.shock_capturing,
                            make_probes(case_cfg, geo), lohner_epsilon=s.lohner_epsilon)
