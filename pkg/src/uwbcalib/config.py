"""Run configuration as nested dataclasses.

A JSON schema is generated from the dataclass fields so unknown keys and
wrong types are rejected with the offending field path.  Missing keys keep
their defaults.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

MODES = ("ri+skf", "ri+ekf", "lsi+skf", "lsi+ekf")


@dataclass
class TrajectoryConfig:
    kind: str = "lissajous"            # circle | lissajous | waypoint-spline
    center: list[float] = field(default_factory=lambda: [0.0, 0.0, 1.5])
    amplitude: list[float] = field(default_factory=lambda: [4.0, 4.0, 1.5])
    period: list[float] = field(default_factory=lambda: [14.0, 10.0, 8.0])
    phase: list[float] = field(default_factory=lambda: [0.0, 1.5707963267948966, 0.0])
    waypoints: list[list[float]] = field(default_factory=list)
    yaw_rate: float = 0.0
    yaw_amplitude: float = 0.6
    yaw_period: float = 19.0
    tilt_amplitude: float = 0.08
    tilt_period: float = 7.0


@dataclass
class AnchorConfig:
    position: list[float] = field(default_factory=lambda: [10.0, 10.0, 10.0])
    beta: float = 1.0
    gamma: float = -0.3


def _default_anchors():
    return [AnchorConfig([6.0, 6.0, 5.0], 0.99, -0.3), AnchorConfig([-6.0, 5.0, 1.0], 1.01, -0.3),
            AnchorConfig([5.0, -6.0, 3.0], 0.98, -0.3), AnchorConfig([-5.0, -6.0, 6.0], 1.02, -0.3)]


@dataclass
class LandmarkConfig:
    count: int = 80
    radius: float = 15.0
    z_min: float = 0.0
    z_max: float = 8.0
    max_per_frame: int = 10
    fov_tan: float = 1.0
    min_depth: float = 0.5


@dataclass
class NoiseConfig:
    gyro: float = 2e-3           # rad/s/sqrt(Hz)
    accel: float = 2e-2          # m/s^2/sqrt(Hz)
    gyro_bias: float = 2e-5      # rad/s^2/sqrt(Hz)
    accel_bias: float = 2e-4     # m/s^3/sqrt(Hz)
    pixel: float = 0.03          # normalized image units
    range_std: float = 0.1       # m
    init_gyro_bias: float = 1e-3
    init_accel_bias: float = 1e-2
    init_attitude: float = 0.01
    init_position: float = 0.02
    init_velocity: float = 0.02


@dataclass
class ScenarioConfig:
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    duration: float = 40.0
    imu_rate: float = 100.0
    camera_rate: float = 5.0
    uwb_rate: float = 10.0
    range_spacing: float = 0.25
    init_duration: float = 10.0
    anchors: list[AnchorConfig] = field(default_factory=_default_anchors)
    landmarks: LandmarkConfig = field(default_factory=LandmarkConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    tag_offset: list[float] = field(default_factory=lambda: [0.05, 0.0, 0.03])
    sigma_r: float = 0.0         # init-window localization error scale
    sigma_r_model: str = "lognormal"   # lognormal | random-walk
    sigma_i: float = 0.0         # extra anchor initialization error
    sigma_u: float = 1.0         # filter range std / true range std
    seed: int = 0


@dataclass
class FilterConfig:
    clone_window: int = 5
    max_init_clones: int = 400
    min_window: int = 20
    gate: float = 0.999
    scale_range_noise: bool = True
    beta_prior_std: float = 0.1
    reopen_beta: bool = True
    use_fej: bool = True
    uwb_updates: bool = True
    sigma_i_gamma: bool = True
    sigma_i_in_covariance: bool = False   # add sigma_i^2 to the new anchor's variances


@dataclass
class SolverConfig:
    max_iter: int = 50
    step_tol: float = 1e-8
    max_halvings: int = 10
    whiten: bool = True
    initial_guess: str = "linear"      # linear | centroid


@dataclass
class GridCell:
    sigma_r: typing.Optional[float] = None
    sigma_i: typing.Optional[float] = None
    sigma_u: typing.Optional[float] = None


@dataclass
class MonteCarloConfig:
    experiment: str = "pipeline"       # pipeline | init
    trials: int = 10
    modes: list[str] = field(default_factory=lambda: ["ri+skf", "ri+ekf"])
    grid: list[GridCell] = field(default_factory=lambda: [GridCell()])
    init_window: int = 60


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    montecarlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    mode: str = "ri+skf"
    out: str = "out"


# ---------------------------------------------------------------------------
# schema


def _type_schema(tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return {"anyOf": [_type_schema(args[0]), {"type": "null"}]}
    if origin is list:
        (arg,) = typing.get_args(tp)
        return {"type": "array", "items": _type_schema(arg)}
    if dataclasses.is_dataclass(tp):
        return dataclass_schema(tp)
    if tp is bool:
        return {"type": "boolean"}
    if tp is int:
        return {"type": "integer"}
    if tp is float:
        return {"type": "number"}
    if tp is str:
        return {"type": "string"}
    raise TypeError(f"unsupported config type {tp}")


def dataclass_schema(cls):
    hints = typing.get_type_hints(cls)
    props = {f.name: _type_schema(hints[f.name]) for f in dataclasses.fields(cls)}
    return {"type": "object", "properties": props, "additionalProperties": False}


def config_schema():
    schema = dataclass_schema(RunConfig)
    schema["properties"]["mode"]["enum"] = list(MODES)
    mc = schema["properties"]["montecarlo"]["properties"]
    mc["experiment"]["enum"] = ["pipeline", "init"]
    mc["modes"]["items"]["enum"] = list(MODES)
    schema["properties"]["scenario"]["properties"]["sigma_r_model"]["enum"] = [
        "lognormal", "random-walk"]
    schema["properties"]["solver"]["properties"]["initial_guess"]["enum"] = ["linear", "centroid"]
    schema["properties"]["scenario"]["properties"]["trajectory"]["properties"]["kind"]["enum"] = [
        "circle", "lissajous", "waypoint-spline"]
    schema["$schema"] = "http://json-schema.org/draft-07/schema#"
    return schema


class ConfigError(ValueError):
    pass


def _build(cls, data):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        kwargs[f.name] = _convert(hints[f.name], data[f.name])
    return cls(**kwargs)


def _convert(tp, value):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        if value is None:
            return None
        tp = [a for a in typing.get_args(tp) if a is not type(None)][0]
        return _convert(tp, value)
    if origin is list:
        (arg,) = typing.get_args(tp)
        return [_convert(arg, v) for v in value]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value)
    if tp is float:
        return float(value)
    return value


def _check(errors, ok, path, msg):
    if not ok:
        errors.append(f"field {path}: {msg}")


def validate_config(cfg: RunConfig):
    """Value checks the schema cannot express; raises :class:`ConfigError`."""
    e = []
    sc, fc, mc = cfg.scenario, cfg.filter, cfg.montecarlo
    tr = sc.trajectory
    for name in ("center", "amplitude", "period", "phase"):
        _check(e, len(getattr(tr, name)) == 3, f"scenario.trajectory.{name}",
               "must have 3 entries")
    _check(e, all(x > 0 for x in tr.period), "scenario.trajectory.period", "must be positive")
    _check(e, tr.yaw_period > 0 and tr.tilt_period > 0, "scenario.trajectory",
           "yaw_period and tilt_period must be positive")
    if tr.kind == "waypoint-spline":
        _check(e, len(tr.waypoints) >= 2 and all(len(w) == 3 for w in tr.waypoints),
               "scenario.trajectory.waypoints", "needs at least two [x, y, z] waypoints")
    _check(e, sc.duration > 0, "scenario.duration", "must be positive")
    _check(e, sc.imu_rate >= 10, "scenario.imu_rate", "must be at least 10 Hz")
    _check(e, sc.camera_rate >= 0, "scenario.camera_rate", "must be non-negative")
    _check(e, sc.uwb_rate > 0, "scenario.uwb_rate", "must be positive")
    _check(e, sc.range_spacing >= 0, "scenario.range_spacing", "must be non-negative")
    _check(e, 0 <= sc.init_duration < sc.duration, "scenario.init_duration",
           "must lie in [0, duration)")
    _check(e, len(sc.anchors) >= 1, "scenario.anchors", "needs at least one anchor")
    for i, a in enumerate(sc.anchors):
        _check(e, len(a.position) == 3, f"scenario.anchors.{i}.position", "must have 3 entries")
        _check(e, a.beta > 0, f"scenario.anchors.{i}.beta", "must be positive")
    _check(e, len(sc.tag_offset) == 3, "scenario.tag_offset", "must have 3 entries")
    for name in ("gyro", "accel", "gyro_bias", "accel_bias", "pixel", "range_std",
                 "init_gyro_bias", "init_accel_bias", "init_attitude", "init_position",
                 "init_velocity"):
        _check(e, getattr(sc.noise, name) >= 0, f"scenario.noise.{name}", "must be non-negative")
    _check(e, sc.noise.range_std > 0, "scenario.noise.range_std", "must be positive")
    _check(e, sc.sigma_r >= 0, "scenario.sigma_r", "must be non-negative")
    _check(e, sc.sigma_i >= 0, "scenario.sigma_i", "must be non-negative")
    _check(e, sc.sigma_u > 0, "scenario.sigma_u", "must be positive")
    _check(e, sc.landmarks.count >= 0, "scenario.landmarks.count", "must be non-negative")
    _check(e, fc.clone_window >= 1, "filter.clone_window", "must be at least 1")
    _check(e, fc.min_window >= 4, "filter.min_window", "must be at least 4")
    _check(e, fc.max_init_clones >= fc.min_window, "filter.max_init_clones",
           "must be at least min_window")
    _check(e, 0 < fc.gate <= 1, "filter.gate", "must lie in (0, 1]")
    _check(e, fc.beta_prior_std > 0, "filter.beta_prior_std", "must be positive")
    _check(e, cfg.solver.max_iter >= 1, "solver.max_iter", "must be at least 1")
    _check(e, mc.trials >= 1, "montecarlo.trials", "must be at least 1")
    _check(e, len(mc.modes) >= 1, "montecarlo.modes", "needs at least one mode")
    _check(e, len(mc.grid) >= 1, "montecarlo.grid", "needs at least one cell")
    _check(e, mc.init_window >= 4, "montecarlo.init_window", "must be at least 4")
    for i, c in enumerate(mc.grid):
        for name in ("sigma_r", "sigma_i", "sigma_u"):
            v = getattr(c, name)
            _check(e, v is None or v >= 0, f"montecarlo.grid.{i}.{name}", "must be non-negative")
        _check(e, c.sigma_u is None or c.sigma_u > 0, f"montecarlo.grid.{i}.sigma_u",
               "must be positive")
    if e:
        raise ConfigError("\n".join(e))
    return cfg


def config_from_dict(data) -> RunConfig:
    validator = jsonschema.Draft7Validator(config_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            path = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"field {path}: {e.message}")
        raise ConfigError("\n".join(lines))
    return validate_config(_build(RunConfig, data))


def load_config(path) -> RunConfig:
    """Read a JSON config; ``path`` may also name a bundled preset."""
    p = Path(path)
    if not p.exists():
        text = preset_text(str(path))
        source = f"preset {path}"
    else:
        text = p.read_text(encoding="utf-8")
        source = str(p)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{source}:\n{exc}") from None


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("uwbcalib.presets").iterdir()
                  if p.name.endswith(".json"))


def preset_text(name):
    res = resources.files("uwbcalib.presets") / f"{name}.json"
    if not res.is_file():
        raise ConfigError(f"no config file or preset named {name!r} "
                          f"(presets: {', '.join(preset_names())})")
    return res.read_text(encoding="utf-8")


def config_to_dict(cfg) -> dict:
    return asdict(cfg)
