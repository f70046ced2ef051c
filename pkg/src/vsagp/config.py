"""Run configuration: one commented YAML file plus ``section.key=value`` overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .control import ControllerConfig, default_schedule
from .evaluation import CvConfig
from .gp import GPOptions
from .plant import PlantParams, SensorNoise
from .testbench import GridSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleSpec:
    angles: tuple = (-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0)
    stiffnesses: tuple = (0.3, 0.6)
    hold_duration: float = 10.0
    steady_window: float = 2.0
    measure_stiffness: bool = True

    def setpoints(self):
        return default_schedule(self.angles, self.stiffnesses, self.hold_duration)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    plant: PlantParams = field(default_factory=PlantParams)
    noise: SensorNoise = field(default_factory=SensorNoise)
    grid: GridSpec = field(default_factory=GridSpec)
    gp: GPOptions = field(default_factory=GPOptions)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    cv: CvConfig = field(default_factory=CvConfig)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)

    # the sensor block lives beside the plant in the file; these views join them
    def plant_params(self) -> PlantParams:
        return self.plant.with_noise(self.noise)

    def gp_options(self) -> GPOptions:
        return dataclasses.replace(self.gp, seed=self.seed)

    def cv_config(self) -> CvConfig:
        return dataclasses.replace(self.cv, seed=self.seed)


_SECTIONS = {
    "plant": PlantParams,
    "noise": SensorNoise,
    "grid": GridSpec,
    "gp": GPOptions,
    "controller": ControllerConfig,
    "cv": CvConfig,
    "schedule": ScheduleSpec,
}
# keys that are not user-facing in a section (set from the top level or nested)
_HIDDEN = {("plant", "noise"), ("gp", "seed"), ("cv", "seed")}

_COMMENTS = {
    "seed": "drives torque noise, GP restarts, CV fold shuffles",
    "output_dir": "default directory for subcommand outputs",
    "plant.rest_offset": "rad, spring rest offset q0",
    "plant.base_rate": "Nm/rad, pressure-independent spring rate k0",
    "plant.pressure_rate": "Nm/(rad bar), spring rate gain per bar k1",
    "plant.inertia": "kg m^2",
    "plant.damping": "Nm s/rad",
    "plant.valve_time_constant": "s, first-order valve lag",
    "plant.angle_limit": "rad, symmetric joint stop",
    "plant.pressure_max": "bar",
    "noise.encoder_quantum_deg": "deg, joint encoder resolution (0 = ideal)",
    "noise.torque_quantum": "Nm, torque sensor resolution (0 = ideal)",
    "noise.pressure_quantum": "bar, valve pressure sensor resolution (0 = ideal)",
    "noise.motor_quantum_deg": "deg, motor resolver resolution (0 = ideal)",
    "noise.torque_sigma": "Nm, std of additive Gaussian torque noise",
    "grid.pressure_min": "bar",
    "grid.pressure_max": "bar",
    "grid.points_per_axis": "full-factorial grid, n = points_per_axis^2",
    "gp.restarts": "random restarts of the likelihood optimizer",
    "gp.max_iter": "L-BFGS-B iterations per restart",
    "gp.gtol": "projected-gradient convergence threshold",
    "gp.ftol": "relative objective-change convergence threshold",
    "gp.max_line_search": "line-search evaluations per iteration",
    "gp.init_low": "lower end of the log-uniform initial values",
    "gp.init_high": "upper end of the log-uniform initial values",
    "gp.noise_floor": "lower bound on noise variance (standardized units)",
    "gp.noise_max": "upper bound on noise variance (standardized units)",
    "gp.signal_variance_bounds": "standardized units",
    "gp.length_scale_bounds": "standardized input units",
    "gp.jitter": "initial diagonal jitter before Cholesky",
    "gp.max_jitter": "largest jitter tried before giving up",
    "controller.kp": "bar/deg",
    "controller.ki": "bar/(s deg)",
    "controller.cycle_time": "s",
    "controller.pressure_min": "bar",
    "controller.pressure_max": "bar",
    "controller.feedback_limit": "bar, bound on |feedback pressure difference|",
    "cv.n_folds": "folds per repeat",
    "cv.n_repeats": "independently shuffled repeats",
    "schedule.angles": "deg, target joint angles in visiting order",
    "schedule.stiffnesses": "Nm/rad, stiffness levels commanded per angle",
    "schedule.hold_duration": "s per setpoint",
    "schedule.steady_window": "s at the end of each hold scored for angle MAE",
    "schedule.measure_stiffness": "run the stiffness probe after each hold",
}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def to_dict(cfg: RunConfig) -> dict:
    out = {"seed": cfg.seed, "output_dir": cfg.output_dir}
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                     if (name, f.name) not in _HIDDEN}
    return out


def _scalar_yaml(v) -> str:
    return yaml.safe_dump(v, default_flow_style=True).strip().removesuffix("\n...").strip()


def render(cfg: RunConfig) -> str:
    """Commented YAML document; loading it back yields an equal config."""
    d = to_dict(cfg)
    lines = ["# vsagp run configuration. Units are given next to every key."]
    for key in ("seed", "output_dir"):
        lines.append(f"{key}: {_scalar_yaml(d[key])}  # {_COMMENTS[key]}")
    for section in _SECTIONS:
        lines.append("")
        lines.append(f"{section}:")
        for k, v in d[section].items():
            comment = _COMMENTS.get(f"{section}.{k}")
            line = f"  {k}: {_scalar_yaml(v)}"
            lines.append(f"{line}  # {comment}" if comment else line)
    return "\n".join(lines) + "\n"


def _number(v, name) -> float:
    # YAML 1.1 reads "1e-10" as a string
    if isinstance(v, bool):
        raise ConfigError(f"{name} must be a number")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {v!r}") from None


def _build_section(cls, base, values: dict, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in values.items():
        if k not in known or (section, k) in _HIDDEN:
            raise ConfigError(f"unknown key {section}.{k}")
        default = getattr(base, k)
        if isinstance(default, tuple):
            if not isinstance(v, (list, tuple)):
                raise ConfigError(f"{section}.{k} must be a list")
            v = tuple(_number(x, f"{section}.{k}") if isinstance(d0, float) else x
                      for x, d0 in zip(v, default + default[-1:] * len(v)))
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{section}.{k} must be true or false")
        elif isinstance(default, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{section}.{k} must be an integer")
        elif isinstance(default, float):
            v = _number(v, f"{section}.{k}")
        kwargs[k] = v
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} settings: {exc}") from exc


def from_dict(d: dict, base: RunConfig = None) -> RunConfig:
    cfg = base or RunConfig()
    if d is None:
        return cfg
    if not isinstance(d, dict):
        raise ConfigError("config root must be a mapping")
    updates = {}
    for k, v in d.items():
        if k == "seed":
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError("seed must be an integer")
            updates[k] = v
        elif k == "output_dir":
            updates[k] = str(v)
        elif k in _SECTIONS:
            updates[k] = _build_section(_SECTIONS[k], getattr(cfg, k), v, k)
        else:
            raise ConfigError(f"unknown top-level key {k!r}")
    return dataclasses.replace(cfg, **updates)


def parse_override(text: str) -> dict:
    """``"plant.base_rate=0.06"`` -> ``{"plant": {"base_rate": 0.06}}``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw) if raw.strip() else ""
    parts = key.strip().split(".")
    if len(parts) == 1:
        return {parts[0]: value}
    if len(parts) == 2:
        return {parts[0]: {parts[1]: value}}
    raise ConfigError(f"override key {key!r} nests too deeply")


def load(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = from_dict(data, cfg)
    for ov in overrides:
        cfg = from_dict(parse_override(ov), cfg)
    return cfg


def save(cfg: RunConfig, path) -> None:
    Path(path).write_text(render(cfg))
