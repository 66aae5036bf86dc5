"""Scenario files: a strict TOML schema for one closed-loop experiment.

Units: angles rad, lengths m, masses kg, inertias kg·m², time s, torques
N·m, friction gains N·m·s/rad (viscous) and N·m (Coulomb).

Every key is optional; an empty file is the matched two-link benchmark.
Unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Literal

import numpy as np
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import dynamics as dyn
from .control import ControllerParams
from .observer import ObserverParams, ObserverState
from .reference import RefModelParams
from .sim import SimConfig

# values the simulation needs but the benchmark description never fixes
NON_BENCHMARK_KEYS = ("simulation.dt", "simulation.t_end", "simulation.log_stride",
                  "friction.eps", "nominal.gravity", "plant.gravity",
                  "metrics.settle_band")


class ConfigError(ValueError):
    """Scenario file that cannot be parsed or fails validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LinkSpec(_Strict):
    mass: float = Field(gt=0, description="kg")
    length: float = Field(gt=0, description="m")
    com: float = Field(ge=0, description="m, distance from the joint")
    inertia: float = Field(gt=0, description="kg·m² about the center of mass")

    @model_validator(mode="after")
    def _com_on_link(self):
        if self.com > self.length:
            raise ValueError(f"com = {self.com} exceeds length = {self.length}")
        return self


_LINK1 = dict(mass=10.0, length=1.0, com=0.5, inertia=10.0 / 12.0)
_LINK2 = dict(mass=5.0, length=1.0, com=0.5, inertia=5.0 / 12.0)


class ArmSpec(_Strict):
    link1: LinkSpec = LinkSpec(**_LINK1)
    link2: LinkSpec = LinkSpec(**_LINK2)
    gravity: float = Field(9.81, description="m/s²")
    motor_inertia: tuple[float, float] = Field((0.0, 0.0), description="kg·m², reflected")

    def params(self) -> dyn.RobotParams:
        links = tuple(dyn.Link(**getattr(self, f"link{i}").model_dump()) for i in (1, 2))
        return dyn.RobotParams(links, self.gravity, self.motor_inertia)


class PayloadSpec(_Strict):
    dm2: float = 0.0
    dlc2: float = 0.0
    dI2: float = 0.0


class PlantSpec(ArmSpec):
    payload: PayloadSpec = PayloadSpec()

    @model_validator(mode="after")
    def _payload_valid(self):
        self.params()
        return self

    def params(self) -> dyn.RobotParams:
        base = super().params()
        p = self.payload
        try:
            return dyn.apply_payload(base, dyn.PayloadPerturbation(p.dm2, p.dlc2, p.dI2))
        except dyn.ParameterError as exc:
            raise ValueError(str(exc)) from None


class ControllerSpec(_Strict):
    variant: Literal["basic", "computed_torque", "integral", "none"] = "basic"
    q_w: float = Field(1e7, gt=0)
    r_w: float = Field(1e-14, ge=0)
    h: float = Field(1e-3, gt=0, description="s, prediction increment")
    sample_period: float = Field(0.0, ge=0, description="s, 0 = continuous control")
    e0_clamp: float = Field(0.0, ge=0, description="rad·s, 0 = off")


class ObserverSpec(_Strict):
    enabled: bool = False
    alpha: float = Field(0.01, gt=0)
    poles: tuple[float, float] = (-0.4, -0.8)
    pole_mode: Literal["design", "effective"] = "design"
    p_on_estimate: bool = False
    clamp: float = Field(0.0, ge=0)
    initial_qhat: tuple[float, float] = (0.01, 0.01)
    initial_qdhat: tuple[float, float] = (0.0, 0.0)

    @model_validator(mode="after")
    def _negative_poles(self):
        if any(p >= 0 for p in self.poles):
            raise ValueError(f"poles must be strictly negative, got {self.poles}")
        return self


class FrictionSpec(_Strict):
    enabled: bool = False
    fs: tuple[float, float] = Field((5.0, 5.0), description="N·m·s/rad")
    fv: tuple[float, float] = Field((5.0, 5.0), description="N·m")
    eps: float = Field(1e-3, gt=0, description="rad/s, tanh smoothing of sign")
    on_position: bool = False


class ReferenceSpec(_Strict):
    omega: tuple[float, float] = (10.0, 10.0)
    xi: tuple[float, float] = (1.0, 1.0)
    amplitude: float = 1.5
    rate: float = Field(5.0, gt=0)
    literal_form: bool = False


class SimulationSpec(_Strict):
    dt: float = Field(1e-4, gt=0)
    t_end: float = Field(4.0, gt=0)
    log_stride: int = Field(10, ge=1)
    divergence_limit: float = Field(1e4, gt=0, description="rad/s")


class InitialSpec(_Strict):
    q: tuple[float, float] = (0.0, 0.0)
    qd: tuple[float, float] = (0.0, 0.0)


class MetricsSpec(_Strict):
    settle_band: float = Field(1e-3, gt=0, description="rad")
    torque_limit: float | None = Field(None, gt=0, description="N·m, reporting only")


class SweepSpec(_Strict):
    param: str | None = None
    values: tuple[float, ...] = ()


class ScenarioConfig(_Strict):
    name: str = "scenario"
    simulation: SimulationSpec = SimulationSpec()
    controller: ControllerSpec = ControllerSpec()
    observer: ObserverSpec = ObserverSpec()
    friction: FrictionSpec = FrictionSpec()
    reference: ReferenceSpec = ReferenceSpec()
    nominal: ArmSpec = ArmSpec()
    plant: PlantSpec = PlantSpec()
    initial: InitialSpec = InitialSpec()
    metrics: MetricsSpec = MetricsSpec()
    sweep: SweepSpec = SweepSpec()

    @model_validator(mode="after")
    def _duration(self):
        s = self.simulation
        if s.t_end < 10 * s.dt:
            raise ValueError(f"simulation.t_end = {s.t_end} must be at least 10*dt = {10 * s.dt}")
        return self


def _format_errors(exc: ValidationError, source: str) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{source}: {path}: {err['msg']}")
    return "\n".join(lines)


def config_from_dict(data: dict, source: str = "<config>") -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, source)) from None


def parse_text(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return config_from_dict(data, source)


def parse_config(path) -> ScenarioConfig:
    """Read and validate a scenario file; OSError propagates for missing files."""
    path = Path(path)
    return parse_text(path.read_text(), str(path))


def defaulted_keys(cfg: BaseModel, prefix: str = "") -> list[str]:
    """Dotted paths of every leaf value that came from a default."""
    out = []
    for name in type(cfg).model_fields:
        value = getattr(cfg, name)
        path = f"{prefix}{name}"
        if isinstance(value, BaseModel):
            if name in cfg.model_fields_set:
                out += defaulted_keys(value, path + ".")
            else:
                out += [path + "." + k for k in _leaf_paths(value)]
        elif name not in cfg.model_fields_set:
            out.append(path)
    return out


def _leaf_paths(m: BaseModel) -> list[str]:
    out = []
    for name in type(m).model_fields:
        v = getattr(m, name)
        out += [f"{name}.{k}" for k in _leaf_paths(v)] if isinstance(v, BaseModel) else [name]
    return out


def to_toml(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(cfg.model_dump(exclude_none=True))


def header_lines(cfg: ScenarioConfig, title: str = "") -> list[str]:
    """Comment header that reproduces the run when fed back to ``parse_text``."""
    lines = [f"# {title}"] if title else []
    lines += [f"# {ln}" if ln else "#" for ln in to_toml(cfg).splitlines()]
    defaults = defaulted_keys(cfg)
    lines.append("# # defaulted: " + (", ".join(defaults) if defaults else "none"))
    lines.append("# # not fixed by the benchmark: " + ", ".join(NON_BENCHMARK_KEYS))
    return lines


def config_from_header(path) -> ScenarioConfig:
    """Recover the resolved configuration echoed at the top of an output file."""
    body = []
    for line in Path(path).read_text().splitlines():
        if not line.startswith("#"):
            break
        body.append(line[2:] if line.startswith("# ") else line[1:])
    text = "\n".join(body)
    # drop the free-text title if present
    start = text.find("name = ")
    return parse_text(text[start:] if start > 0 else text, str(path))


def with_override(cfg: ScenarioConfig, dotted: str, value) -> ScenarioConfig:
    """Copy of ``cfg`` with one leaf replaced; validation reruns."""
    data = cfg.model_dump(exclude_none=True)
    node = data
    keys = dotted.split(".")
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"unknown config path {dotted!r}")
        node = node[k]
    if keys[-1] not in node and keys[-1] not in _optional_leaves(cfg, keys):
        raise ConfigError(f"unknown config path {dotted!r}")
    node[keys[-1]] = value
    return config_from_dict(data, f"override {dotted}={value}")


def _optional_leaves(cfg, keys):
    m = cfg
    for k in keys[:-1]:
        m = getattr(m, k, None)
        if m is None:
            return ()
    return tuple(type(m).model_fields) if isinstance(m, BaseModel) else ()


def to_sim_config(cfg: ScenarioConfig) -> SimConfig:
    c, o, f, r, s = cfg.controller, cfg.observer, cfg.friction, cfg.reference, cfg.simulation
    try:
        observer = ObserverParams(o.alpha, o.poles, o.pole_mode, o.p_on_estimate, o.clamp)
        return SimConfig(
            nominal=cfg.nominal.params(),
            plant=cfg.plant.params(),
            controller=ControllerParams(c.q_w, 0.0 if c.variant == "computed_torque" else c.r_w,
                                        c.h, c.variant),
            reference=RefModelParams(r.omega, r.xi, r.amplitude, r.rate, r.literal_form),
            friction=dyn.FrictionParams(f.fs, f.fv, f.eps, f.on_position) if f.enabled else None,
            observer=observer,
            use_observer=o.enabled,
            initial=dyn.JointState(np.array(cfg.initial.q), np.array(cfg.initial.qd)),
            observer_initial=ObserverState.from_estimates(o.initial_qhat, o.initial_qdhat),
            dt=s.dt, t_end=s.t_end, log_stride=s.log_stride,
            sample_period=c.sample_period, e0_clamp=c.e0_clamp,
            divergence_limit=s.divergence_limit,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def bundled_scenario(name: str) -> Path:
    """Path of a scenario file shipped with the package."""
    path = Path(__file__).parent / "scenarios" / f"{name}.scenario"
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def is_finite_number(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)
