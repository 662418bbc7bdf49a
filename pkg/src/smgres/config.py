"""Scenario configuration: YAML schema, overrides, presets."""
from __future__ import annotations

import copy
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, SmgError
from .metrics import MODES
from .model import BranchParams, SmgParams
from .sim import DEFAULT_DT, DisturbanceSchedule, Perturbation, SecondaryControl, check_step_size
from .sysid import ASYMPTOTES, WEIGHTINGS, SweepPlan

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BranchCfg(_Strict):
    id: str
    kind: Literal["droop", "integral-droop"]
    L: float
    r: float = 0.0
    R: Optional[float] = None
    C_h: Optional[float] = None


class SystemCfg(_Strict):
    branches: list[BranchCfg]
    C_eq: float
    v_ref: float
    v_n: float
    P_load_base: float = 0.0


class LoadStepCfg(_Strict):
    time: float
    delta_P: float


class PerturbationCfg(_Strict):
    amplitude: float
    frequency: float
    start: float = 0.0


class ScheduleCfg(_Strict):
    t_end: float
    load_steps: list[LoadStepCfg] = Field(default_factory=list)
    perturbation: Optional[PerturbationCfg] = None


class SecondaryCfg(_Strict):
    enabled: bool = False
    k_i: float = 5.0
    target: Optional[float] = None


class SimulationCfg(_Strict):
    dt: float = DEFAULT_DT
    decimate: int = Field(20, ge=1)


class MetricsCfg(_Strict):
    tau1: Optional[float] = None
    tau2: Optional[float] = None
    mode: Literal[MODES] = "deviation-from-nominal"  # type: ignore[valid-type]
    rocov_window: int = Field(11, ge=1)


class SweepPlanCfg(_Strict):
    frequencies: Optional[list[float]] = None
    f_min_hz: float = 0.1
    f_max_hz: float = 1000.0
    n_points: int = Field(30, ge=1)
    amplitude: float = 10.0
    settle_periods: int = 5
    measure_periods: int = 10
    min_measure_time: float = 0.2


class IdentifyCfg(_Strict):
    order: int = Field(9, ge=1)
    max_iterations: int = Field(30, ge=1)
    weighting: Literal[WEIGHTINGS] = "inverse-magnitude"  # type: ignore[valid-type]
    asymptote: Literal[ASYMPTOTES] = "none"  # type: ignore[valid-type]
    base_p_load: Optional[float] = None
    import_csv: Optional[str] = None


class BodeCfg(_Strict):
    w_min: float = 0.1
    w_max: float = 1e6
    n_points: int = Field(200, ge=2)


class CustomTfCfg(_Strict):
    """A pole/residue model given directly, e.g. a sanity fixture for the norm table."""

    label: str
    poles: list[tuple[float, float]]
    residues: list[tuple[float, float]]
    D: float = 0.0
    E: float = 0.0


class NormsCfg(_Strict):
    C_eq_values: Optional[list[float]] = None
    bode: BodeCfg = Field(default_factory=BodeCfg)
    custom: list[CustomTfCfg] = Field(default_factory=list)


class SweepCfg(_Strict):
    parameter: Optional[str] = None
    values: list[float] = Field(default_factory=list)
    command: Literal["simulate", "norms", "both"] = "both"


class OutputCfg(_Strict):
    plots: bool = False


class ScenarioConfig(_Strict):
    schema_version: Literal[1]
    name: str = "scenario"
    system: SystemCfg
    schedule: ScheduleCfg
    secondary: SecondaryCfg = Field(default_factory=SecondaryCfg)
    simulation: SimulationCfg = Field(default_factory=SimulationCfg)
    metrics: MetricsCfg = Field(default_factory=MetricsCfg)
    sweep_plan: SweepPlanCfg = Field(default_factory=SweepPlanCfg)
    identify: IdentifyCfg = Field(default_factory=IdentifyCfg)
    norms: NormsCfg = Field(default_factory=NormsCfg)
    sweep: SweepCfg = Field(default_factory=SweepCfg)
    output: OutputCfg = Field(default_factory=OutputCfg)

    @model_validator(mode="after")
    def _domain_invariants(self):
        try:
            params = self.params()
            self.schedule_obj()
            self.secondary_obj()
            self.sweep_plan_obj()
            check_step_size(params, self.simulation.dt)
            for c in self.norms.C_eq_values or ():
                params.with_changes(C_eq=c)
        except SmgError as exc:
            key = getattr(exc, "key", None)
            raise ValueError(f"{key}: {exc}" if key else str(exc)) from exc
        return self

    def params(self) -> SmgParams:
        s = self.system
        branches = [BranchParams(b.id, b.kind, L=b.L, r=b.r, R=b.R, C_h=b.C_h) for b in s.branches]
        return SmgParams(branches, C_eq=s.C_eq, v_ref=s.v_ref, v_n=s.v_n, P_load_base=s.P_load_base)

    def schedule_obj(self) -> DisturbanceSchedule:
        sc = self.schedule
        pert = None
        if sc.perturbation is not None:
            p = sc.perturbation
            pert = Perturbation(p.amplitude, p.frequency, p.start)
        return DisturbanceSchedule(sc.t_end, tuple((s.time, s.delta_P) for s in sc.load_steps), pert)

    def secondary_obj(self) -> SecondaryControl:
        return SecondaryControl(self.secondary.enabled, self.secondary.k_i, self.secondary.target)

    def sweep_plan_obj(self) -> SweepPlan:
        sp = self.sweep_plan
        kw = dict(amplitude=sp.amplitude, settle_periods=sp.settle_periods,
                  measure_periods=sp.measure_periods, min_measure_time=sp.min_measure_time)
        if sp.frequencies is not None:
            return SweepPlan(tuple(sp.frequencies), **kw)
        return SweepPlan.log_spaced(sp.f_min_hz, sp.f_max_hz, sp.n_points, **kw)

    def event_time(self) -> float:
        steps = self.schedule.load_steps
        return steps[0].time if steps else 0.0

    def dump(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def _key_line(text: str, loc) -> int | None:
    """Best-effort 1-based source line of a dotted key location in YAML text."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    line = None
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if k.value == str(part):
                    line, node = k.start_mark.line + 1, v
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def _set_dotted(data: dict, path: str, value) -> None:
    parts = path.split(".")
    cur = data
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(cur, list):
            try:
                idx = int(part)
                cur[idx]
            except (ValueError, IndexError):
                raise ConfigError(f"override {path!r}: bad list index {part!r}", key=path) from None
            if last:
                cur[idx] = value
            else:
                cur = cur[idx]
        elif isinstance(cur, dict):
            if last:
                cur[part] = value
            else:
                if cur.get(part) is None:
                    cur[part] = {}
                cur = cur[part]
        else:
            raise ConfigError(f"override {path!r}: {part!r} is not a container", key=path)


def parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key=value", key=item)
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: cannot parse value: {exc}", key=key) from exc
    return key.strip(), value


def build_config(data, overrides=(), source: str = "<config>", text: str | None = None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    data = copy.deepcopy(data)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_dotted(data, key, value)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(err["loc"])
        key = ".".join(str(p) for p in loc) or "<root>"
        line = _key_line(text, loc) if text is not None and loc else None
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {key}: {err['msg']}", key=key) from None


def preset_names() -> list[str]:
    root = resources.files("smgres") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_path(name: str):
    path = resources.files("smgres") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}",
                          key="preset")
    return path


def load_config(path_or_preset, overrides=()) -> ScenarioConfig:
    """Load a YAML scenario file, or a bundled preset by name."""
    p = Path(str(path_or_preset))
    if p.is_file():
        text = p.read_text()
        source = str(p)
    else:
        ref = preset_path(str(path_or_preset))
        text = ref.read_text()
        source = f"preset:{path_or_preset}"
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    return build_config(data, overrides, source=source, text=text)
