"""Pipeline configuration: strict TOML, every field defaulted."""
from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ClassCounts(_Section):
    Normal: int = Field(30, gt=0)
    Faulty: int = Field(27, gt=0)
    FaultyAge: int = Field(24, gt=0)


def _refined_counts():
    return ClassCounts(Normal=20, Faulty=17, FaultyAge=14)


def _domain_list(v):
    for p in v:
        if p % 10 or not 10 <= p <= 100:
            raise ValueError(f"speed domain {p} is not a multiple of 10 in [10, 100]")
    if len(set(v)) != len(v):
        raise ValueError("speed domains must be distinct")
    return sorted(v)


class SimulatorSection(_Section):
    sample_rate_hz: float = Field(12800.0, gt=0)
    ref_duration_s: float = Field(2.0, gt=0)
    counts: ClassCounts = Field(default_factory=ClassCounts)
    domains: list[int] = Field(default_factory=lambda: list(range(10, 101, 10)), min_length=1)
    axes: list[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5, 6], min_length=1)
    export_csv: bool = False
    load_fraction: float = Field(0.5, gt=0)
    noise_level: float = Field(0.02, ge=0)
    sideband_orders: list[float] = Field(default_factory=lambda: [1.0, 2.0])
    faulty_indices: list[float] = Field(default_factory=lambda: [0.03, 0.015])
    age_noise_factor: float = Field(2.0, ge=0)
    age_am_level: float = Field(0.03, ge=0)
    age_am_cutoff_orders: float = Field(3.0, gt=0)
    harmonic_orders: list[int] = Field(default_factory=lambda: [5, 7])
    age_harmonic_levels: list[float] = Field(default_factory=lambda: [0.02, 0.015])

    @field_validator("domains")
    @classmethod
    def _domains(cls, v):
        return _domain_list(v)

    @field_validator("axes")
    @classmethod
    def _axes(cls, v):
        if any(not 1 <= a <= 6 for a in v) or len(set(v)) != len(v):
            raise ValueError("axes must be distinct values in 1..6")
        return sorted(v)

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.sideband_orders) != len(self.faulty_indices):
            raise ValueError("sideband_orders and faulty_indices must have equal length")
        if len(self.harmonic_orders) != len(self.age_harmonic_levels):
            raise ValueError("harmonic_orders and age_harmonic_levels must have equal length")
        return self


class PreprocessSection(_Section):
    theta: Literal["carrier", "zero-crossing"] = "carrier"
    analysis_mode: Literal["d", "q", "magnitude"] = "d"
    family: str = "db4"
    levels: Union[int, Literal["auto"]] = "auto"
    denoise_kind: Literal["soft", "hard"] = "soft"
    threshold: Union[float, Literal["universal"]] = "universal"
    analysis_rate_hz: float = Field(1280.0, gt=0)
    axis: int = Field(4, ge=1, le=6)
    refined_counts: ClassCounts = Field(default_factory=_refined_counts)

    @field_validator("levels")
    @classmethod
    def _levels(cls, v):
        if v != "auto" and v < 1:
            raise ValueError("levels must be >= 1 or 'auto'")
        return v

    @field_validator("threshold")
    @classmethod
    def _thr(cls, v):
        if v != "universal" and v < 0:
            raise ValueError("threshold must be >= 0 or 'universal'")
        return v


class ScalogramSection(_Section):
    wavelet: Literal["morlet"] = "morlet"
    omega0: float = Field(6.0, gt=0)
    f_min_hz: float = Field(2.0, gt=0)
    f_max_hz: float = Field(600.0, gt=0)
    n_scales: int = Field(64, ge=2)
    n_times: int = Field(256, ge=2)
    center: bool = True
    normalization: Literal["log", "linear"] = "log"
    eps: float = Field(1e-12, gt=0)
    image_size: int = Field(224, ge=2)
    style: Literal["grey", "rgb"] = "grey"
    low_frequency_top: bool = True
    write_matrices: bool = True

    @model_validator(mode="after")
    def _band(self):
        if not self.f_min_hz < self.f_max_hz:
            raise ValueError("f_min_hz must be below f_max_hz")
        return self


class PlanSection(_Section):
    domains: list[int] = Field(default_factory=lambda: list(range(10, 101, 10)), min_length=2)
    alpha_schedule: list[float] = Field(default_factory=lambda: [0.5], min_length=1)
    train_fraction: float = Field(0.7, ge=0, le=1)

    @field_validator("domains")
    @classmethod
    def _domains(cls, v):
        return _domain_list(v)

    @field_validator("alpha_schedule")
    @classmethod
    def _alpha(cls, v):
        if any(not 0 <= a <= 1 for a in v):
            raise ValueError("alpha values must lie in [0, 1]")
        return v


class TrainingSection(_Section):
    input_size: int = Field(64, ge=4)
    conv_channels: list[int] = Field(default_factory=lambda: [8, 16], min_length=1)
    kernel_size: int = Field(3, ge=1)
    dense: list[int] = Field(default_factory=lambda: [32])
    n_classes: int = 3
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(30, ge=0)
    learning_rate: float = Field(1e-4, ge=0)
    l2: float = Field(1e-5, ge=0)
    optimizer: Literal["sgd"] = "sgd"
    momentum: float = Field(0.9, ge=0, lt=1)

    @field_validator("n_classes")
    @classmethod
    def _three(cls, v):
        if v != 3:
            raise ValueError("the classifier has exactly 3 outputs (Normal, Faulty, FaultyAge)")
        return v


class PathsSection(_Section):
    out: str = "ismd-out"


class PipelineConfig(_Section):
    seed: int = Field(0, ge=0, lt=2 ** 64)
    simulator: SimulatorSection = Field(default_factory=SimulatorSection)
    preprocess: PreprocessSection = Field(default_factory=PreprocessSection)
    scalogram: ScalogramSection = Field(default_factory=ScalogramSection)
    plan: PlanSection = Field(default_factory=PlanSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    paths: PathsSection = Field(default_factory=PathsSection)

    @model_validator(mode="after")
    def _cross(self):
        if self.scalogram.f_max_hz > self.preprocess.analysis_rate_hz / 2:
            raise ValueError("scalogram.f_max_hz exceeds half of preprocess.analysis_rate_hz")
        if not set(self.plan.domains) <= set(self.simulator.domains):
            raise ValueError("plan.domains must be a subset of simulator.domains")
        if self.preprocess.axis not in self.simulator.axes:
            raise ValueError("preprocess.axis must be one of simulator.axes")
        if self.preprocess.analysis_rate_hz > self.simulator.sample_rate_hz:
            raise ValueError("preprocess.analysis_rate_hz exceeds simulator.sample_rate_hz")
        return self

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def to_toml(self) -> str:
        return tomli_w.dumps(self.canonical())


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        if err["type"] == "extra_forbidden":
            lines.append(f"unknown key '{loc}'")
        else:
            lines.append(f"{loc or '<root>'}: {err['msg']}")
    return "; ".join(lines)


def config_from_dict(data: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def parse_config_text(text: str, source: str = "<config>") -> PipelineConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: TOML syntax error: {exc}") from None
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


PROFILES = ("default", "ci", "tiny")


def load_profile(name: str) -> PipelineConfig:
    if name == "default":
        return PipelineConfig()
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    text = resources.files("ismd").joinpath("profiles", f"{name}.toml").read_text()
    return parse_config_text(text, f"profile:{name}")
