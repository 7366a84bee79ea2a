"""Global configuration: one JSON document with a versioned schema.

Every tunable of the toolkit lives here with an explicit default; unknown
keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from becbench.fitting import GridSpec
from becbench.imaging import ProbeParams
from becbench.physics import PhysicalConstants, TrapGeometry
from becbench.simulator import CampaignConfig, DimpleConfig

__all__ = [
    "ConfigError",
    "TrapConfig",
    "ImageConfig",
    "ReservoirConfig",
    "GlobalConfig",
    "load_config",
    "config_from_dict",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class TrapConfig:
    """Crossed-dipole-trap frequencies at a reference beam power.

    Frequencies scale with the square root of the power, as for an optical
    potential that is harmonic near its bottom.  The defaults are
    calibrated so the nominal benchmark cloud (3e6 atoms at 1 uK probed at
    the reference power) sits at peak phase-space density 0.25.
    """

    frequency_x_hz: float = 85.0
    frequency_y_hz: float = 85.0
    frequency_z_hz: float = 98.42228
    reference_power_mw: float = 1100.0

    def __post_init__(self):
        if min(self.frequency_x_hz, self.frequency_y_hz,
               self.frequency_z_hz) <= 0:
            raise ConfigError("trap frequencies must be positive")
        if self.reference_power_mw <= 0:
            raise ConfigError("reference power must be positive")

    def geometry_at(self, power_mw: float) -> TrapGeometry:
        scale = math.sqrt(power_mw / self.reference_power_mw)
        base = TrapGeometry.from_frequencies_hz(
            self.frequency_x_hz, self.frequency_y_hz, self.frequency_z_hz)
        return base.scaled(scale)


@dataclass(frozen=True)
class ImageConfig:
    pixel_size_um: float = 3.5
    width: int = 65
    height: int = 65

    def __post_init__(self):
        if self.pixel_size_um <= 0:
            raise ConfigError("pixel size must be positive")
        if self.width < 8 or self.height < 8:
            raise ConfigError("image must be at least 8x8 pixels")


@dataclass(frozen=True)
class ReservoirConfig:
    """Thermal cloud feeding the dimple, held at a fixed trap power."""

    atom_number: float = 1.5e6
    temperature: float = 0.8e-6
    stop_power_mw: float = 1000.0

    def __post_init__(self):
        if self.atom_number < 1 or self.temperature <= 0:
            raise ConfigError("reservoir must hold atoms at finite temperature")
        if self.stop_power_mw <= 0:
            raise ConfigError("stop power must be positive")


@dataclass(frozen=True)
class BenchmarkConfig:
    """Nominal cloud probed by the dispersive benchmark pulse."""

    atom_number: float = 3e6
    temperature: float = 1e-6

    def __post_init__(self):
        if self.atom_number < 1 or self.temperature <= 0:
            raise ConfigError("benchmark cloud must hold atoms at finite "
                              "temperature")


@dataclass(frozen=True)
class GlobalConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 20260809
    output_dir: str = "out"
    eta_reference: str = "critical"
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    trap: TrapConfig = field(default_factory=TrapConfig)
    probe: ProbeParams = field(default_factory=ProbeParams)
    image: ImageConfig = field(default_factory=ImageConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    fit_grid: GridSpec = field(default_factory=GridSpec)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    dimple: DimpleConfig = field(default_factory=DimpleConfig)
    reservoir: ReservoirConfig = field(default_factory=ReservoirConfig)

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}; this "
                f"build reads version {SCHEMA_VERSION}")
        if self.eta_reference not in ("critical", "temperature"):
            raise ConfigError("eta_reference must be 'critical' or "
                              "'temperature'")

    def benchmark_trap(self) -> TrapGeometry:
        return self.trap.geometry_at(self.campaign.benchmark_power_mw)

    def campaign_with_seed(self, seed: int | None = None) -> CampaignConfig:
        return dataclasses.replace(self.campaign,
                                   seed=self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        def convert(obj):
            if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
                return {f.name: convert(getattr(obj, f.name))
                        for f in dataclasses.fields(obj)}
            if isinstance(obj, (list, tuple)):
                return [convert(v) for v in obj]
            return obj

        return convert(self)


_SECTION_TYPES = {
    "constants": PhysicalConstants,
    "trap": TrapConfig,
    "probe": ProbeParams,
    "image": ImageConfig,
    "benchmark": BenchmarkConfig,
    "fit_grid": GridSpec,
    "campaign": CampaignConfig,
    "dimple": DimpleConfig,
    "reservoir": ReservoirConfig,
}


def _build_section(cls, data, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(
            f"unknown key(s) in section {section!r}: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in section {section!r}: {exc}") \
            from exc


def config_from_dict(data: dict) -> GlobalConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be an object")
    top_fields = {f.name for f in dataclasses.fields(GlobalConfig)}
    unknown = set(data) - top_fields
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        else:
            kwargs[key] = value
    try:
        return GlobalConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> GlobalConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(data)
