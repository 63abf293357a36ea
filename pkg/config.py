from __future__ import annotations

import hashlib
import json
import math
import os
from enum import Enum
from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator


SUPPORTED_CONSTELLATIONS = {
    "psk": {2, 4, 8, 16},
    "qam": {4, 16, 64},
}
DEFAULT_THREADS = 1


class Scheme(str, Enum):
    IM_MH = "im-mh"
    IM_DSMH = "im-dsmh"
    MH_BASELINE = "mh-baseline"


class CsiMode(str, Enum):
    PERFECT = "perfect"
    IMPERFECT = "imperfect"


class JamVariant(str, Enum):
    NORMALIZED = "normalized"
    PAPER_LITERAL = "paper-literal"


class ConfigError(ValueError):
    pass


class Geometry(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d: float = Field(default=1.0, gt=0)
    r1: float = Field(default=0.1, gt=0)
    r2: float = Field(default=0.1, gt=0)
    wavelength: float = Field(default=0.01, gt=0)
    beta: float = Field(default=1.0, gt=0)


class SystemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    N: int = 8
    I: int = 2
    U: int = 1
    M: int = 2
    constellation: str = "psk"
    xi: float = Field(default=10.0, ge=0)
    snr_db: float = 20.0
    jnr_db: float = 2.0
    sigma_eps_sq: float = Field(default=0.0, ge=0)
    nlos_scale: float = Field(default=1.0, gt=0)
    jam_modes: int | None = None
    exclude_zero_second_hop: bool = True
    activation_map: str = "lexicographic"
    los_normalization: str = "unit"
    geometry: Geometry = Geometry()

    @field_validator("N")
    @classmethod
    def _check_n(cls, value: int) -> int:
        if value < 2 or value % 2:
            raise ValueError("N must be an even number of at least 2")
        return value

    @field_validator("U")
    @classmethod
    def _check_u(cls, value: int) -> int:
        if value < 1:
            raise ValueError("U must be at least 1")
        return value

    @field_validator("activation_map")
    @classmethod
    def _check_activation_map(cls, value: str) -> str:
        if value not in ("lexicographic", "rotational"):
            raise ValueError("activation_map must be 'lexicographic' or 'rotational'")
        return value

    @field_validator("los_normalization")
    @classmethod
    def _check_los_normalization(cls, value: str) -> str:
        if value not in ("unit", "geometric"):
            raise ValueError("los_normalization must be 'unit' or 'geometric'")
        return value

    @model_validator(mode="after")
    def _check_relations(self) -> "SystemConfig":
        if not 1 <= self.I <= self.N:
            raise ValueError(f"I must satisfy 1 <= I <= N (got I={self.I}, N={self.N})")
        sizes = SUPPORTED_CONSTELLATIONS.get(self.constellation)
        if sizes is None:
            raise ValueError(f"constellation must be one of {sorted(SUPPORTED_CONSTELLATIONS)}")
        if self.M not in sizes:
            raise ValueError(f"M={self.M} is not supported for {self.constellation}")
        if self.jam_modes is not None and not 0 <= self.jam_modes <= self.N:
            raise ValueError(f"jam_modes must lie in [0, N] (got {self.jam_modes})")
        if self.sigma_eps_sq and self.sigma_eps_sq >= self.nlos_scale / (1.0 + self.xi):
            raise ValueError(
                "sigma_eps_sq must stay below nlos_scale / (1 + xi) "
                f"({self.nlos_scale / (1.0 + self.xi):.6g})"
            )
        return self

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.M))

    @property
    def jam_size(self) -> int:
        return self.I if self.jam_modes is None else self.jam_modes

    @property
    def mean_channel_power(self) -> float:
        # unit and geometric normalisations both fix the mean LoS power to 1
        if math.isinf(self.xi):
            return 1.0
        return (self.xi + self.nlos_scale) / (1.0 + self.xi)

    @property
    def noise_var(self) -> float:
        return self.mean_channel_power / 10 ** (self.snr_db / 10)

    @property
    def jam_var(self) -> float:
        return self.noise_var * 10 ** (self.jnr_db / 10)

    def with_changes(self, **changes) -> "SystemConfig":
        payload = self.model_dump()
        payload.update(changes)
        return SystemConfig.model_validate(payload)


class SimulationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    target_errors: int = Field(default=100, ge=1)
    max_trials: int = Field(default=200_000, ge=1)
    block_size: int = Field(default=2_000, ge=1)


class SweepAxis(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    values: list[float]

    @field_validator("values")
    @classmethod
    def _check_values(cls, value: list[float]) -> list[float]:
        if not value:
            raise ValueError("sweep values must not be empty")
        return value


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scheme: Scheme = Scheme.IM_MH
    csi: CsiMode = CsiMode.PERFECT
    variant: JamVariant = JamVariant.NORMALIZED
    seed: int = 1
    snr_db: list[float] = Field(default_factory=lambda: [20.0])
    system: SystemConfig = SystemConfig()
    simulation: SimulationSettings = SimulationSettings()
    sweep: SweepAxis | None = None

    @field_validator("snr_db", mode="before")
    @classmethod
    def _coerce_snr(cls, value):
        if isinstance(value, (int, float)):
            return [float(value)]
        return value

    @model_validator(mode="after")
    def _check_sweep_axis(self) -> "RunConfig":
        if self.sweep is not None and self.sweep.name not in SystemConfig.model_fields:
            raise ValueError(f"sweep.name must be a system field (got {self.sweep.name!r})")
        return self

    def system_at(self, snr_db: float, **changes) -> SystemConfig:
        return self.system.with_changes(snr_db=snr_db, **changes)


def get_thread_count() -> int:
    raw_value = os.environ.get("OAMHOP_THREADS")
    if not raw_value:
        return DEFAULT_THREADS
    try:
        return max(1, int(raw_value))
    except ValueError:
        return DEFAULT_THREADS


def get_log_level() -> str:
    return os.environ.get("OAMHOP_LOG_LEVEL", "WARNING").upper()


def default_run_config() -> RunConfig:
    return RunConfig()


def _describe_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(piece) for piece in item["loc"]) or "config"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def normalize_run_config(raw: dict | None) -> RunConfig:
    try:
        return RunConfig.model_validate(raw or {})
    except ValidationError as error:
        raise ConfigError(_describe_validation_error(error)) from error


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return default_run_config()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as error:
        raise ConfigError(f"cannot read config {path}: {error}") from error
    except yaml.YAMLError as error:
        raise ConfigError(f"config {path} is not valid YAML: {error}") from error
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return normalize_run_config(raw)


def dump_run_config(run: RunConfig) -> str:
    return yaml.safe_dump(run.model_dump(mode="json"), sort_keys=True)


def config_hash(run: RunConfig) -> str:
    canonical = json.dumps(run.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
