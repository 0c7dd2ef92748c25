"""Experiment configuration schemas and the key=value config file loader.

Config files are flat ``key=value`` lines with dotted keys::

    kind=bounds
    volume.family=lattice
    volume.params=1,100
    lambda=10
    density.a=-1
    density.b=1
    spectral.z_re=1
    spectral.z_im=0.5
    spectral.s=0.5
    trials=2000
    seed=7

Lines are tokenized by python-dotenv's parser (so comments, quoting and
``export`` prefixes behave as in a .env file), nested on dots, and validated
here. Unknown keys are rejected by name.
"""
from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path
from typing import Any, Literal, Optional

from dotenv.parser import parse_stream
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, field_validator, model_validator

from core.errors import ConfigError
from models.operator import DisorderModel, UniformDensity

_FORBID = {"extra": "forbid"}


def _split_list(v):
    if isinstance(v, str):
        return [p.strip() for p in v.split(",") if p.strip()]
    return v


class SpectralParams(BaseModel):
    """Spectral parameter z (off the real axis) and fractional power s."""

    z_re: float = 0.0
    z_im: float = 0.5
    s: float = Field(0.5, gt=0, lt=1)

    model_config = {"frozen": True, "extra": "forbid"}

    @field_validator("z_im")
    @classmethod
    def _off_axis(cls, v):
        if v == 0:
            raise ValueError("Im z must be non-zero")
        return v

    @property
    def z(self) -> complex:
        return complex(self.z_re, self.z_im)


class VolumeConfig(BaseModel):
    """Graph family, builder parameters and the finite volume inside it.

    ``file`` loads a saved graph instead of building one. ``radius`` restricts
    the volume to a ball around ``center`` (a vertex label; default origin).
    """

    family: Optional[str] = None
    params: list[int] = Field(default_factory=list)
    file: Optional[str] = None
    radius: Optional[int] = Field(default=None, ge=0)
    center: Optional[str] = None

    model_config = _FORBID

    @field_validator("params", mode="before")
    @classmethod
    def _split_params(cls, v):
        return _split_list(v)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.family is None) == (self.file is None):
            raise ValueError("set exactly one of volume.family or volume.file")
        return self


class SawConfig(BaseModel):
    origin: Optional[str] = None
    n_max: int = Field(8, ge=0)

    model_config = _FORBID


class AssumptionConfig(BaseModel):
    which: int = Field(1, ge=1, le=2)
    alpha: float = Field(0.5, gt=0, lt=1)
    beta: float = Field(0.5, gt=0, lt=1)
    p: list[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0])
    radius: int = Field(4, ge=0)
    y: Optional[str] = None
    o: Optional[str] = None
    critical: bool = True

    model_config = _FORBID

    @field_validator("p", mode="before")
    @classmethod
    def _split_p(cls, v):
        return _split_list(v)


class TargetsConfig(BaseModel):
    """Pairs (x, y) for moment experiments: x plus explicit y or distances."""

    x: Optional[str] = None
    y: Optional[str] = None
    distances: list[int] = Field(default_factory=list)

    model_config = _FORBID

    @field_validator("distances", mode="before")
    @classmethod
    def _split_distances(cls, v):
        return _split_list(v)


class DynamicsConfig(BaseModel):
    a: float = -1e3
    b: float = 1e3
    p: float = Field(1.0, ge=0)
    origin: Optional[str] = None
    tmin: float = Field(0.1, gt=0)
    tmax: float = Field(200.0, gt=0)
    points: int = Field(64, ge=2)

    model_config = _FORBID

    @model_validator(mode="after")
    def _ordered(self):
        if not self.a < self.b:
            raise ValueError("dynamics interval needs a < b")
        if not self.tmin < self.tmax:
            raise ValueError("dynamics needs tmin < tmax")
        return self


class LemmaConfig(BaseModel):
    which: Literal["approx", "stone", "graf"] = "approx"
    epsilons: list[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    a: float = 0.0
    b: float = 1.0
    jumps: list[float] = Field(default_factory=lambda: [0.0])
    values: list[float] = Field(default_factory=lambda: [0.0, 1.0])
    margin: float = Field(100.0, gt=0)

    model_config = _FORBID

    @field_validator("epsilons", "jumps", "values", mode="before")
    @classmethod
    def _split_lists(cls, v):
        return _split_list(v)

    @field_validator("epsilons")
    @classmethod
    def _positive(cls, v):
        if not v or any(e <= 0 for e in v):
            raise ValueError("epsilons must be positive")
        return v


class ThresholdConfig(BaseModel):
    """Large-disorder thresholds. Without alpha_star it is estimated on the volume."""

    s: list[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75])
    alpha_star: Optional[float] = Field(default=None, gt=0, le=1)
    beta_star: Optional[float] = Field(default=None, gt=0, le=1)
    radius: int = Field(4, ge=1)

    model_config = _FORBID

    @field_validator("s", mode="before")
    @classmethod
    def _split_s(cls, v):
        return _split_list(v)


ExperimentKind = Literal[
    "graph", "saw", "assumption", "moments", "bounds", "dynamics", "lemmas", "correlator", "threshold"
]


class ExperimentConfig(BaseModel):
    """One experiment: what to run, on which volume, with which disorder."""

    kind: ExperimentKind
    volume: Optional[VolumeConfig] = None
    lam: Optional[float] = Field(default=None, gt=0, alias="lambda")
    density: UniformDensity = Field(default_factory=UniformDensity)
    seed: int = Field(0, ge=0, lt=2**64)
    spectral: SpectralParams = Field(default_factory=SpectralParams)
    trials: int = Field(100, ge=2)
    workers: Optional[int] = Field(default=None, ge=1)
    output: Optional[str] = None
    large_disorder: bool = False
    moment: Literal["fractional", "second"] = "fractional"
    targets: TargetsConfig = Field(default_factory=TargetsConfig)
    saw: SawConfig = Field(default_factory=SawConfig)
    assumption: AssumptionConfig = Field(default_factory=AssumptionConfig)
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    lemmas: LemmaConfig = Field(default_factory=LemmaConfig)
    threshold: ThresholdConfig = Field(default_factory=ThresholdConfig)

    model_config = {"extra": "forbid", "populate_by_name": True}

    @model_validator(mode="after")
    def _needs(self):
        needs_volume = self.kind != "lemmas" and not (
            self.kind == "threshold" and self.threshold.alpha_star is not None
        )
        if needs_volume and self.volume is None:
            raise ValueError(f"kind={self.kind} needs volume.family or volume.file")
        if self.kind in ("moments", "bounds", "dynamics", "correlator") and self.lam is None:
            raise ValueError(f"kind={self.kind} needs lambda")
        return self

    def disorder(self) -> DisorderModel:
        return DisorderModel(**{"lambda": self.lam, "density": self.density, "seed": self.seed})

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:12]


# ---- Loading ----

def _nest(flat: dict[str, str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = out
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key {key!r} nests under a plain value", key=key)
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"key {key!r} is also used as a section", key=key)
        node[parts[-1]] = value
    return out


def parse_config_text(text: str) -> ExperimentConfig:
    flat: dict[str, str] = {}
    lines: dict[str, int] = {}
    for binding in parse_stream(io.StringIO(text)):
        if binding.error:
            raise ConfigError(
                f"line {binding.original.line}: cannot parse {binding.original.string.strip()!r}",
                line=binding.original.line,
            )
        if binding.key is None:
            continue
        if binding.key in flat:
            raise ConfigError(
                f"line {binding.original.line}: duplicate key {binding.key!r}",
                line=binding.original.line,
                key=binding.key,
            )
        if binding.value is None:
            raise ConfigError(
                f"line {binding.original.line}: key {binding.key!r} has no value",
                line=binding.original.line,
                key=binding.key,
            )
        flat[binding.key] = binding.value
        lines[binding.key] = binding.original.line
    return config_from_mapping(flat, lines=lines)


def config_from_mapping(flat: dict[str, str], *, lines: Optional[dict[str, int]] = None) -> ExperimentConfig:
    """Validate a flat dotted-key mapping (config file lines or CLI options)."""
    lines = lines or {}
    try:
        return ExperimentConfig.model_validate(_nest(flat))
    except PydanticValidationError as exc:
        err = exc.errors()[0]
        key = ".".join(str(p) for p in err["loc"]) or None
        if key == "lam":
            key = "lambda"
        line = None
        if key:
            line = lines.get(key) or min((n for k, n in lines.items() if k.startswith(key + ".")), default=None)
        where = f"line {line}: " if line else ""
        raise ConfigError(f"{where}{key}: {err['msg']}" if key else err["msg"], line=line, key=key) from None


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config_text(text)


__all__ = [
    "SpectralParams",
    "VolumeConfig",
    "SawConfig",
    "AssumptionConfig",
    "TargetsConfig",
    "DynamicsConfig",
    "LemmaConfig",
    "ThresholdConfig",
    "ExperimentConfig",
    "parse_config_text",
    "config_from_mapping",
    "load_config",
]
