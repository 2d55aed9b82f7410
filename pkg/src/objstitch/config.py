"""
Run configuration: nested dataclasses loaded from JSON or ``section.key = value`` text.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, Optional, Union

from .blending import OCCLUSION_MODES
from .correspondence import DensityConfig
from .energy import EnergyParams
from .evaluation import MsSsimConfig
from .registration import RansacConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MeshConfig:
    rows: int = 16
    cols: int = 16
    lambda_reg: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("mesh needs at least one cell per axis")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")


@dataclass(frozen=True)
class BlendConfig:
    band: Optional[int] = 16  # None blends every pixel
    enabled: bool = True

    def __post_init__(self):
        if self.band is not None and self.band < 0:
            raise ValueError("band must be >= 0 or null")


@dataclass(frozen=True)
class SolverConfig:
    max_cycles: int = 50

    def __post_init__(self):
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")


@dataclass(frozen=True)
class StitchConfig:
    energy: EnergyParams = field(default_factory=EnergyParams)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    msssim: MsSsimConfig = field(default_factory=MsSsimConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    blend: BlendConfig = field(default_factory=BlendConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    occlusion_mode: str = "mark"
    seed: int = 0

    def __post_init__(self):
        if self.occlusion_mode not in OCCLUSION_MODES:
            raise ValueError(f"occlusion_mode must be one of {OCCLUSION_MODES}")

    def resolved(self) -> "StitchConfig":
        return replace(self, energy=self.energy.resolved())

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self.resolved())
        d["msssim"]["weights"] = list(d["msssim"]["weights"])
        return d


def _coerce(value: Any, current: Any, name: str) -> Any:
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, int):
            return value
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _build(cls, data: Dict[str, Any], prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    default = cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {name!r}")
        current = getattr(default, key)
        if is_dataclass(current):
            kwargs[key] = _build(type(current), value, name + ".")
        elif value is None:
            kwargs[key] = None
        elif current is None:
            # the only optional fields are numeric
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}: expected a number or null, got {value!r}")
            kwargs[key] = value
        else:
            kwargs[key] = _coerce(value, current, name)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


def from_dict(data: Dict[str, Any]) -> StitchConfig:
    return _build(StitchConfig, data)


def _parse_scalar(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
            return text[1:-1]
        return text


def parse_assignments(text: str) -> Dict[str, Any]:
    """Parse ``a.b = value`` lines (``#`` comments allowed) into a nested dict."""
    out: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        parts = [p.strip() for p in key.strip().split(".")]
        if not all(parts):
            raise ConfigError(f"line {lineno}: malformed key {key.strip()!r}")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key.strip()!r} conflicts with an earlier value")
        node[parts[-1]] = _parse_scalar(value)
    return out


def merge(base: Dict[str, Any], over: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_config_text(text: str) -> Dict[str, Any]:
    stripped = text.strip()
    if not stripped:
        return {}
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
        return data
    return parse_assignments(text)


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> StitchConfig:
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data = parse_config_text(text)
    if overrides:
        data = merge(data, overrides)
    return from_dict(data)
