"""Dataclass configs filled from ``key=value`` files and command-line flags."""
import dataclasses
import typing
from dataclasses import dataclass, field
from typing import List, Optional

__all__ = [
    "ConfigError",
    "MeshConfig",
    "FieldConfig",
    "RationalConfig",
    "read_config_file",
    "build_config",
    "config_items",
    "format_value",
]


class ConfigError(ValueError):
    """Invalid configuration; reported with exit code 2."""


@dataclass
class MeshConfig:
    dim: int = 2
    n: int = 30
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    mesh_file: Optional[str] = None


@dataclass
class FieldConfig:
    nu: float = 0.6
    range: float = 0.5
    sigma: float = 1.0
    sigma_eps: float = 0.1
    boundary: str = "neumann"


@dataclass
class RationalConfig:
    m: int = 2
    delta: str = "zero"
    algo: str = "brasil"
    lumped: bool = True


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config file ({exc.strerror})") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if not key.isidentifier():
                raise ConfigError(f"{path}:{lineno}: invalid key {key!r}")
            values[key] = (val, f"{path}:{lineno}")
    return values


def _base_type(tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return _base_type(args[0])[0], True
    return tp, False


def _coerce(tp, text, where, key):
    base, optional = _base_type(tp)
    if isinstance(text, str) and optional and text.strip().lower() in ("", "none"):
        return None
    try:
        if typing.get_origin(base) in (list, List):
            (inner,) = typing.get_args(base)
            if isinstance(text, (list, tuple)):
                items = list(text)
            else:
                items = [t for t in (s.strip() for s in str(text).split(",")) if t]
            return [_coerce(inner, t, where, key) for t in items]
        if base is bool:
            if isinstance(text, bool):
                return text
            low = str(text).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if base is int:
            f = float(text)
            if f != int(f):
                raise ValueError(f"not an integer: {text!r}")
            return int(f)
        if base is float:
            return float(text)
        return str(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from exc


def build_config(cls, file_values=None, overrides=None):
    """Instantiate ``cls`` from file values overridden by explicit flags."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, (val, where) in (file_values or {}).items():
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r} for this command")
        kwargs[key] = _coerce(hints[key], val, where, key)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        kwargs[key] = _coerce(hints[key], val, f"--{key.replace('_', '-')}", key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "none" if v is None else str(v)


def config_items(cfg):
    return [(f.name, format_value(getattr(cfg, f.name))) for f in dataclasses.fields(cfg)]
