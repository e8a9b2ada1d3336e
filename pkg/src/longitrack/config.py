"""Plain-text ``key = value`` configuration files."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .errors import ConfigError


def parse_kv_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(value: str, default, key: str):
    if isinstance(default, bool):
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, tuple):
        return tuple(type(default[0])(v.strip()) for v in value.split(","))
    return type(default)(value)


def dataclass_from_kv(cls, values: dict[str, str], source: str = "config"):
    """Build dataclass ``cls`` from string values; unknown keys are errors."""
    defaults = cls()
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"{source}: unknown key {key!r}")
        try:
            kwargs[key] = _coerce(value, getattr(defaults, key), key)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key}: {value!r}") from exc
    return cls(**kwargs)


def dataclass_to_kv(obj) -> str:
    lines = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
