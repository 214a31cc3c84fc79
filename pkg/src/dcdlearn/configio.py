"""Flat ``key = value`` configs, atomic writes, and dataclass coercion."""

from __future__ import annotations

import dataclasses
import os
import tempfile
import typing
from pathlib import Path

from .errors import ConfigError


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_kv(text, str(path))


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def format_kv(mapping: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in mapping.items())


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        non_none = [a for a in args if a is not type(None)]
        if raw.lower() in ("none", "null", ""):
            return None
        return _coerce(raw, non_none[0], key)
    if origin is tuple:
        elem = args[0]
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_coerce(p, elem, key) for p in parts)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def from_kv(cls, mapping: dict, aliases: dict[str, str] | None = None, base=None):
    """Build dataclass ``cls`` from string values, starting from ``base`` or defaults.

    ``aliases`` maps file keys to field names. Unknown keys are rejected.
    """
    aliases = aliases or {}
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for key, raw in mapping.items():
        name = aliases.get(key, key)
        if name not in names:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        updates[name] = raw if not isinstance(raw, str) else _coerce(raw, hints[name], key)
    obj = base if base is not None else cls()
    obj = dataclasses.replace(obj, **updates)
    validate = getattr(obj, "validate", None)
    if validate is not None:
        validate()
    return obj


def to_kv(obj, aliases: dict[str, str] | None = None) -> dict:
    reverse = {v: k for k, v in (aliases or {}).items()}
    return {reverse.get(f.name, f.name): getattr(obj, f.name) for f in dataclasses.fields(obj)}
