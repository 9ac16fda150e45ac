"""Sectioned ``key = value`` config files with strict, typed parsing."""
from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from pathlib import Path
from typing import Any, Mapping

from timecl.errors import ConfigError


def read_sections(source: str | Path) -> dict[str, dict[str, str]]:
    """Parse a config file (or literal text) into ordered ``{section: {key: raw}}``."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # keep key case
    try:
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                         and Path(source).exists()):
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = str(source)
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def write_sections(sections: Mapping[str, Mapping[str, Any]]) -> str:
    out = io.StringIO()
    for i, (name, values) in enumerate(sections.items()):
        if i:
            out.write("\n")
        out.write(f"[{name}]\n")
        for key, value in values.items():
            out.write(f"{key} = {format_value(value)}\n")
    return out.getvalue()


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def _convert(raw: str, tp: Any, field: str) -> Any:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.strip().lower() in ("", "none"):
            return None
        return _convert(raw, args[0], field)
    if origin in (tuple, list):
        args = typing.get_args(tp)
        inner = args[0] if args else str
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_convert(p, inner, field) for p in parts)
    try:
        if tp is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw.strip())
        if tp is float:
            return float(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {tp.__name__}", field) from exc
    return raw.strip()


def from_mapping(cls: type, values: Mapping[str, str], section: str = "", base: Any = None):
    """Build dataclass ``cls`` from raw strings; unknown keys are rejected."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, raw in values.items():
        if key not in names:
            label = f"{section}.{key}" if section else key
            raise ConfigError("unknown key", label)
        kwargs[key] = _convert(raw, hints[key], f"{section}.{key}" if section else key)
    if base is not None:
        return dataclasses.replace(base, **kwargs)
    return cls(**kwargs)


def to_mapping(obj: Any) -> dict[str, Any]:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.init}
