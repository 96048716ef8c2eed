"""Key/value text config files.

One ``key = value`` per line; blank lines and ``#`` comments are ignored.
Values are coerced to the type of the matching dataclass field. Lists are
comma-separated.
"""

from __future__ import annotations

import dataclasses
import typing


class ConfigParseError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigParseError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigParseError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(value: str, typ, key: str):
    try:
        if typ is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if typ in (int, float, str):
            return typ(value)
        origin = typing.get_origin(typ)
        if origin is tuple:
            (inner, *_) = typing.get_args(typ)
            return tuple(inner(v.strip()) for v in value.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigParseError(f"bad value for {key!r}: {value!r}") from exc
    raise ConfigParseError(f"unsupported field type for {key!r}")


def from_kv(cls, values: dict[str, str], strict: bool = True):
    """Build dataclass ``cls`` from string values, defaults for the rest."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if strict and unknown:
        raise ConfigParseError(f"unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(v, hints[k], k) for k, v in values.items() if k in names}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigParseError(str(exc)) from exc


def to_kv(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
