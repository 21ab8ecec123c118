"""Flat ``key = value`` config files with per-command schemas.

A schema maps key names to ``(parser, default)``; unknown keys are a hard
error so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

__all__ = ["ConfigError", "parse_kv_text", "load_config", "apply_schema", "parse_bool", "parse_floats"]


class ConfigError(ValueError):
    """Invalid config file or option value."""


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_floats(text: str):
    """Comma-separated float list."""
    return tuple(float(part) for part in text.split(",") if part.strip())


def parse_kv_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; blanks ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return parse_kv_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def apply_schema(raw: dict, schema: dict) -> dict:
    """Typed values with defaults; rejects keys outside the schema."""
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, (parser, default) in schema.items():
        if key in raw:
            try:
                out[key] = parser(raw[key])
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from exc
        else:
            out[key] = default
    return out
