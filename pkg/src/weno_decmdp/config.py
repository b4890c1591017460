"""Plain-text key-value configuration handling.

The format is one ``key = value`` pair per line, UTF-8, with ``#`` starting a
comment. Values are kept as strings; callers pull them out through the typed
getters on :class:`Config`. Later assignments win, which is how flag/file/
default precedence is implemented: start from the shipped defaults, overlay a
user file, overlay explicit flags.
"""

from __future__ import annotations

import hashlib
from importlib import resources


class ConfigError(ValueError):
    """Malformed configuration text or a missing/badly typed key."""


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a dict, ignoring comments and blanks."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


class Config:
    """A layered string-to-string mapping with typed access."""

    def __init__(self, values: dict[str, str] | None = None, sha256: str = ""):
        self.values = dict(values or {})
        self.sha256 = sha256

    def overlay(self, other: dict[str, str]) -> "Config":
        merged = dict(self.values)
        merged.update(other)
        return Config(merged, sha256=self.sha256)

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def get_str(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing config key {key!r}")
        return default

    def get_float(self, key: str, default: float | None = None) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing config key {key!r}")
            return default
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: not a number: {self.values[key]!r}") from exc

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing config key {key!r}")
            return default
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: not an integer: {self.values[key]!r}") from exc

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing config key {key!r}")
            return default
        value = self.values[key].lower()
        if value in ("true", "1", "yes", "on"):
            return True
        if value in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: not a boolean: {self.values[key]!r}")

    def get_floats(self, key: str) -> tuple[float, ...]:
        """A whitespace-separated tuple of numbers, e.g. a primitive triple."""
        raw = self.get_str(key)
        try:
            return tuple(float(tok) for tok in raw.split())
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: not numbers: {raw!r}") from exc


def load_config_file(path) -> Config:
    with open(path, "rb") as fh:
        data = fh.read()
    cfg = Config(parse_config_text(data.decode("utf-8")))
    cfg.sha256 = hashlib.sha256(data).hexdigest()
    return cfg


def load_defaults() -> Config:
    """Load the defaults shipped inside the package, with their checksum."""
    data = resources.files("weno_decmdp").joinpath("defaults.cfg").read_bytes()
    cfg = Config(parse_config_text(data.decode("utf-8")))
    cfg.sha256 = hashlib.sha256(data).hexdigest()
    return cfg
