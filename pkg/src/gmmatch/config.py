"""Flat sectioned key-value config files.

Format: ``[section]`` headers followed by ``key = value`` lines; full-line
comments start with '#' or ';'.  No nesting, no interpolation, no quoting --
values are verbatim strings and every consumer parses its own types.  The
parser keeps the source line of every entry so validation errors can point
at the offending line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["ConfigError", "Section", "Config", "parse_config", "load_config"]


class ConfigError(ValueError):
    """Config syntax or validation problem, with a 1-based source line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.message = message
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass
class Section:
    name: str
    line: int
    entries: dict = field(default_factory=dict)  # key -> (value, line)

    def __contains__(self, key):
        return key in self.entries

    def raw(self, key: str) -> str:
        return self.entries[key][0]

    def key_line(self, key: str) -> int:
        return self.entries[key][1]

    def get(self, key: str, default=None) -> str | None:
        return self.entries[key][0] if key in self.entries else default

    def require(self, key: str) -> str:
        if key not in self.entries:
            raise ConfigError(f"section [{self.name}] is missing required key {key!r}", self.line)
        return self.entries[key][0]

    def _typed(self, key, conv, typename, default, required):
        if key not in self.entries:
            if required:
                self.require(key)
            return default
        value, line = self.entries[key]
        try:
            return conv(value)
        except ValueError:
            raise ConfigError(f"key {key!r} expects {typename}, got {value!r}", line) from None

    def get_int(self, key, default=None, required=False):
        return self._typed(key, int, "an integer", default, required)

    def get_float(self, key, default=None, required=False):
        return self._typed(key, float, "a number", default, required)

    def get_bool(self, key, default=None, required=False):
        def conv(v):
            lv = v.lower()
            if lv in ("true", "yes", "1", "on"):
                return True
            if lv in ("false", "no", "0", "off"):
                return False
            raise ValueError(v)

        return self._typed(key, conv, "a boolean", default, required)

    def get_floats(self, key, default=None, required=False):
        return self._typed(
            key, lambda v: tuple(float(t) for t in v.split()), "space-separated numbers", default, required
        )

    def get_ints(self, key, default=None, required=False):
        return self._typed(
            key, lambda v: tuple(int(t) for t in v.split()), "space-separated integers", default, required
        )


@dataclass
class Config:
    sections: dict = field(default_factory=dict)  # name -> Section
    source: str = ""

    def __contains__(self, name):
        return name in self.sections

    def section(self, name: str) -> Section:
        if name not in self.sections:
            raise ConfigError(f"missing required section [{name}]")
        return self.sections[name]

    def sections_with_prefix(self, prefix: str) -> list:
        return [s for name, s in self.sections.items() if name.startswith(prefix)]


def parse_config(text: str, source: str = "") -> Config:
    cfg = Config(source=source)
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError("empty section name", lineno)
            if name in cfg.sections:
                raise ConfigError(f"duplicate section [{name}]", lineno)
            current = Section(name=name, line=lineno)
            cfg.sections[name] = current
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if current is None:
            raise ConfigError("key-value pair before any [section] header", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError("empty key", lineno)
        if key in current.entries:
            raise ConfigError(f"duplicate key {key!r} in section [{current.name}]", lineno)
        current.entries[key] = (value, lineno)
    return cfg


def load_config(path) -> Config:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None
    return parse_config(text, source=str(path))
