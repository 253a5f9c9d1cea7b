"""Run configuration: text config files, CLI overrides, validation.

A config file is ``key = value`` lines with ``#`` comments.  Every command
declares its allowed keys; unknown keys are rejected, required keys and all
referenced paths are validated before any compute starts, and CLI flags
override file values.
"""

from __future__ import annotations

import os

from .errors import ConfigError


def parse_config_file(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def _parse_bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text):
    return tuple(int(part) for part in str(text).split(",") if part.strip())


def _parse_str_list(text):
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "int_list": _parse_int_list,
    "str_list": _parse_str_list,
    "path_in": str,
    "path_out": str,
    "path_in_list": _parse_str_list,
}


class Schema:
    """Allowed keys for one command: name -> (kind, default, required)."""

    def __init__(self, fields):
        self.fields = dict(fields)

    def resolve(self, file_values, overrides):
        unknown = sorted(set(file_values) - set(self.fields))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged = {}
        for name, (kind, default, required) in self.fields.items():
            raw = overrides.get(name)
            if raw is None:
                raw = file_values.get(name)
            if raw is None:
                if required:
                    raise ConfigError(f"missing required setting {name!r}")
                merged[name] = default
                continue
            if isinstance(raw, str):
                try:
                    merged[name] = PARSERS[kind](raw)
                except ValueError as exc:
                    raise ConfigError(f"setting {name!r}: {exc}") from None
            else:
                merged[name] = raw
        self._check_paths(merged)
        return merged

    def _check_paths(self, merged):
        inputs = []
        for name, (kind, _, _) in self.fields.items():
            value = merged.get(name)
            if value is None:
                continue
            if kind == "path_in":
                inputs.append((name, value))
            elif kind == "path_in_list":
                inputs.extend((name, v) for v in value)
        for name, value in inputs:
            if not os.path.isfile(value):
                raise ConfigError(f"{name}: file {value!r} does not exist")
        input_paths = {os.path.abspath(v) for _, v in inputs}
        for name, (kind, _, _) in self.fields.items():
            value = merged.get(name)
            if kind != "path_out" or value is None:
                continue
            if os.path.abspath(value) in input_paths:
                raise ConfigError(f"{name}: refuses to overwrite input file {value!r}")
            parent = os.path.dirname(os.path.abspath(value))
            os.makedirs(parent, exist_ok=True)


def nearest_valid_extent(value, step):
    down = (value // step) * step
    up = down + step
    return max(step, down), up


def check_extent_divisible(width, height, scales):
    step = 2 ** (scales - 1)
    if width % step == 0 and height % step == 0 and width >= step and height >= step:
        return
    wl, wu = nearest_valid_extent(width, step)
    hl, hu = nearest_valid_extent(height, step)
    raise ConfigError(
        f"extent {width}x{height} must be divisible by {step} (for {scales} scales); "
        f"nearest valid widths {wl}/{wu}, heights {hl}/{hu}"
    )
