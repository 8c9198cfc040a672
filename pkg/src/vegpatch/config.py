"""Run configuration: INI files with per-module sections plus flag overrides.

Precedence, lowest to highest: built-in defaults, values from the config
file, command-line flags.  The fully resolved configuration is echoed into
every run manifest so a run can be reproduced from its outputs alone.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

OUTPUT_ROOT_ENV = "VEGPATCH_OUT"


def load_ini(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    found = parser.read(path)
    if not found:
        raise ConfigError(f"config file not found: {path}")
    return {section: dict(parser.items(section))
            for section in parser.sections()}


def _cast(value: str, kind, section: str, key: str):
    try:
        if kind is bool:
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "floats":
            return tuple(float(tok) for tok in value.replace(",", " ").split())
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(
            f"[{section}] {key} = {value!r}: expected {getattr(kind, '__name__', kind)}"
        ) from exc


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of one CLI run, echoed into manifests."""

    experiment: str
    output_dir: Path
    workers: int
    sections: dict


@dataclass
class Resolver:
    """Merges file values and CLI overrides with typed access."""

    sections: dict[str, dict[str, str]] = field(default_factory=dict)
    resolved: dict[str, dict] = field(default_factory=dict)

    def get(self, section: str, key: str, kind, default, override=None):
        if override is not None:
            value = override
        elif key in self.sections.get(section, {}):
            value = _cast(self.sections[section][key], kind, section, key)
        else:
            value = default
        self.resolved.setdefault(section, {})[key] = value
        return value

    def reject_unknown(self, known: dict[str, set[str]]):
        for section, items in self.sections.items():
            if section not in known:
                raise ConfigError(f"unknown config section [{section}]")
            unknown = set(items) - known[section]
            if unknown:
                raise ConfigError(
                    f"unknown keys in [{section}]: {sorted(unknown)}")


def make_resolver(config_path: str | None) -> Resolver:
    if config_path:
        return Resolver(load_ini(config_path))
    return Resolver()


def finalize(resolver: Resolver, experiment: str, output_dir,
             workers: int = 1) -> RunConfig:
    return RunConfig(experiment=experiment, output_dir=Path(output_dir),
                     workers=workers, sections=resolver.resolved)


def resolve_output_dir(out: str | None, default: str = ".") -> Path:
    """Output directory under the optional environment root."""
    root = os.environ.get(OUTPUT_ROOT_ENV, "")
    target = Path(out if out is not None else default)
    if root and not target.is_absolute():
        target = Path(root) / target
    return target
