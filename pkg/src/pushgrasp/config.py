"""Hierarchical run configuration over flat dotted keys.

Precedence: built-in defaults < config file < environment < --set
overrides. Environment variables use the PUSHGRASP_ prefix with "__" for
the section dot (PUSHGRASP_NET__GRASP_THRESHOLD=0.6). Unknown keys are
rejected. The effective config serializes to the same flat key=value
format it is read from, so a run's snapshot reloads exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .evaluation import EvalConfig
from .learning import LearnConfig
from .nets import ConfigurationError, NetworkConfig
from .perception import PerceptionConfig
from .sim import SimConfig

ENV_PREFIX = "PUSHGRASP_"


@dataclass
class RunConfig:
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    net: NetworkConfig = field(default_factory=NetworkConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if self.net.resolution != self.perception.resolution:
            raise ConfigurationError(
                "net.resolution must equal perception.resolution "
                f"({self.net.resolution} != {self.perception.resolution})")
        self.net.validate()

    def flat(self) -> dict:
        out = {"seed": self.seed}
        for section in ("sim", "perception", "net", "learn", "eval"):
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                out[f"{section}.{f.name}"] = getattr(obj, f.name)
        return out

    def hash(self) -> str:
        canonical = json.dumps(
            {k: _format_value(v) for k, v in sorted(self.flat().items())},
            sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def default_config() -> RunConfig:
    return RunConfig()


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, template):
    raw = raw.strip()
    if isinstance(template, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"expected boolean, got {raw!r}")
    if isinstance(template, (tuple, list)):
        parts = [p for p in raw.split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    flat = cfg.flat()
    for key, raw in overrides.items():
        if key not in flat:
            raise ConfigurationError(f"unknown config key {key!r}")
        value = raw if not isinstance(raw, str) else _parse_value(raw, flat[key])
        if key == "seed":
            cfg.seed = int(value)
            continue
        section, name = key.split(".", 1)
        setattr(getattr(cfg, section), name, value)
    return cfg


def parse_config_file(path) -> dict:
    overrides = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            overrides[key.strip()] = raw.strip()
    return overrides


def env_overrides(environ=None) -> dict:
    environ = environ if environ is not None else os.environ
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        out[key] = raw
    return out


def build_config(config_file=None, set_overrides=None, environ=None) -> RunConfig:
    cfg = default_config()
    if config_file:
        apply_overrides(cfg, parse_config_file(config_file))
    apply_overrides(cfg, env_overrides(environ))
    if set_overrides:
        apply_overrides(cfg, dict(set_overrides))
    cfg.validate()
    return cfg


def save_snapshot(cfg: RunConfig, path):
    with open(path, "w") as fh:
        for key, value in sorted(cfg.flat().items()):
            fh.write(f"{key}={_format_value(value)}\n")


def load_snapshot(path) -> RunConfig:
    cfg = default_config()
    apply_overrides(cfg, parse_config_file(path))
    cfg.validate()
    return cfg
