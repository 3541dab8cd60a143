"""Experiment configuration files.

A config is one YAML mapping describing one experiment::

    experiment: samesite
    seeds: [0, 1, 2]
    out_dir: results/samesite
    workers: 1
    campaign: {...}          # experiment-specific keys

``experiment``, ``seeds``, ``out_dir`` and ``workers`` are reserved; every
other key is handed to the experiment runner as ``params``. String values
stored under a key named ``path`` or ending in ``_path`` are file
references. They are resolved relative to the config file and must exist
when the config is loaded.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import yaml

RESERVED = ("experiment", "seeds", "out_dir", "workers")


class ConfigError(ValueError):
    """The configuration is malformed or refers to missing files."""


def config_hash(content: dict) -> str:
    """Short SHA-256 digest of the canonical JSON form of ``content``."""
    blob = json.dumps(content, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seeds: tuple
    params: dict = field(default_factory=dict)
    out_dir: str = "results"
    workers: int = 1
    base_dir: str = "."

    def __post_init__(self):
        if not self.experiment or not isinstance(self.experiment, str):
            raise ConfigError("'experiment' must be a non-empty string")
        if len(self.seeds) == 0:
            raise ConfigError("'seeds' must be a non-empty list")
        for s in self.seeds:
            if isinstance(s, bool) or not isinstance(s, int) or s < 0:
                raise ConfigError(f"seeds must be non-negative integers, got {s!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"'workers' must be a positive integer, got {self.workers!r}")

    @property
    def hash(self) -> str:
        # file locations and parallelism do not change results
        return config_hash({"experiment": self.experiment, "seeds": list(self.seeds),
                            "params": _unresolved(self.params, self.base_dir)})

    def section(self, name, default=None) -> dict:
        val = self.params.get(name, default if default is not None else {})
        if not isinstance(val, dict):
            raise ConfigError(f"'{name}' must be a mapping")
        return val

    def get(self, key, default=None):
        return self.params.get(key, default)


def _is_path_key(key):
    return isinstance(key, str) and (key == "path" or key.endswith("_path"))


def _resolve(node, base_dir, trail=""):
    if isinstance(node, dict):
        out = {}
        for k, v in node.items():
            where = f"{trail}.{k}" if trail else str(k)
            if _is_path_key(k) and v is not None:
                if not isinstance(v, str):
                    raise ConfigError(f"{where}: expected a file path, got {v!r}")
                full = v if os.path.isabs(v) else os.path.normpath(os.path.join(base_dir, v))
                if not os.path.exists(full):
                    raise ConfigError(f"{where}: file not found: {v}")
                out[k] = full
            else:
                out[k] = _resolve(v, base_dir, where)
        return out
    if isinstance(node, list):
        return [_resolve(v, base_dir, f"{trail}[{i}]") for i, v in enumerate(node)]
    return node


def _unresolved(node, base_dir):
    # hash paths relative to the config so moving a directory tree keeps the hash
    if isinstance(node, dict):
        return {k: (os.path.relpath(v, base_dir) if _is_path_key(k) and isinstance(v, str)
                    else _unresolved(v, base_dir)) for k, v in node.items()}
    if isinstance(node, list):
        return [_unresolved(v, base_dir) for v in node]
    return node


def from_mapping(raw: dict, base_dir=".", seed=None, out_dir=None) -> ExperimentConfig:
    """Validate a parsed config. ``seed`` replaces the first listed seed."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    seeds = raw.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list):
        raise ConfigError("'seeds' must be a list of integers")
    seeds = list(seeds)
    if seed is not None:
        if seeds:
            seeds[0] = int(seed)
        else:
            seeds = [int(seed)]
    params = _resolve({k: v for k, v in raw.items() if k not in RESERVED}, base_dir)
    out = out_dir if out_dir is not None else raw.get("out_dir", "results")
    if not isinstance(out, str):
        raise ConfigError("'out_dir' must be a string")
    return ExperimentConfig(
        experiment=raw.get("experiment"),
        seeds=tuple(seeds),
        params=params,
        out_dir=out,
        workers=raw.get("workers", 1),
        base_dir=os.path.abspath(base_dir),
    )


def load_config(path, seed=None, out_dir=None) -> ExperimentConfig:
    """Read and validate a YAML experiment config."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return from_mapping(raw, os.path.dirname(os.path.abspath(path)), seed, out_dir)
