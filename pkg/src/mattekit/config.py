"""Run configuration: one TOML file per run, env-var overridable.

Every key can be overridden through the environment with the
``MATTEKIT_`` prefix; nested tables use ``__`` as the separator, e.g.
``MATTEKIT_POLICY__P_AF=1.0``. Values parse as TOML literals where
possible and fall back to plain strings. A copy of the file and the
fully resolved configuration are written into each run's output
directory so runs can be replayed byte-for-byte.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .dataset import DatasetRules, PipelineOptions
from .metrics import MetricConstants
from .strategy import SaPolicy
from .trimap import SWEEP_RANGES

ENV_PREFIX = "MATTEKIT_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunPaths:
    fg_dir: str = ""
    alpha_dir: str = ""
    bg_dir: str = ""
    test_fg_dir: str = ""
    test_alpha_dir: str = ""
    test_bg_dir: str = ""

    @property
    def has_test(self) -> bool:
        return bool(self.test_fg_dir and self.test_alpha_dir and self.test_bg_dir)


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    config_path: Optional[str] = None
    paths: RunPaths = field(default_factory=RunPaths)
    rules: DatasetRules = field(default_factory=DatasetRules)
    policy: SaPolicy = field(default_factory=SaPolicy)
    pipeline: PipelineOptions = field(default_factory=PipelineOptions)
    metrics: MetricConstants = field(default_factory=MetricConstants)
    sweep_ranges: dict = field(default_factory=lambda: dict(SWEEP_RANGES))

    def resolved_dict(self) -> dict:
        out = asdict(self)
        out.pop("config_path")
        out["sweep_ranges"] = {k: list(v) for k, v in self.sweep_ranges.items()}
        return out

    def write_copy(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if self.config_path and Path(self.config_path).is_file():
            shutil.copyfile(self.config_path, out_dir / "config_used.toml")
        (out_dir / "config_resolved.json").write_text(
            json.dumps(self.resolved_dict(), indent=1, sort_keys=True) + "\n"
        )


def _parse_env_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def _apply_env(data: dict, env) -> dict:
    for key, raw in sorted(env.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX) :].lower().split("__")
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {part} is not a table")
        node[path[-1]] = _parse_env_value(raw)
    return data


def _build(cls, section: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    coerced = {}
    for f in fields(cls):
        if f.name not in section:
            continue
        value = section[f.name]
        if isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


_SECTIONS = {
    "paths": (RunPaths, "paths"),
    "rules": (DatasetRules, "rules"),
    "policy": (SaPolicy, "policy"),
    "pipeline": (PipelineOptions, "pipeline"),
    "metrics": (MetricConstants, "metrics"),
}


def load_config(path=None, env=None, overrides: Optional[dict] = None) -> RunConfig:
    """Load a RunConfig from TOML + environment + explicit overrides.

    Precedence: overrides (CLI flags) > environment > file > defaults.
    """
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    data = _apply_env(data, env)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    known_top = {"seed", "workers", "output_dir", "sweep"} | set(_SECTIONS)
    unknown = set(data) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

    cfg = RunConfig(
        seed=int(data.get("seed", 0)),
        workers=int(data.get("workers", 1)),
        output_dir=str(data.get("output_dir", "out")),
        config_path=str(path) if path is not None else None,
    )
    for key, (cls, where) in _SECTIONS.items():
        section = data.get(key, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{where}] must be a table")
        setattr(cfg, key, _build(cls, section, where))

    sweep = data.get("sweep", {})
    if sweep:
        ranges = {}
        for label, pair in sweep.items():
            if len(pair) != 2 or pair[0] > pair[1] or pair[0] < 1:
                raise ConfigError(f"[sweep] {label}: expected an increasing [lo, hi] pair >= 1")
            ranges[str(label)] = (int(pair[0]), int(pair[1]))
        cfg.sweep_ranges = ranges

    try:
        cfg.policy.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[policy]: {exc}") from exc
    if cfg.seed < 0:
        raise ConfigError("seed must be >= 0")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg
