"""Run configuration: nested dataclasses read from and written to TOML."""

from __future__ import annotations

import dataclasses
import hashlib
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .core import NetworkConfig
from .env import EnvConfig, planar_reward_config
from .env.params import RandomizationConfig
from .env.rover import RoverPhysics
from .ppo import PpoConfig
from .rewards import RewardConfig
from .variants import VariantConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class SlrConfig:
    history_len: int = 10
    latent_dim: int = 20
    margin: float = 1.0
    triplet_coef: float = 1.0

    def validate(self) -> None:
        if self.history_len < 1 or self.latent_dim < 1:
            raise ValueError("slr.history_len and slr.latent_dim must be >= 1")
        if not self.margin >= 0 or not self.triplet_coef >= 0:
            raise ValueError("slr.margin and slr.triplet_coef must be >= 0")


@dataclass
class TrainConfig:
    iterations: int = 1500
    checkpoint_every: int = 100
    final_window: int = 50

    def validate(self) -> None:
        if self.iterations < 1 or self.checkpoint_every < 1 or self.final_window < 1:
            raise ValueError("train.iterations, train.checkpoint_every and train.final_window must be >= 1")


@dataclass
class EvalConfig:
    num_envs: int = 32
    steps: int = 200
    command_points: int = 9
    command_range: tuple[float, float] = (-1.0, 1.0)
    seed: int = 100_000
    terrain_level: int = 0

    def validate(self) -> None:
        if self.num_envs < 1 or self.steps < 1 or self.command_points < 1:
            raise ValueError("eval.num_envs, eval.steps and eval.command_points must be >= 1")
        if self.command_range[0] > self.command_range[1]:
            raise ValueError("eval.command_range: min > max")
        if self.terrain_level < 0:
            raise ValueError("eval.terrain_level must be >= 0")


@dataclass
class AnalysisConfig:
    terrain_sequence: list[str] = field(default_factory=lambda: ["slope_up", "steps_down", "flat", "steps_up"])
    steps_per_terrain: int = 200
    boundary_window: int = 10
    episodes: int = 4
    command_vx: float = 0.5
    seed: int = 200_000
    terrain_level: int = 1
    null_shuffles: int = 100

    def validate(self) -> None:
        from .env.terrain import terrain_code

        if not self.terrain_sequence:
            raise ValueError("analysis.terrain_sequence must not be empty")
        for mode in self.terrain_sequence:
            terrain_code(mode)
        if self.steps_per_terrain < 1 or self.episodes < 1 or self.null_shuffles < 1:
            raise ValueError("analysis.steps_per_terrain, episodes and null_shuffles must be >= 1")
        if self.boundary_window < 0 or self.terrain_level < 0:
            raise ValueError("analysis.boundary_window and terrain_level must be >= 0")


@dataclass
class RunConfig:
    name: str = ""
    seed: int = 0
    output_dir: str = "runs"
    env: EnvConfig = field(default_factory=EnvConfig)
    reward: RewardConfig = field(default_factory=planar_reward_config)
    networks: NetworkConfig = field(default_factory=NetworkConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    slr: SlrConfig = field(default_factory=SlrConfig)
    variant: VariantConfig = field(default_factory=VariantConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def run_name(self) -> str:
        return self.name or self.variant.kind

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        for section in ("env", "reward", "networks", "ppo", "slr", "variant", "train", "eval", "analysis"):
            try:
                getattr(self, section).validate()
            except ConfigError:
                raise
            except ValueError as exc:
                msg = str(exc)
                raise ConfigError(msg if msg.startswith(section) else f"{section}.{msg}") from None

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def hash(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_toml())


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ConfigError(f"non-finite value {obj} cannot be serialized")
    return obj


def _coerce(value, hint, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
        return _build(hint, value, where)
    if origin is typing.Union or (origin is not None and type(None) in args):
        for a in args:
            if a is type(None):
                continue
            return _coerce(value, a, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return [_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table")
        return {str(k): _coerce(v, args[1], f"{where}.{k}") for k, v in value.items()}
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix + '.' if prefix else ''}{unknown[0]}: unknown key")
    kwargs = {}
    for key, value in data.items():
        where = f"{prefix}.{key}" if prefix else key
        kwargs[key] = _coerce(value, hints[key], where)
    obj = cls(**kwargs)
    if cls is RewardConfig and "weights" in data:
        # partial weight tables override the defaults key by key
        merged = planar_reward_config().weights
        merged.update(kwargs["weights"])
        obj.weights = merged
    return obj


def parse_override(text: str) -> tuple[list[str], object]:
    """``section.key=value``; the value is parsed as TOML, else taken as a string."""
    if "=" not in text:
        raise ConfigError(f"--set {text!r}: expected section.key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"--set {text!r}: empty key")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    return path, value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for p in path[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {text!r}: {p} is not a table")
        node[path[-1]] = value
    return data


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = tomli.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    apply_overrides(data, overrides or [])
    return config_from_dict(data)


# re-exported for callers that build configs programmatically
__all__ = [
    "AnalysisConfig",
    "ConfigError",
    "EnvConfig",
    "EvalConfig",
    "NetworkConfig",
    "PpoConfig",
    "RandomizationConfig",
    "RewardConfig",
    "RoverPhysics",
    "RunConfig",
    "SlrConfig",
    "TrainConfig",
    "VariantConfig",
    "apply_overrides",
    "config_from_dict",
    "load_config",
    "parse_override",
]
