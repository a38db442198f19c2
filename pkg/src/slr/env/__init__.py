"""Planar rover POMDP standing in for legged-robot simulation."""

from .params import EnvParams, RandomizationConfig, sample_env_params
from .rover import (
    ACTION_DIM,
    OBS_DIM,
    PRIVILEGED_DIM,
    EnvConfig,
    RoverEnv,
    RoverPhysics,
    StepResult,
    planar_reward_config,
    update_terrain_level,
    write_trajectory_csv,
)
from .terrain import TerrainBank, terrain_height

__all__ = [
    "ACTION_DIM",
    "OBS_DIM",
    "PRIVILEGED_DIM",
    "EnvConfig",
    "EnvParams",
    "RandomizationConfig",
    "RoverEnv",
    "RoverPhysics",
    "StepResult",
    "TerrainBank",
    "sample_env_params",
    "planar_reward_config",
    "terrain_height",
    "update_terrain_level",
    "write_trajectory_csv",
]
