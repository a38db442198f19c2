from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .terrain import terrain_code

Range = tuple[float, float]


@dataclass
class RandomizationConfig:
    """Per-episode sampling ranges for the hidden dynamics.

    With ``enabled = False`` every field takes its nominal value.
    """

    enabled: bool = True
    friction: Range = (0.2, 2.75)
    restitution: Range = (0.0, 1.0)
    body_mass_scale: Range = (0.8, 1.2)
    payload_mass: Range = (-1.0, 3.0)
    motor_strength: Range = (0.8, 1.2)
    kp_scale: Range = (0.8, 1.2)
    kd_scale: Range = (0.8, 1.2)
    action_delay_steps: tuple[int, int] = (0, 3)
    external_force: Range = (-30.0, 30.0)
    initial_joint_scale: Range = (0.5, 1.5)
    terrains: list[str] = field(
        default_factory=lambda: ["flat", "slope_up", "slope_down", "steps_up", "steps_down"]
    )

    def validate(self) -> None:
        for name in (
            "friction",
            "restitution",
            "body_mass_scale",
            "payload_mass",
            "motor_strength",
            "kp_scale",
            "kd_scale",
            "action_delay_steps",
            "external_force",
            "initial_joint_scale",
        ):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"randomization.{name}: min {lo} > max {hi}")
        if self.friction[0] < 0 or self.restitution[0] < 0 or self.restitution[1] > 1:
            raise ValueError("randomization: friction must be >= 0 and restitution in [0, 1]")
        if self.action_delay_steps[0] < 0:
            raise ValueError("randomization.action_delay_steps must be >= 0")
        if not self.terrains:
            raise ValueError("randomization.terrains: at least one terrain must be enabled")
        for t in self.terrains:
            terrain_code(t)


NOMINAL = dict(
    friction=1.0,
    restitution=0.0,
    body_mass_scale=1.0,
    payload_mass=0.0,
    motor_strength_scale=1.0,
    kp_scale=1.0,
    kd_scale=1.0,
    action_delay_steps=0,
    external_force=(0.0, 0.0),
)


@dataclass
class EnvParams:
    friction: float
    restitution: float
    body_mass_scale: float
    payload_mass: float
    motor_strength_scale: float
    kp_scale: float
    kd_scale: float
    action_delay_steps: int
    external_force: tuple[float, float]
    terrain_mode: str
    terrain_scale: float


def sample_env_params(
    rng: np.random.Generator,
    ranges: RandomizationConfig,
    terrain_scale: dict[str, float] | float = 1.0,
) -> EnvParams:
    """Draw one episode's hidden parameters.

    Every continuous field is uniform on its range and the terrain is uniform
    over the enabled set.  ``terrain_scale`` is either a number or a
    per-mode mapping (already including the curriculum level).
    """
    if not ranges.terrains:
        raise ValueError("no terrain enabled")
    ranges.validate()
    mode = ranges.terrains[int(rng.integers(len(ranges.terrains)))]
    scale = terrain_scale[mode] if isinstance(terrain_scale, dict) else float(terrain_scale)
    if not ranges.enabled:
        return EnvParams(**NOMINAL, terrain_mode=mode, terrain_scale=scale)

    def u(r: tuple[float, float]) -> float:
        return float(rng.uniform(r[0], r[1])) if r[0] < r[1] else float(r[0])

    return EnvParams(
        friction=u(ranges.friction),
        restitution=u(ranges.restitution),
        body_mass_scale=u(ranges.body_mass_scale),
        payload_mass=u(ranges.payload_mass),
        motor_strength_scale=u(ranges.motor_strength),
        kp_scale=u(ranges.kp_scale),
        kd_scale=u(ranges.kd_scale),
        action_delay_steps=int(rng.integers(ranges.action_delay_steps[0], ranges.action_delay_steps[1] + 1)),
        external_force=(u(ranges.external_force), u(ranges.external_force)),
        terrain_mode=mode,
        terrain_scale=scale,
    )
