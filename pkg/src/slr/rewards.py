"""Locomotion reward terms.

Every term is returned unweighted; the sign lives in the weight, so
penalties are non-negative magnitudes paired with negative weights.  All
functions accept a single sample or a leading batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TERMS = (
    "powers",
    "lin_vel_tracking",
    "ang_vel_tracking",
    "lin_vel_z",
    "ang_vel_xy",
    "joint_acc",
    "base_height",
    "joint_torques",
    "action_rate",
    "action_smoothness",
    "foot_clearance",
    "orientation",
)

# weight column as printed; joint_torques = 1 would pay for torque
TABLE_WEIGHTS = {
    "powers": -2e-5,
    "lin_vel_tracking": 1.0,
    "ang_vel_tracking": 0.5,
    "lin_vel_z": -2.0,
    "ang_vel_xy": -0.05,
    "joint_acc": -2.5e-7,
    "base_height": -10.0,
    "joint_torques": 1.0,
    "action_rate": -0.01,
    "action_smoothness": -0.01,
    "foot_clearance": -0.01,
    "orientation": -0.2,
}


def default_weights() -> dict[str, float]:
    weights = dict(TABLE_WEIGHTS)
    weights["joint_torques"] = -1e-4
    return weights


@dataclass
class RewardConfig:
    weights: dict[str, float] = field(default_factory=default_weights)
    sigma: float = 0.25
    base_height_target: float = 0.15
    foot_height_target: float = 0.0

    def validate(self) -> None:
        unknown = set(self.weights) - set(TERMS)
        if unknown:
            raise ValueError(f"reward.weights: unknown terms {sorted(unknown)}")
        for name, w in self.weights.items():
            if not np.isfinite(w):
                raise ValueError(f"reward.weights.{name} must be finite")
        if not self.sigma > 0:
            raise ValueError("reward.sigma must be positive")


@dataclass
class RewardInputs:
    lin_vel_xy: np.ndarray
    lin_vel_xy_cmd: np.ndarray
    lin_vel_z: np.ndarray
    ang_vel_yaw: np.ndarray
    ang_vel_yaw_cmd: np.ndarray
    ang_vel_xy: np.ndarray
    torques: np.ndarray
    joint_vel: np.ndarray
    joint_acc: np.ndarray
    base_height: np.ndarray
    actions: np.ndarray
    last_actions: np.ndarray
    last_last_actions: np.ndarray
    foot_heights: np.ndarray
    foot_speeds: np.ndarray
    projected_gravity_xy: np.ndarray

    @classmethod
    def zeros(cls, num_joints: int = 2, num_feet: int = 2, batch: tuple[int, ...] = ()) -> RewardInputs:
        z = lambda *s: np.zeros(batch + s)  # noqa: E731
        return cls(
            lin_vel_xy=z(2),
            lin_vel_xy_cmd=z(2),
            lin_vel_z=z(),
            ang_vel_yaw=z(),
            ang_vel_yaw_cmd=z(),
            ang_vel_xy=z(2),
            torques=z(num_joints),
            joint_vel=z(num_joints),
            joint_acc=z(num_joints),
            base_height=z(),
            actions=z(num_joints),
            last_actions=z(num_joints),
            last_last_actions=z(num_joints),
            foot_heights=z(num_feet),
            foot_speeds=z(num_feet),
            projected_gravity_xy=z(2),
        )


def _sq(v: np.ndarray) -> np.ndarray:
    return np.sum(np.square(v), axis=-1)


def reward_terms(x: RewardInputs, cfg: RewardConfig) -> dict[str, np.ndarray]:
    return {
        "powers": np.sum(np.abs(x.torques) * np.abs(x.joint_vel), axis=-1),
        "lin_vel_tracking": np.exp(-_sq(x.lin_vel_xy_cmd - x.lin_vel_xy) / cfg.sigma),
        "ang_vel_tracking": np.exp(-np.square(x.ang_vel_yaw_cmd - x.ang_vel_yaw) / cfg.sigma),
        "lin_vel_z": np.square(x.lin_vel_z),
        "ang_vel_xy": _sq(x.ang_vel_xy),
        "joint_acc": _sq(x.joint_acc),
        "base_height": np.square(cfg.base_height_target - x.base_height),
        "joint_torques": _sq(x.torques),
        "action_rate": _sq(x.actions - x.last_actions),
        "action_smoothness": _sq(x.actions - 2.0 * x.last_actions + x.last_last_actions),
        "foot_clearance": np.sum(np.square(cfg.foot_height_target - x.foot_heights) * x.foot_speeds, axis=-1),
        "orientation": _sq(x.projected_gravity_xy),
    }


def compute_reward(inputs: RewardInputs, cfg: RewardConfig) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Weighted total and the unweighted per-term values."""
    terms = reward_terms(inputs, cfg)
    total = np.zeros(np.shape(terms["powers"]), dtype=np.float64)
    for name in TERMS:
        w = cfg.weights.get(name, 0.0)
        if w != 0.0:
            total = total + w * np.asarray(terms[name], dtype=np.float64)
    return total, terms
