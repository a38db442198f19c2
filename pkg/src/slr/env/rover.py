"""Planar two-wheel rover POMDP with hidden randomized dynamics.

The body is a rigid slab with a front and a rear driven wheel.  Each wheel
is PD-driven from the action; traction depends on the hidden ground
friction, bounces on the hidden restitution, and the body carries a hidden
payload and a persistent external push.  Observations are proprioceptive
only: the base linear velocity is never emitted.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import kernels
from ..kernels import layout as L
from ..rewards import RewardConfig, RewardInputs, compute_reward, default_weights
from .params import EnvParams, RandomizationConfig, sample_env_params
from .terrain import TerrainBank

OBS_DIM = 11
ACTION_DIM = 2
PRIVILEGED_DIM = 10
TRAJECTORY_HEADER = ("step", "x", "height", "pitch", "vx", "cmd_vx", "terrain_mode", "terrain_level", "done")


def planar_reward_config(**kw) -> RewardConfig:
    """Reward config for the rover: no swing feet, so no clearance or height terms."""
    weights = default_weights()
    weights["base_height"] = 0.0
    weights["foot_clearance"] = 0.0
    return RewardConfig(weights=weights, **kw)


@dataclass
class RoverPhysics:
    mass: float = 12.0
    body_length: float = 0.5
    body_height: float = 0.15
    half_base: float = 0.15
    com_height: float = 0.05
    wheel_radius: float = 0.1
    wheel_inertia: float = 0.02
    contact_stiffness: float = 6000.0
    slip_velocity: float = 0.3
    kp: float = 20.0
    kd: float = 0.5
    action_scale: float = 0.25
    torque_limit: float = 15.0
    drag: float = 5.0
    wheel_damping: float = 0.01
    pitch_damping: float = 0.5
    step_height: float = 0.1
    step_run: float = 0.5
    contact_tolerance: float = 1e-3
    gravity: float = 9.81
    nominal_joint_position: float = 1.0

    def constants(self) -> np.ndarray:
        c = np.zeros(L.CONST_DIM)
        c[L.GRAVITY] = self.gravity
        c[L.HALF_BASE] = self.half_base
        c[L.COM_HEIGHT] = self.com_height
        c[L.WHEEL_RADIUS] = self.wheel_radius
        c[L.WHEEL_INERTIA] = self.wheel_inertia
        c[L.CONTACT_K] = self.contact_stiffness
        c[L.SLIP_VEL] = self.slip_velocity
        c[L.KP_NOM] = self.kp
        c[L.KD_NOM] = self.kd
        c[L.ACTION_SCALE] = self.action_scale
        c[L.TORQUE_LIMIT] = self.torque_limit
        c[L.DRAG] = self.drag
        c[L.WHEEL_DAMP] = self.wheel_damping
        c[L.PITCH_DAMP] = self.pitch_damping
        c[L.STEP_HEIGHT] = self.step_height
        c[L.STEP_RUN] = self.step_run
        c[L.CONTACT_TOL] = self.contact_tolerance
        return c


@dataclass
class EnvConfig:
    num_envs: int = 256
    horizon: int = 24
    dt: float = 0.02
    substeps: int = 8
    episode_length: int = 200
    command_vx: tuple[float, float] = (-1.0, 1.0)
    command_ang: tuple[float, float] = (0.0, 0.0)
    obs_noise: float = 0.01
    obs_scales: dict[str, float] = field(
        default_factory=lambda: {"command_vx": 2.0, "command_ang": 0.25, "pitch_rate": 0.25, "joint_vel": 0.05}
    )
    action_limit: float = 3.0
    external_force_scale: float = 0.5
    slope_scale: float = 0.1
    step_scale: float = 0.5
    curriculum: bool = True
    curriculum_up: float = 0.8
    curriculum_down: float = 0.4
    max_terrain_level: int = 3
    randomize_start_step: bool = True
    max_pitch: float = math.pi / 3
    randomization: RandomizationConfig = field(default_factory=RandomizationConfig)
    physics: RoverPhysics = field(default_factory=RoverPhysics)

    def validate(self) -> None:
        if self.num_envs < 1 or self.horizon < 1 or self.episode_length < 1 or self.substeps < 1:
            raise ValueError("env: num_envs, horizon, episode_length and substeps must be >= 1")
        if not self.dt > 0:
            raise ValueError("env.dt must be positive")
        for name in ("command_vx", "command_ang"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"env.{name}: min {lo} > max {hi}")
        if self.obs_noise < 0 or self.action_limit <= 0:
            raise ValueError("env.obs_noise must be >= 0 and env.action_limit > 0")
        if self.slope_scale < 0 or self.step_scale < 0:
            raise ValueError("env terrain scales must be >= 0")
        if self.max_terrain_level < 0:
            raise ValueError("env.max_terrain_level must be >= 0")
        if not 0 <= self.curriculum_down <= self.curriculum_up:
            raise ValueError("env: need 0 <= curriculum_down <= curriculum_up")
        self.randomization.validate()

    def terrain_scales(self, level: int) -> dict[str, float]:
        grow = 1.0 + 0.5 * level
        return {
            "flat": 0.0,
            "slope_up": self.slope_scale * grow,
            "slope_down": self.slope_scale * grow,
            "steps_up": self.step_scale * grow,
            "steps_down": self.step_scale * grow,
        }


def update_terrain_level(
    tracking_reward_mean: float, level: int, up: float = 0.8, down: float = 0.4, max_level: int | None = None
) -> int:
    """Promote above ``up``, demote below ``down`` (never below 0 nor above ``max_level``)."""
    if level < 0:
        raise ValueError("terrain level must be >= 0")
    if tracking_reward_mean > up:
        return level + 1 if max_level is None else min(level + 1, max_level)
    if tracking_reward_mean < down:
        return max(level - 1, 0)
    return level


def restitution_damping(restitution: float, stiffness: float, mass: float) -> float:
    """Contact damping whose spring-damper bounce has the given restitution."""
    if restitution <= 0.0:
        zeta = 1.0
    else:
        ln_e = math.log(min(restitution, 1.0))
        zeta = -ln_e / math.sqrt(math.pi**2 + ln_e**2)
    return 2.0 * zeta * math.sqrt(stiffness * mass / 2.0)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    time_out: np.ndarray
    privileged: np.ndarray
    reward_terms: dict[str, np.ndarray]
    finished_lengths: list[int]
    finished_returns: list[float]
    measured: dict[str, np.ndarray]


class RoverEnv:
    """``num_envs`` independent rovers stepped together.

    Env ``i`` draws all its randomness from ``default_rng(seed + i)``.
    Finished episodes are reset inside :meth:`step`; the returned
    observation is then the first frame of the new episode.
    """

    def __init__(
        self,
        cfg: EnvConfig,
        num_envs: int | None = None,
        seed: int = 0,
        reward_cfg: RewardConfig | None = None,
        max_segments: int = 1,
        kernel=None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.num_envs = n = num_envs if num_envs is not None else cfg.num_envs
        self.reward_cfg = reward_cfg or planar_reward_config()
        self.kernel = kernel or kernels
        self.consts = cfg.physics.constants()
        self.rngs = [np.random.default_rng(seed + i) for i in range(n)]
        self.terrain = TerrainBank(n, self.consts, max_segments)
        self.state = np.zeros((n, L.STATE_DIM))
        self.dyn = np.zeros((n, L.PARAM_DIM))
        self.params: list[EnvParams | None] = [None] * n
        self.delay = np.zeros(n, dtype=np.int64)
        self.action_queue = np.zeros((n, 4, ACTION_DIM))
        self.last_actions = np.zeros((n, ACTION_DIM))
        self.last_last_actions = np.zeros((n, ACTION_DIM))
        self.last_joint_vel = np.zeros((n, ACTION_DIM))
        self.commands = np.zeros((n, 2))
        self.torques = np.zeros((n, ACTION_DIM))
        self.contact = np.zeros((n, 2), dtype=np.uint8)
        self.step_index = np.zeros(n, dtype=np.int64)
        self.episode_return = np.zeros(n)
        self.episode_tracking = np.zeros(n)
        self.terrain_level = np.zeros(n, dtype=np.int64)
        self.noise_enabled = cfg.obs_noise > 0
        self._first_reset = True

    # -- reset ---------------------------------------------------------------

    def reset(self, env_ids=None) -> np.ndarray:
        ids = np.arange(self.num_envs) if env_ids is None else np.asarray(env_ids, dtype=np.int64)
        if len(ids) == 0:
            return self.observe()
        cfg = self.cfg
        phys = cfg.physics
        rnd = cfg.randomization
        joint0 = np.full((len(ids), 2), phys.nominal_joint_position)
        for j, n in enumerate(ids):
            rng = self.rngs[n]
            p = sample_env_params(rng, rnd, cfg.terrain_scales(int(self.terrain_level[n])))
            self.params[n] = p
            mass = phys.mass * p.body_mass_scale + p.payload_mass
            inertia = mass * (phys.body_length**2 + phys.body_height**2) / 12.0
            d = self.dyn[n]
            d[L.MASS] = mass
            d[L.INERTIA] = inertia
            d[L.FRICTION] = p.friction
            d[L.CONTACT_DAMP] = restitution_damping(p.restitution, phys.contact_stiffness, mass)
            d[L.MOTOR] = p.motor_strength_scale
            d[L.KP] = p.kp_scale
            d[L.KD] = p.kd_scale
            d[L.FEXT_X] = p.external_force[0] * cfg.external_force_scale
            d[L.FEXT_Z] = p.external_force[1] * cfg.external_force_scale
            self.delay[n] = p.action_delay_steps
            self.terrain.set_single(n, p.terrain_mode, p.terrain_scale)
            lo, hi = cfg.command_vx
            self.commands[n, 0] = rng.uniform(lo, hi) if lo < hi else lo
            lo, hi = cfg.command_ang
            self.commands[n, 1] = rng.uniform(lo, hi) if lo < hi else lo
            if rnd.enabled:
                joint0[j] *= rng.uniform(*rnd.initial_joint_scale, size=2)
            if self._first_reset and cfg.randomize_start_step:
                self.step_index[n] = rng.integers(cfg.episode_length)
            else:
                self.step_index[n] = 0

        self.state[ids] = 0.0
        # stair starts sit mid-tread so both wheels share one level
        on_steps = np.isin(self.terrain.mode[ids, 0], (L.STEPS_UP, L.STEPS_DOWN))
        self.state[ids, L.X] = np.where(on_steps, 0.5 * phys.step_run, 0.0)
        self.state[ids, L.TH0 : L.TH0 + 2] = joint0
        self._settle(ids)
        self.action_queue[ids] = 0.0
        self.last_actions[ids] = 0.0
        self.last_last_actions[ids] = 0.0
        self.last_joint_vel[ids] = 0.0
        self.torques[ids] = 0.0
        self.episode_return[ids] = 0.0
        self.episode_tracking[ids] = 0.0
        self._refresh_contact(ids)
        self._first_reset = False
        return self.observe()

    def place_on_terrain(self, env_id: int, mode: str | int, scale: float) -> None:
        """Replace env ``env_id``'s terrain by a single segment and re-settle the body there."""
        ids = np.array([env_id])
        self.terrain.set_single(env_id, mode, scale)
        on_steps = self.terrain.mode[env_id, 0] in (L.STEPS_UP, L.STEPS_DOWN)
        self.state[env_id] = 0.0
        self.state[env_id, L.X] = 0.5 * self.cfg.physics.step_run if on_steps else 0.0
        self.state[env_id, L.TH0 : L.TH0 + 2] = self.cfg.physics.nominal_joint_position
        self._settle(ids)
        self._refresh_contact(ids)

    def _axles(self, x, pitch):
        l, hc = self.cfg.physics.half_base, self.cfg.physics.com_height
        s = np.array([1.0, -1.0])
        rx = s * l * np.cos(pitch)[:, None] + hc * np.sin(pitch)[:, None]
        rz = s * l * np.sin(pitch)[:, None] - hc * np.cos(pitch)[:, None]
        return x[:, None] + rx, rz

    def _settle(self, ids: np.ndarray) -> None:
        """Place the body at static sag on its terrain, both wheels loaded."""
        phys = self.cfg.physics
        x = self.state[ids, L.X]
        pitch = np.zeros(len(ids))
        sag = self.dyn[ids, L.MASS] * phys.gravity / (2.0 * phys.contact_stiffness)
        for _ in range(5):
            ax, _ = self._axles(x, pitch)
            g, _ = self.terrain.wheel_ground(ax, rows=ids)
            pitch = np.arcsin(np.clip((g[:, 0] - g[:, 1]) / (2 * phys.half_base), -0.9, 0.9))
        ax, rz = self._axles(x, pitch)
        g, _ = self.terrain.wheel_ground(ax, rows=ids)
        # z such that every axle sits at least `sag` below its wheel-centre surface
        z = (g - sag[:, None] - rz).min(axis=1)
        self.state[ids, L.PITCH] = pitch
        self.state[ids, L.Z] = z

    def _refresh_contact(self, ids) -> None:
        ax, rz = self._axles(self.state[ids, L.X], self.state[ids, L.PITCH])
        g, _ = self.terrain.wheel_ground(ax, rows=ids)
        pen = g - (self.state[ids, L.Z][:, None] + rz)
        self.contact[ids] = pen > -self.cfg.physics.contact_tolerance

    # -- observation -----------------------------------------------------------

    def observe(self, noise: bool | None = None) -> np.ndarray:
        s = self.state
        sc = self.cfg.obs_scales
        obs = np.empty((self.num_envs, OBS_DIM))
        obs[:, 0] = self.commands[:, 0] * sc["command_vx"]
        obs[:, 1] = self.commands[:, 1] * sc["command_ang"]
        obs[:, 2] = -np.sin(s[:, L.PITCH])
        obs[:, 3] = -np.cos(s[:, L.PITCH])
        obs[:, 4] = s[:, L.PITCH_RATE] * sc["pitch_rate"]
        obs[:, 5:7] = np.mod(s[:, L.TH0 : L.TH0 + 2] + np.pi, 2 * np.pi) - np.pi
        obs[:, 7:9] = s[:, L.THD0 : L.THD0 + 2] * sc["joint_vel"]
        obs[:, 9:11] = self.last_actions
        if (self.noise_enabled if noise is None else noise) and self.cfg.obs_noise > 0:
            sigma = self.cfg.obs_noise
            for n in range(self.num_envs):
                obs[n] += self.rngs[n].uniform(-sigma, sigma, OBS_DIM)
        return obs

    def privileged(self) -> np.ndarray:
        """e_t: friction, restitution, 4 height samples, 2 contacts, payload, motor."""
        s = self.state
        e = np.empty((self.num_envs, PRIVILEGED_DIM))
        e[:, 0] = [p.friction for p in self.params]
        e[:, 1] = [p.restitution for p in self.params]
        offsets = np.array([-0.3, -0.1, 0.1, 0.3])
        heights = self.terrain.heights(s[:, L.X][:, None] + offsets)
        e[:, 2:6] = s[:, L.Z][:, None] - heights
        e[:, 6:8] = self.contact
        e[:, 8] = [p.payload_mass for p in self.params]
        e[:, 9] = [p.motor_strength_scale for p in self.params]
        return e

    def body_velocity(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward and normal base velocity in the body frame."""
        s = self.state
        c, si = np.cos(s[:, L.PITCH]), np.sin(s[:, L.PITCH])
        fwd = s[:, L.VX] * c + s[:, L.VZ] * si
        up = -s[:, L.VX] * si + s[:, L.VZ] * c
        return fwd, up

    def ground_height(self) -> np.ndarray:
        return self.terrain.heights(self.state[:, L.X][:, None])[:, 0]

    # -- dynamics --------------------------------------------------------------

    def step(self, actions: np.ndarray) -> StepResult:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.num_envs, ACTION_DIM):
            raise ValueError(f"actions must have shape {(self.num_envs, ACTION_DIM)}, got {actions.shape}")
        if not np.isfinite(actions).all():
            bad = np.flatnonzero(~np.isfinite(actions).all(axis=1))
            raise ValueError(f"non-finite action for envs {bad.tolist()}")
        cfg = self.cfg
        lim = cfg.action_limit
        actions = np.clip(actions, -lim, lim)
        self.action_queue[:, 1:] = self.action_queue[:, :-1]
        self.action_queue[:, 0] = actions
        applied = np.ascontiguousarray(self.action_queue[np.arange(self.num_envs), self.delay])

        self.kernel.integrate(
            self.state,
            self.dyn,
            applied,
            *self.terrain.arrays,
            self.consts,
            cfg.substeps,
            cfg.dt / cfg.substeps,
            self.torques,
            self.contact,
        )
        self.step_index += 1

        reward, terms = self._reward(actions)
        self.episode_return += reward
        self.episode_tracking += terms["lin_vel_tracking"]
        self.last_last_actions[:] = self.last_actions
        self.last_actions[:] = actions
        self.last_joint_vel[:] = self.state[:, L.THD0 : L.THD0 + 2]

        s = self.state
        measured = {"v_fwd": self.body_velocity()[0], "pitch_rate": s[:, L.PITCH_RATE].copy(), "x": s[:, L.X].copy()}
        finite = np.isfinite(s).all(axis=1)
        fell = s[:, L.Z] < np.where(finite, self.ground_height(), 0.0)
        flipped = np.abs(s[:, L.PITCH]) > cfg.max_pitch
        time_out = self.step_index >= cfg.episode_length
        done = fell | flipped | time_out | ~finite
        time_out &= ~(fell | flipped | ~finite)

        ids = np.flatnonzero(done)
        lengths = self.step_index[ids].tolist()
        returns = self.episode_return[ids].tolist()
        if cfg.curriculum:
            for n in ids:
                mean_track = self.episode_tracking[n] / max(self.step_index[n], 1)
                self.terrain_level[n] = update_terrain_level(
                    mean_track, int(self.terrain_level[n]), cfg.curriculum_up, cfg.curriculum_down,
                    cfg.max_terrain_level,
                )
        self.reset(ids)
        return StepResult(
            obs=self.observe(),
            reward=reward,
            done=done,
            time_out=time_out,
            privileged=self.privileged(),
            reward_terms=terms,
            finished_lengths=lengths,
            finished_returns=returns,
            measured=measured,
        )

    def reward_inputs(self, actions: np.ndarray) -> RewardInputs:
        s = self.state
        n = self.num_envs
        fwd, up = self.body_velocity()
        r = self.cfg.physics.wheel_radius
        thd = s[:, L.THD0 : L.THD0 + 2]
        ax, rz = self._axles(s[:, L.X], s[:, L.PITCH])
        g, _ = self.terrain.wheel_ground(ax)
        zeros2 = np.zeros((n, 2))
        return RewardInputs(
            lin_vel_xy=np.stack([fwd, np.zeros(n)], axis=1),
            lin_vel_xy_cmd=np.stack([self.commands[:, 0], np.zeros(n)], axis=1),
            lin_vel_z=up,
            ang_vel_yaw=s[:, L.PITCH_RATE].copy(),
            ang_vel_yaw_cmd=self.commands[:, 1].copy(),
            ang_vel_xy=np.stack([np.zeros(n), s[:, L.PITCH_RATE]], axis=1),
            torques=self.torques.copy(),
            joint_vel=thd.copy(),
            joint_acc=(thd - self.last_joint_vel) / self.cfg.dt,
            base_height=s[:, L.Z] - self.ground_height(),
            actions=actions,
            last_actions=self.last_actions.copy(),
            last_last_actions=self.last_last_actions.copy(),
            foot_heights=(s[:, L.Z][:, None] + rz) - g if n else zeros2,
            foot_speeds=np.abs(r * thd - fwd[:, None]),
            projected_gravity_xy=np.stack([-np.sin(s[:, L.PITCH]), np.zeros(n)], axis=1),
        )

    def _reward(self, actions):
        total, terms = compute_reward(self.reward_inputs(actions), self.reward_cfg)
        return total, terms

    # -- introspection -----------------------------------------------------------

    def kinetic_energy(self) -> np.ndarray:
        s = self.state
        w = self.cfg.physics.wheel_inertia
        return 0.5 * (
            self.dyn[:, L.MASS] * (s[:, L.VX] ** 2 + s[:, L.VZ] ** 2)
            + self.dyn[:, L.INERTIA] * s[:, L.PITCH_RATE] ** 2
            + w * (s[:, L.THD0] ** 2 + s[:, L.THD1] ** 2)
        )

    def mechanical_energy(self) -> np.ndarray:
        """Kinetic + gravitational + contact-spring energy."""
        s = self.state
        k = self.cfg.physics.contact_stiffness
        ax, rz = self._axles(s[:, L.X], s[:, L.PITCH])
        g, dg = self.terrain.wheel_ground(ax)
        pen = np.maximum(g - (s[:, L.Z][:, None] + rz), 0.0)
        spring = 0.5 * k * (pen**2 / np.sqrt(1.0 + dg**2)).sum(axis=1)
        return self.kinetic_energy() + self.dyn[:, L.MASS] * self.cfg.physics.gravity * s[:, L.Z] + spring

    def trajectory_row(self, n: int, step: int, done: bool) -> dict:
        s = self.state[n]
        mode = int(self.terrain.current_mode(self.state[:, L.X])[n])
        return {
            "step": step,
            "x": float(s[L.X]),
            "height": float(s[L.Z]),
            "pitch": float(s[L.PITCH]),
            "vx": float(self.body_velocity()[0][n]),
            "cmd_vx": float(self.commands[n, 0]),
            "terrain_mode": L.TERRAIN_NAMES[mode],
            "terrain_level": int(self.terrain_level[n]),
            "done": int(done),
        }


def write_trajectory_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_HEADER)
        writer.writeheader()
        writer.writerows(rows)
