from __future__ import annotations

import math

import numpy as np

from .. import kernels
from ..kernels.layout import FLAT, STEPS_DOWN, STEPS_UP, TERRAIN_NAMES

TERRAIN_CODES = {name: code for code, name in enumerate(TERRAIN_NAMES)}


def terrain_code(mode: str | int) -> int:
    if isinstance(mode, (int, np.integer)):
        if not 0 <= mode < len(TERRAIN_NAMES):
            raise ValueError(f"unknown terrain code {mode}")
        return int(mode)
    try:
        return TERRAIN_CODES[mode]
    except KeyError:
        raise ValueError(f"unknown terrain mode {mode!r}; expected one of {TERRAIN_NAMES}") from None


def terrain_height(
    x: float, mode: str | int, scale: float, step_height: float = 0.1, step_run: float = 0.5
) -> float:
    """Height of a single-mode terrain that starts at x = 0.

    Slopes rise or fall by ``scale`` per metre; stairs climb or drop
    ``scale * step_height`` every ``step_run`` metres.
    """
    if scale < 0:
        raise ValueError("terrain scale must be non-negative")
    code = terrain_code(mode)
    if code == FLAT:
        return 0.0
    sign = 1.0 if code in (TERRAIN_CODES["slope_up"], STEPS_UP) else -1.0
    if code in (STEPS_UP, STEPS_DOWN):
        return sign * math.floor(x / step_run) * scale * step_height
    return sign * scale * x


class TerrainBank:
    """Piecewise terrains for a batch of envs, at most ``max_segments`` each.

    Segment 0 extends to -inf; segment k covers [start_k, start_{k+1}).
    Heights are continuous at segment joins.
    """

    def __init__(self, num_envs: int, consts: np.ndarray, max_segments: int = 1):
        self.consts = consts
        self.start = np.zeros((num_envs, max_segments))
        self.mode = np.zeros((num_envs, max_segments), dtype=np.int32)
        self.scale = np.zeros((num_envs, max_segments))
        self.offset = np.zeros((num_envs, max_segments))
        self.count = np.ones(num_envs, dtype=np.int32)

    @property
    def arrays(self):
        return self.start, self.mode, self.scale, self.offset, self.count

    def set_single(self, env: int, mode: str | int, scale: float) -> None:
        self.start[env] = 0.0
        self.mode[env] = terrain_code(mode)
        self.scale[env] = scale
        self.offset[env] = 0.0
        self.count[env] = 1

    def append(self, env: int, mode: str | int, scale: float, x_start: float) -> None:
        k = int(self.count[env])
        if k >= self.start.shape[1]:
            raise ValueError(f"env {env} already has {k} terrain segments")
        if x_start < self.start[env, k - 1] and k > 1:
            raise ValueError("segments must be appended in increasing x")
        h = self.heights(np.array([[x_start]]), rows=[env])[0, 0]
        self.start[env, k] = x_start
        self.mode[env, k] = terrain_code(mode)
        self.scale[env, k] = scale
        self.offset[env, k] = h
        self.count[env] = k + 1

    def current_mode(self, xs: np.ndarray) -> np.ndarray:
        """Mode code of the segment under each env's position ``xs`` (N,)."""
        k = np.arange(self.start.shape[1])
        valid = (k >= 1) & (k[None, :] < self.count[:, None])
        idx = (valid & (self.start <= xs[:, None])).sum(axis=1)
        return self.mode[np.arange(len(xs)), idx]

    def _rows(self, rows):
        if rows is None:
            return self.arrays
        rows = np.asarray(rows)
        return (
            np.ascontiguousarray(self.start[rows]),
            np.ascontiguousarray(self.mode[rows]),
            np.ascontiguousarray(self.scale[rows]),
            np.ascontiguousarray(self.offset[rows]),
            np.ascontiguousarray(self.count[rows]),
        )

    def heights(self, xs: np.ndarray, rows=None) -> np.ndarray:
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        return kernels.terrain_heights(xs, *self._rows(rows), self.consts)

    def wheel_ground(self, xs: np.ndarray, rows=None) -> tuple[np.ndarray, np.ndarray]:
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        return kernels.wheel_ground(xs, *self._rows(rows), self.consts)
