"""Vectorized numpy implementation of the rover physics kernels.

This is the reference/fallback path; ``_physics.pyx`` mirrors it line for
line with explicit loops.
"""

from __future__ import annotations

import numpy as np

from .layout import (
    ACTION_SCALE,
    COM_HEIGHT,
    CONTACT_DAMP,
    CONTACT_K,
    CONTACT_TOL,
    DRAG,
    FEXT_X,
    FEXT_Z,
    FRICTION,
    GRAVITY,
    HALF_BASE,
    INERTIA,
    KD,
    KD_NOM,
    KP,
    KP_NOM,
    MASS,
    MOTOR,
    PITCH,
    PITCH_DAMP,
    PITCH_RATE,
    SLIP_VEL,
    SLOPE_DOWN,
    SLOPE_UP,
    STEP_HEIGHT,
    STEP_RUN,
    STEPS_DOWN,
    STEPS_UP,
    TH0,
    THD0,
    TORQUE_LIMIT,
    VX,
    VZ,
    WHEEL_DAMP,
    WHEEL_INERTIA,
    WHEEL_RADIUS,
    X,
    Z,
)


def _segment(xs, seg_start, seg_count):
    """Index of the segment containing each x; segment 0 extends to -inf."""
    k = np.arange(seg_start.shape[1])
    valid = (k >= 1) & (k[None, :] < seg_count[:, None])  # (N, K)
    hit = valid[:, None, :] & (seg_start[:, None, :] <= xs[:, :, None])
    return hit.sum(axis=-1)


def _gather(arr, idx):
    return np.take_along_axis(arr, idx, axis=1)


def _profile(xs, seg_start, seg_mode, seg_scale, seg_offset, seg_count, consts):
    idx = _segment(xs, seg_start, seg_count)
    start = _gather(seg_start, idx)
    mode = _gather(seg_mode, idx)
    scale = _gather(seg_scale, idx)
    offset = _gather(seg_offset, idx)
    u = xs - start
    sgn = np.where((mode == SLOPE_UP) | (mode == STEPS_UP), 1.0, 0.0) - np.where(
        (mode == SLOPE_DOWN) | (mode == STEPS_DOWN), 1.0, 0.0
    )
    is_slope = (mode == SLOPE_UP) | (mode == SLOPE_DOWN)
    is_steps = (mode == STEPS_UP) | (mode == STEPS_DOWN)
    rise = scale * consts[STEP_HEIGHT]
    h = offset + np.where(is_slope, sgn * scale * u, 0.0)
    h = h + np.where(is_steps, sgn * np.floor(u / consts[STEP_RUN]) * rise, 0.0)
    slope = np.where(is_slope, sgn * scale, 0.0)
    return h, slope, idx, start, sgn, is_steps, rise, offset, u


def terrain_heights(xs, seg_start, seg_mode, seg_scale, seg_offset, seg_count, consts):
    """Ground height at positions ``xs`` (N, M) for each env's terrain."""
    return _profile(xs, seg_start, seg_mode, seg_scale, seg_offset, seg_count, consts)[0]


def wheel_ground(xs, seg_start, seg_mode, seg_scale, seg_offset, seg_count, consts):
    """Height of the surface traced by a wheel centre, and its slope.

    Step edges are rounded by the wheel radius so a wheel meeting a riser
    rolls up the corner instead of teleporting.
    """
    r = consts[WHEEL_RADIUS]
    w0 = consts[STEP_RUN]
    h, slope, idx, start, sgn, is_steps, rise, offset, u = _profile(
        xs, seg_start, seg_mode, seg_scale, seg_offset, seg_count, consts
    )
    g = h + r
    dg = slope
    j = np.floor(u / w0 + 0.5)
    corner = is_steps & ((idx == 0) | (j >= 1.0))
    du = xs - (start + j * w0)
    near = corner & (np.abs(du) < r)
    top = offset + np.where(sgn > 0, j, 1.0 - j) * rise
    root = np.sqrt(np.maximum(r * r - du * du, 0.0))
    cand = top + root
    take = near & (cand > g)
    g = np.where(take, cand, g)
    dg = np.where(take, -du / np.where(take, root, 1.0), dg)
    return g, dg


def integrate(
    state,
    params,
    actions,
    seg_start,
    seg_mode,
    seg_scale,
    seg_offset,
    seg_count,
    consts,
    n_sub,
    dt,
    torque_out,
    contact_out,
):
    """Advance every env by ``n_sub`` semi-implicit Euler substeps of ``dt``.

    Mutates ``state``; writes the last substep's motor torques and end-of-step
    contact flags into the output arrays.
    """
    sgn_w = np.array([1.0, -1.0])  # front, rear
    l = consts[HALF_BASE]
    hc = consts[COM_HEIGHT]
    r = consts[WHEEL_RADIUS]
    mass = params[:, MASS]
    inertia = params[:, INERTIA]
    mu = params[:, FRICTION][:, None]
    cdamp = params[:, CONTACT_DAMP][:, None]
    drive = params[:, MOTOR][:, None]
    kp = params[:, KP][:, None] * consts[KP_NOM] * consts[ACTION_SCALE]
    kd = params[:, KD][:, None] * consts[KD_NOM]
    segs = (seg_start, seg_mode, seg_scale, seg_offset, seg_count, consts)
    for _ in range(n_sub):
        p = state[:, PITCH]
        cp = np.cos(p)[:, None]
        sp = np.sin(p)[:, None]
        w = state[:, PITCH_RATE][:, None]
        thd = state[:, THD0 : THD0 + 2]
        rx = sgn_w * l * cp + hc * sp
        rz = sgn_w * l * sp - hc * cp
        ax = state[:, X][:, None] + rx
        az = state[:, Z][:, None] + rz
        vax = state[:, VX][:, None] - w * rz
        vaz = state[:, VZ][:, None] + w * rx
        g, dg = wheel_ground(ax, *segs)
        q = np.sqrt(1.0 + dg * dg)
        nx = -dg / q
        nz = 1.0 / q
        pen = g - az
        rate = -(vax * nx + vaz * nz)
        normal = np.where(pen > 0.0, np.maximum(consts[CONTACT_K] * pen / q + cdamp * rate, 0.0), 0.0)
        vt = vax * nz + vaz * (dg / q)
        slip = r * thd - vt
        traction = mu * normal * np.tanh(slip / consts[SLIP_VEL])
        torque = np.clip(drive * (kp * actions - kd * thd), -consts[TORQUE_LIMIT], consts[TORQUE_LIMIT])
        fx = normal * nx + traction * nz
        fz = normal * nz + traction * (dg / q)
        body_fx = fx.sum(axis=1) + params[:, FEXT_X] - consts[DRAG] * state[:, VX]
        body_fz = fz.sum(axis=1) + params[:, FEXT_Z] - mass * consts[GRAVITY]
        moment = (rx * fz - rz * fx + torque).sum(axis=1) - consts[PITCH_DAMP] * state[:, PITCH_RATE]
        wheel_acc = (torque - r * traction - consts[WHEEL_DAMP] * thd) / consts[WHEEL_INERTIA]

        state[:, VX] += dt * body_fx / mass
        state[:, VZ] += dt * body_fz / mass
        state[:, PITCH_RATE] += dt * moment / inertia
        state[:, THD0 : THD0 + 2] += dt * wheel_acc
        state[:, X] += dt * state[:, VX]
        state[:, Z] += dt * state[:, VZ]
        state[:, PITCH] += dt * state[:, PITCH_RATE]
        state[:, TH0 : TH0 + 2] += dt * state[:, THD0 : THD0 + 2]
        torque_out[:] = torque

    p = state[:, PITCH]
    rx = sgn_w * l * np.cos(p)[:, None] + hc * np.sin(p)[:, None]
    rz = sgn_w * l * np.sin(p)[:, None] - hc * np.cos(p)[:, None]
    g, _ = wheel_ground(state[:, X][:, None] + rx, *segs)
    contact_out[:] = (g - (state[:, Z][:, None] + rz)) > -consts[CONTACT_TOL]


def gae(rewards, values, dones, last_values, gamma, lam, advantages):
    """Backward GAE recursion over the time axis of (T, N) arrays."""
    next_adv = np.zeros(rewards.shape[1])
    next_value = np.asarray(last_values, dtype=np.float64)
    for t in range(rewards.shape[0] - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        advantages[t] = next_adv
        next_value = values[t]
