# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rover physics; mirrors physics_py.py operation for operation."""

from libc.math cimport cos, sin, sqrt, tanh, floor, fabs

import numpy as np

cdef enum:
    X = 0
    Z = 1
    PITCH = 2
    VX = 3
    VZ = 4
    PITCH_RATE = 5
    TH0 = 6
    THD0 = 8

cdef enum:
    MASS = 0
    INERTIA = 1
    FRICTION = 2
    CONTACT_DAMP = 3
    MOTOR = 4
    KP = 5
    KD = 6
    FEXT_X = 7
    FEXT_Z = 8

cdef enum:
    GRAVITY = 0
    HALF_BASE = 1
    COM_HEIGHT = 2
    WHEEL_RADIUS = 3
    WHEEL_INERTIA = 4
    CONTACT_K = 5
    SLIP_VEL = 6
    KP_NOM = 7
    KD_NOM = 8
    ACTION_SCALE = 9
    TORQUE_LIMIT = 10
    DRAG = 11
    WHEEL_DAMP = 12
    PITCH_DAMP = 13
    STEP_HEIGHT = 14
    STEP_RUN = 15
    CONTACT_TOL = 16

cdef enum:
    FLAT = 0
    SLOPE_UP = 1
    SLOPE_DOWN = 2
    STEPS_UP = 3
    STEPS_DOWN = 4


cdef struct Profile:
    double h
    double slope
    int idx
    double start
    double sgn
    int is_steps
    double rise
    double offset
    double u


cdef inline Profile _profile(double x, int n, const double[:, ::1] seg_start,
                             const int[:, ::1] seg_mode, const double[:, ::1] seg_scale,
                             const double[:, ::1] seg_offset, const int[::1] seg_count,
                             const double[::1] c) noexcept nogil:
    cdef Profile pr
    cdef int k, idx = 0, mode
    cdef double scale
    for k in range(1, seg_count[n]):
        if seg_start[n, k] <= x:
            idx += 1
    mode = seg_mode[n, idx]
    scale = seg_scale[n, idx]
    pr.idx = idx
    pr.start = seg_start[n, idx]
    pr.offset = seg_offset[n, idx]
    pr.u = x - pr.start
    if mode == SLOPE_UP or mode == STEPS_UP:
        pr.sgn = 1.0
    elif mode == SLOPE_DOWN or mode == STEPS_DOWN:
        pr.sgn = -1.0
    else:
        pr.sgn = 0.0
    pr.is_steps = mode == STEPS_UP or mode == STEPS_DOWN
    pr.rise = scale * c[STEP_HEIGHT]
    pr.h = pr.offset
    pr.slope = 0.0
    if mode == SLOPE_UP or mode == SLOPE_DOWN:
        pr.h = pr.offset + pr.sgn * scale * pr.u
        pr.slope = pr.sgn * scale
    elif pr.is_steps:
        pr.h = pr.offset + pr.sgn * floor(pr.u / c[STEP_RUN]) * pr.rise
    return pr


cdef inline void _wheel_ground(double x, int n, const double[:, ::1] seg_start,
                               const int[:, ::1] seg_mode, const double[:, ::1] seg_scale,
                               const double[:, ::1] seg_offset, const int[::1] seg_count,
                               const double[::1] c, double* g, double* dg) noexcept nogil:
    cdef Profile pr = _profile(x, n, seg_start, seg_mode, seg_scale, seg_offset, seg_count, c)
    cdef double r = c[WHEEL_RADIUS]
    cdef double w0 = c[STEP_RUN]
    cdef double j, du, top, root, cand
    g[0] = pr.h + r
    dg[0] = pr.slope
    if pr.is_steps:
        j = floor(pr.u / w0 + 0.5)
        if pr.idx == 0 or j >= 1.0:
            du = x - (pr.start + j * w0)
            if fabs(du) < r:
                if pr.sgn > 0:
                    top = pr.offset + j * pr.rise
                else:
                    top = pr.offset + (1.0 - j) * pr.rise
                root = sqrt(r * r - du * du) if r * r - du * du > 0.0 else 0.0
                cand = top + root
                if cand > g[0]:
                    g[0] = cand
                    dg[0] = -du / root


def terrain_heights(const double[:, ::1] xs, const double[:, ::1] seg_start,
                    const int[:, ::1] seg_mode, const double[:, ::1] seg_scale,
                    const double[:, ::1] seg_offset, const int[::1] seg_count,
                    const double[::1] consts):
    cdef Py_ssize_t n, m
    out = np.empty((xs.shape[0], xs.shape[1]))
    cdef double[:, ::1] o = out
    with nogil:
        for n in range(xs.shape[0]):
            for m in range(xs.shape[1]):
                o[n, m] = _profile(xs[n, m], n, seg_start, seg_mode, seg_scale,
                                   seg_offset, seg_count, consts).h
    return out


def wheel_ground(const double[:, ::1] xs, const double[:, ::1] seg_start,
                 const int[:, ::1] seg_mode, const double[:, ::1] seg_scale,
                 const double[:, ::1] seg_offset, const int[::1] seg_count,
                 const double[::1] consts):
    cdef Py_ssize_t n, m
    g = np.empty((xs.shape[0], xs.shape[1]))
    dg = np.empty((xs.shape[0], xs.shape[1]))
    cdef double[:, ::1] go = g
    cdef double[:, ::1] dgo = dg
    with nogil:
        for n in range(xs.shape[0]):
            for m in range(xs.shape[1]):
                _wheel_ground(xs[n, m], n, seg_start, seg_mode, seg_scale, seg_offset,
                              seg_count, consts, &go[n, m], &dgo[n, m])
    return g, dg


def integrate(double[:, ::1] state, const double[:, ::1] params, const double[:, ::1] actions,
              const double[:, ::1] seg_start, const int[:, ::1] seg_mode,
              const double[:, ::1] seg_scale, const double[:, ::1] seg_offset,
              const int[::1] seg_count, const double[::1] c, int n_sub, double dt,
              double[:, ::1] torque_out, unsigned char[:, ::1] contact_out):
    cdef Py_ssize_t n
    cdef int s, i
    cdef double sgn_w[2]
    sgn_w[0] = 1.0
    sgn_w[1] = -1.0
    cdef double l = c[HALF_BASE], hc = c[COM_HEIGHT], r = c[WHEEL_RADIUS]
    cdef double mass, inertia, mu, cdamp, drive, kp, kd
    cdef double cp, sp, w, rx, rz, ax, az, vax, vaz, g, dg, q, nx, nz, pen, rate
    cdef double normal, vt, slip, traction, torque, fx, fz
    cdef double body_fx, body_fz, moment
    cdef double wheel_acc[2]
    cdef double torq[2]
    with nogil:
        for n in range(state.shape[0]):
            mass = params[n, MASS]
            inertia = params[n, INERTIA]
            mu = params[n, FRICTION]
            cdamp = params[n, CONTACT_DAMP]
            drive = params[n, MOTOR]
            kp = params[n, KP] * c[KP_NOM] * c[ACTION_SCALE]
            kd = params[n, KD] * c[KD_NOM]
            for s in range(n_sub):
                cp = cos(state[n, PITCH])
                sp = sin(state[n, PITCH])
                w = state[n, PITCH_RATE]
                body_fx = 0.0
                body_fz = 0.0
                moment = 0.0
                for i in range(2):
                    rx = sgn_w[i] * l * cp + hc * sp
                    rz = sgn_w[i] * l * sp - hc * cp
                    ax = state[n, X] + rx
                    az = state[n, Z] + rz
                    vax = state[n, VX] - w * rz
                    vaz = state[n, VZ] + w * rx
                    _wheel_ground(ax, n, seg_start, seg_mode, seg_scale, seg_offset,
                                  seg_count, c, &g, &dg)
                    q = sqrt(1.0 + dg * dg)
                    nx = -dg / q
                    nz = 1.0 / q
                    pen = g - az
                    rate = -(vax * nx + vaz * nz)
                    normal = 0.0
                    if pen > 0.0:
                        normal = c[CONTACT_K] * pen / q + cdamp * rate
                        if normal < 0.0:
                            normal = 0.0
                    vt = vax * nz + vaz * (dg / q)
                    slip = r * state[n, THD0 + i] - vt
                    traction = mu * normal * tanh(slip / c[SLIP_VEL])
                    torque = drive * (kp * actions[n, i] - kd * state[n, THD0 + i])
                    if torque > c[TORQUE_LIMIT]:
                        torque = c[TORQUE_LIMIT]
                    elif torque < -c[TORQUE_LIMIT]:
                        torque = -c[TORQUE_LIMIT]
                    fx = normal * nx + traction * nz
                    fz = normal * nz + traction * (dg / q)
                    body_fx += fx
                    body_fz += fz
                    moment += rx * fz - rz * fx + torque
                    wheel_acc[i] = (torque - r * traction - c[WHEEL_DAMP] * state[n, THD0 + i]) / c[WHEEL_INERTIA]
                    torq[i] = torque
                body_fx = body_fx + params[n, FEXT_X] - c[DRAG] * state[n, VX]
                body_fz = body_fz + params[n, FEXT_Z] - mass * c[GRAVITY]
                moment = moment - c[PITCH_DAMP] * state[n, PITCH_RATE]

                state[n, VX] += dt * body_fx / mass
                state[n, VZ] += dt * body_fz / mass
                state[n, PITCH_RATE] += dt * moment / inertia
                for i in range(2):
                    state[n, THD0 + i] += dt * wheel_acc[i]
                state[n, X] += dt * state[n, VX]
                state[n, Z] += dt * state[n, VZ]
                state[n, PITCH] += dt * state[n, PITCH_RATE]
                for i in range(2):
                    state[n, TH0 + i] += dt * state[n, THD0 + i]
                    torque_out[n, i] = torq[i]

            cp = cos(state[n, PITCH])
            sp = sin(state[n, PITCH])
            for i in range(2):
                rx = sgn_w[i] * l * cp + hc * sp
                rz = sgn_w[i] * l * sp - hc * cp
                _wheel_ground(state[n, X] + rx, n, seg_start, seg_mode, seg_scale, seg_offset,
                              seg_count, c, &g, &dg)
                contact_out[n, i] = (g - (state[n, Z] + rz)) > -c[CONTACT_TOL]


def gae(const double[:, ::1] rewards, const double[:, ::1] values, const double[:, ::1] dones,
        const double[::1] last_values, double gamma, double lam, double[:, ::1] advantages):
    cdef Py_ssize_t t, n
    cdef double live, delta, nv, na
    with nogil:
        for n in range(rewards.shape[1]):
            na = 0.0
            nv = last_values[n]
            for t in range(rewards.shape[0] - 1, -1, -1):
                live = 1.0 - dones[t, n]
                delta = rewards[t, n] + gamma * nv * live - values[t, n]
                na = delta + gamma * lam * live * na
                advantages[t, n] = na
                nv = values[t, n]
