"""Column layout shared by the compiled and the numpy physics kernels."""

# state columns
X, Z, PITCH, VX, VZ, PITCH_RATE, TH0, TH1, THD0, THD1 = range(10)
STATE_DIM = 10

# per-env dynamics parameter columns
MASS, INERTIA, FRICTION, CONTACT_DAMP, MOTOR, KP, KD, FEXT_X, FEXT_Z = range(9)
PARAM_DIM = 9

# physical constants vector
(
    GRAVITY,
    HALF_BASE,
    COM_HEIGHT,
    WHEEL_RADIUS,
    WHEEL_INERTIA,
    CONTACT_K,
    SLIP_VEL,
    KP_NOM,
    KD_NOM,
    ACTION_SCALE,
    TORQUE_LIMIT,
    DRAG,
    WHEEL_DAMP,
    PITCH_DAMP,
    STEP_HEIGHT,
    STEP_RUN,
    CONTACT_TOL,
) = range(17)
CONST_DIM = 17

# terrain mode codes
FLAT, SLOPE_UP, SLOPE_DOWN, STEPS_UP, STEPS_DOWN = range(5)
TERRAIN_NAMES = ("flat", "slope_up", "slope_down", "steps_up", "steps_down")
