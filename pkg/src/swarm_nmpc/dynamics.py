"""Vehicle model used by both the controller and the simulated plant.

State layout (9 entries): position (3), inertial velocity (3), roll, pitch,
yaw. Inputs are commanded roll, commanded pitch and mass-normalized
collective thrust (m/s^2). Attitude follows identified first-order
closed-loop responses; yaw rate is an exogenous signal taken from the
reference, not a decision variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelDomainError

NX = 9
NU = 3
POS = slice(0, 3)
VEL = slice(3, 6)
ROLL, PITCH, YAW = 6, 7, 8

_ANGLE_LIMIT = np.pi / 2


@dataclass
class ModelParams:
    """Physical and identified parameters of one vehicle."""

    mass: float = 1.5            # kg
    gravity: float = 9.81        # m/s^2
    drag_coeff: float = 0.02     # lumped rotor-plane drag, per (m/s)
    roll_gain: float = 1.0       # DC gain of the closed-loop roll response
    pitch_gain: float = 1.0
    roll_tau: float = 0.2        # s
    pitch_tau: float = 0.2       # s

    def validate(self) -> None:
        if not (self.mass > 0 and self.gravity > 0):
            raise ModelDomainError("mass and gravity must be positive")
        if self.drag_coeff < 0:
            raise ModelDomainError("drag_coeff must be non-negative")
        if not (self.roll_tau > 0 and self.pitch_tau > 0):
            raise ModelDomainError("attitude time constants must be positive")
        if not (self.roll_gain > 0 and self.pitch_gain > 0):
            raise ModelDomainError("attitude gains must be positive")


@dataclass
class MavState:
    """Controller-level vehicle state at one instant."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def as_vector(self) -> np.ndarray:
        x = np.empty(NX)
        x[POS] = self.position
        x[VEL] = self.velocity
        x[ROLL] = self.roll
        x[PITCH] = self.pitch
        x[YAW] = self.yaw
        return x

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "MavState":
        x = np.asarray(x, dtype=float)
        return cls(x[POS].copy(), x[VEL].copy(), float(x[ROLL]), float(x[PITCH]), float(x[YAW]))

    def validate(self) -> None:
        validate_state(self.as_vector())


@dataclass
class ControlInput:
    """Commanded roll/pitch (rad) and mass-normalized thrust (m/s^2)."""

    roll_cmd: float = 0.0
    pitch_cmd: float = 0.0
    thrust_cmd: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.array([self.roll_cmd, self.pitch_cmd, self.thrust_cmd])

    @classmethod
    def from_vector(cls, u: np.ndarray) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]), float(u[2]))


@dataclass
class ExternalForce:
    """Inertial-frame force acting on the vehicle, e.g. wind (N)."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def validate(self) -> None:
        if not np.all(np.isfinite(self.force)):
            raise ModelDomainError("external force must be finite")


def validate_state(x: np.ndarray) -> None:
    """Raise if the state is outside the model validity envelope."""
    # sum() is finite iff every entry is finite; cheaper than an isfinite scan.
    if not math.isfinite(float(np.sum(x))):
        raise ModelDomainError("state contains non-finite entries")
    if abs(x[ROLL]) >= _ANGLE_LIMIT or abs(x[PITCH]) >= _ANGLE_LIMIT:
        raise ModelDomainError(
            f"attitude outside validity envelope: roll={x[ROLL]:.4f}, pitch={x[PITCH]:.4f}"
        )


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-inertial rotation, yaw-pitch-roll (ZYX) convention."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def _thrust_axis(roll: float, pitch: float, yaw: float):
    """Third rotation column (thrust direction) and its angle derivatives.

    Drag only needs this column: R diag(kd, kd, 0) R^T = kd (I - c c^T)
    with c the thrust axis, because R R^T = I.
    """
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    c = np.array([cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr])
    dc_roll = np.array([-cy * sp * sr + sy * cr, -sy * sp * sr - cy * cr, -cp * sr])
    dc_pitch = np.array([cy * cp * cr, sy * cp * cr, -sp * cr])
    dc_yaw = np.array([-sy * sp * cr + cy * sr, cy * sp * cr + sy * sr, 0.0])
    return c, dc_roll, dc_pitch, dc_yaw


def _field(x, u, f_ext, prm, yaw_rate, jac: bool):
    """Fused evaluation of the vector field and (optionally) its Jacobians."""
    validate_state(x)
    thrust = float(u[2])
    kd = prm.drag_coeff
    v = x[VEL]
    c, dc_r, dc_p, dc_y = _thrust_axis(x[ROLL], x[PITCH], x[YAW])
    cv = float(c @ v)  # body-z component of the velocity

    dx = np.empty(NX)
    dx[POS] = v
    dx[VEL] = thrust * c - thrust * kd * (v - cv * c) + f_ext / prm.mass
    dx[5] -= prm.gravity
    dx[ROLL] = (prm.roll_gain * u[0] - x[ROLL]) / prm.roll_tau
    dx[PITCH] = (prm.pitch_gain * u[1] - x[PITCH]) / prm.pitch_tau
    dx[YAW] = yaw_rate
    if not jac:
        return dx, None, None

    jx = np.zeros((NX, NX))
    ju = np.zeros((NX, NU))
    jx[0, 3] = jx[1, 4] = jx[2, 5] = 1.0
    # d(v_dot)/dv = -T kd (I - c c^T)
    tk = thrust * kd
    outer = np.outer(c, c)
    jx[VEL, VEL] = -tk * (np.eye(3) - outer)
    # d(v_dot)/d(angle) = T dc + T kd ((dc . v) c + cv dc)
    for col, dc in ((ROLL, dc_r), (PITCH, dc_p), (YAW, dc_y)):
        jx[VEL, col] = thrust * dc + tk * (float(dc @ v) * c + cv * dc)
    jx[ROLL, ROLL] = -1.0 / prm.roll_tau
    jx[PITCH, PITCH] = -1.0 / prm.pitch_tau

    ju[VEL, 2] = c - kd * (v - cv * c)
    ju[ROLL, 0] = prm.roll_gain / prm.roll_tau
    ju[PITCH, 1] = prm.pitch_gain / prm.pitch_tau
    return dx, jx, ju


def continuous_dynamics(
    x: np.ndarray,
    u: np.ndarray,
    f_ext: np.ndarray,
    prm: ModelParams,
    yaw_rate: float = 0.0,
) -> np.ndarray:
    """Time derivative of the 9-state model.

    Thrust acts along body z; rotor-plane drag scales with the current
    thrust command and opposes the velocity component orthogonal to the
    thrust axis.
    """
    dx, _, _ = _field(x, u, f_ext, prm, yaw_rate, jac=False)
    return dx


def dynamics_jacobians(
    x: np.ndarray,
    u: np.ndarray,
    f_ext: np.ndarray,
    prm: ModelParams,
    yaw_rate: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians (df/dx, df/du) of :func:`continuous_dynamics`."""
    _, jx, ju = _field(x, u, f_ext, prm, yaw_rate, jac=True)
    return jx, ju


def integrate_rk4(
    x: np.ndarray,
    u: np.ndarray,
    f_ext: np.ndarray,
    prm: ModelParams,
    h: float,
    yaw_rate: float = 0.0,
) -> np.ndarray:
    """One classical explicit RK4 step with the input held constant."""
    if h <= 0:
        raise ValueError("step size must be positive")
    k1, _, _ = _field(x, u, f_ext, prm, yaw_rate, False)
    k2, _, _ = _field(x + 0.5 * h * k1, u, f_ext, prm, yaw_rate, False)
    k3, _, _ = _field(x + 0.5 * h * k2, u, f_ext, prm, yaw_rate, False)
    k4, _, _ = _field(x + h * k3, u, f_ext, prm, yaw_rate, False)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_sensitivities(
    x: np.ndarray,
    u: np.ndarray,
    f_ext: np.ndarray,
    prm: ModelParams,
    h: float,
    yaw_rate: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """RK4 step together with the discrete transition matrices.

    Returns (x_next, A, B) where A = d x_next / d x and B = d x_next / d u,
    obtained by chaining the stage Jacobians through the integrator so the
    sensitivities are exactly consistent with :func:`integrate_rk4`.
    """
    xs, a, b = rk4_sensitivities_batch(
        x[None, :], u[None, :], f_ext, prm, h, np.array([yaw_rate])
    )
    return xs[0], a[0], b[0]


# ---------------------------------------------------------------------------
# Batched kernels. Shooting intervals are mutually independent (each starts
# from its own guess node), so the solver evaluates all of them at once.


def _field_batch(xs, us, f_ext, prm, yaw_rates, jac: bool):
    """Vectorized :func:`_field` over a batch of (state, input) pairs."""
    if not math.isfinite(float(xs.sum())):
        raise ModelDomainError("state contains non-finite entries")
    if np.any(np.abs(xs[:, ROLL]) >= _ANGLE_LIMIT) or np.any(
        np.abs(xs[:, PITCH]) >= _ANGLE_LIMIT
    ):
        raise ModelDomainError("attitude outside validity envelope")
    n = xs.shape[0]
    kd = prm.drag_coeff
    thrust = us[:, 2]
    v = xs[:, 3:6]
    cr, sr = np.cos(xs[:, ROLL]), np.sin(xs[:, ROLL])
    cp, sp = np.cos(xs[:, PITCH]), np.sin(xs[:, PITCH])
    cy, sy = np.cos(xs[:, YAW]), np.sin(xs[:, YAW])
    c = np.stack([cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr], axis=1)
    cv = np.einsum("ki,ki->k", c, v)

    dx = np.empty_like(xs)
    dx[:, :3] = v
    dx[:, 3:6] = (
        thrust[:, None] * c
        - (thrust * kd)[:, None] * (v - cv[:, None] * c)
        + f_ext[None, :] / prm.mass
    )
    dx[:, 5] -= prm.gravity
    dx[:, ROLL] = (prm.roll_gain * us[:, 0] - xs[:, ROLL]) / prm.roll_tau
    dx[:, PITCH] = (prm.pitch_gain * us[:, 1] - xs[:, PITCH]) / prm.pitch_tau
    dx[:, YAW] = yaw_rates
    if not jac:
        return dx, None, None

    dc = {
        ROLL: np.stack(
            [-cy * sp * sr + sy * cr, -sy * sp * sr - cy * cr, -cp * sr], axis=1
        ),
        PITCH: np.stack([cy * cp * cr, sy * cp * cr, -sp * cr], axis=1),
        YAW: np.stack(
            [-sy * sp * cr + cy * sr, cy * sp * cr + sy * sr, np.zeros(n)], axis=1
        ),
    }
    jx = np.zeros((n, NX, NX))
    ju = np.zeros((n, NX, NU))
    jx[:, 0, 3] = jx[:, 1, 4] = jx[:, 2, 5] = 1.0
    tk = thrust * kd
    outer = np.einsum("ki,kj->kij", c, c)
    jx[:, 3:6, 3:6] = -tk[:, None, None] * (np.eye(3)[None, :, :] - outer)
    for col, dcol in dc.items():
        dcv = np.einsum("ki,ki->k", dcol, v)
        jx[:, 3:6, col] = thrust[:, None] * dcol + tk[:, None] * (
            dcv[:, None] * c + cv[:, None] * dcol
        )
    jx[:, ROLL, ROLL] = -1.0 / prm.roll_tau
    jx[:, PITCH, PITCH] = -1.0 / prm.pitch_tau
    ju[:, 3:6, 2] = c - kd * (v - cv[:, None] * c)
    ju[:, ROLL, 0] = prm.roll_gain / prm.roll_tau
    ju[:, PITCH, 1] = prm.pitch_gain / prm.pitch_tau
    return dx, jx, ju


def integrate_rk4_batch(xs, us, f_ext, prm, h, yaw_rates) -> np.ndarray:
    """RK4 step applied to every (state, input) pair in the batch."""
    if h <= 0:
        raise ValueError("step size must be positive")
    k1, _, _ = _field_batch(xs, us, f_ext, prm, yaw_rates, False)
    k2, _, _ = _field_batch(xs + 0.5 * h * k1, us, f_ext, prm, yaw_rates, False)
    k3, _, _ = _field_batch(xs + 0.5 * h * k2, us, f_ext, prm, yaw_rates, False)
    k4, _, _ = _field_batch(xs + h * k3, us, f_ext, prm, yaw_rates, False)
    return xs + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_sensitivities_batch(xs, us, f_ext, prm, h, yaw_rates):
    """Batched :func:`rk4_sensitivities` over independent intervals."""
    if h <= 0:
        raise ValueError("step size must be positive")
    half = 0.5 * h
    k1, a1, b1 = _field_batch(xs, us, f_ext, prm, yaw_rates, True)
    k2, j2, g2 = _field_batch(xs + half * k1, us, f_ext, prm, yaw_rates, True)
    a2 = j2 + half * (j2 @ a1)
    b2 = half * (j2 @ b1) + g2
    k3, j3, g3 = _field_batch(xs + half * k2, us, f_ext, prm, yaw_rates, True)
    a3 = j3 + half * (j3 @ a2)
    b3 = half * (j3 @ b2) + g3
    k4, j4, g4 = _field_batch(xs + h * k3, us, f_ext, prm, yaw_rates, True)
    a4 = j4 + h * (j4 @ a3)
    b4 = h * (j4 @ b3) + g4

    x_next = xs + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    a_disc = np.eye(NX)[None, :, :] + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    b_disc = (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return x_next, a_disc, b_disc
