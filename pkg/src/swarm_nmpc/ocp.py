"""Finite-horizon optimal control problem: grid, costs, bounds, assembly.

The tracking objective is quadratic in the state and input deviations from
the reference; collisions enter through a bounded logistic penalty of the
predicted distance to each neighbor, with half its magnitude reached at the
(inflated) threshold radius. The assembled problem carries everything the
SQP solver needs: references, input bounds, the disturbance estimate and
per-node obstacle predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import avoidance, dynamics
from .avoidance import AgentBelief, CollisionParams, ObstaclePrediction
from .dynamics import ModelParams, NX, NU, POS, VEL, YAW
from .errors import ConfigError


def _default_q_state() -> np.ndarray:
    return np.diag([10.0, 10.0, 20.0, 5.0, 5.0, 8.0, 2.0, 2.0, 2.0])


def _default_r_input() -> np.ndarray:
    return np.diag([60.0, 60.0, 1.0])


@dataclass
class OcpConfig:
    """Horizon, weights and input bounds of the tracking problem."""

    horizon: float = 2.0
    intervals: int = 20
    q_state: np.ndarray = field(default_factory=_default_q_state)
    r_input: np.ndarray = field(default_factory=_default_r_input)
    q_terminal: np.ndarray | None = None  # defaults to terminal_scale * q_state
    terminal_scale: float = 10.0
    roll_limit: float = 0.5236
    pitch_limit: float = 0.5236
    thrust_min: float = 1.0
    thrust_max: float = 20.0

    def __post_init__(self):
        self.q_state = np.asarray(self.q_state, dtype=float)
        self.r_input = np.asarray(self.r_input, dtype=float)
        if self.q_terminal is None:
            self.q_terminal = self.terminal_scale * self.q_state
        else:
            self.q_terminal = np.asarray(self.q_terminal, dtype=float)

    @property
    def dt(self) -> float:
        return self.horizon / self.intervals

    @property
    def input_lower(self) -> np.ndarray:
        return np.array([-self.roll_limit, -self.pitch_limit, self.thrust_min])

    @property
    def input_upper(self) -> np.ndarray:
        return np.array([self.roll_limit, self.pitch_limit, self.thrust_max])

    def validate(self) -> None:
        if self.horizon <= 0:
            raise ConfigError("ocp.horizon must be positive")
        if self.intervals < 2:
            raise ConfigError("ocp.intervals must be at least 2")
        for name, mat, dim in (
            ("q_state", self.q_state, NX),
            ("r_input", self.r_input, NU),
            ("q_terminal", self.q_terminal, NX),
        ):
            if mat.shape != (dim, dim):
                raise ConfigError(f"ocp.{name} must be {dim}x{dim}")
            if not np.allclose(mat, mat.T, atol=1e-9):
                raise ConfigError(f"ocp.{name} must be symmetric")
            if np.linalg.eigvalsh(mat).min() < -1e-9:
                raise ConfigError(f"ocp.{name} must be positive semidefinite")
        if not np.all(self.input_lower < self.input_upper):
            raise ConfigError("ocp input bounds must satisfy min < max")


@dataclass
class ReferenceTrajectory:
    """Time-stamped reference samples with linear interpolation.

    Sampling outside the stored span clamps to the first/last sample, so a
    finished trajectory turns into a hover at its endpoint.
    """

    times: np.ndarray          # (M,), strictly increasing
    states: np.ndarray         # (M, 9)
    accelerations: np.ndarray  # (M, 3)
    yaw_rates: np.ndarray      # (M,)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.accelerations = np.asarray(self.accelerations, dtype=float)
        self.yaw_rates = np.asarray(self.yaw_rates, dtype=float)
        if self.times.size == 0:
            raise ConfigError("reference trajectory must contain at least one sample")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("reference timestamps must be strictly increasing")
        if self.states.shape != (self.times.size, NX):
            raise ConfigError("reference states must have shape (M, 9)")

    def sample(self, t: float) -> tuple[np.ndarray, np.ndarray, float]:
        x, a, w = self.sample_many(np.array([t]))
        return x[0], a[0], float(w[0])

    def sample_many(self, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ts = np.asarray(ts, dtype=float)
        x = np.column_stack(
            [np.interp(ts, self.times, self.states[:, i]) for i in range(NX)]
        )
        a = np.column_stack(
            [np.interp(ts, self.times, self.accelerations[:, i]) for i in range(3)]
        )
        w = np.interp(ts, self.times, self.yaw_rates)
        return x, a, w

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    @property
    def end_position(self) -> np.ndarray:
        return self.states[-1, POS].copy()


def input_reference(a_ref: np.ndarray, yaw_ref: float, gravity: float) -> np.ndarray:
    """Nominal input that realizes a reference acceleration at zero drag.

    Inverts thrust-direction kinematics: the commanded thrust vector must
    equal a_ref + g e_z in the inertial frame; roll/pitch follow from its
    direction expressed in the yaw-aligned frame.
    """
    thrust_vec = np.asarray(a_ref, dtype=float) + np.array([0.0, 0.0, gravity])
    thrust = float(np.linalg.norm(thrust_vec))
    if thrust < 1e-9:
        raise ValueError("reference acceleration cancels gravity; attitude undefined")
    cy, sy = math.cos(yaw_ref), math.sin(yaw_ref)
    # Rotate by -yaw: body-z direction in the de-yawed frame.
    wx = cy * thrust_vec[0] + sy * thrust_vec[1]
    wy = -sy * thrust_vec[0] + cy * thrust_vec[1]
    wz = thrust_vec[2]
    roll_cmd = math.asin(max(-1.0, min(1.0, -wy / thrust)))
    pitch_cmd = math.atan2(wx, wz)
    return np.array([roll_cmd, pitch_cmd, thrust])


def _logistic(z: float) -> float:
    # Numerically stable 1 / (1 + exp(z)).
    if z >= 0.0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def _logistic_array(z: np.ndarray) -> np.ndarray:
    # Same branch structure as the scalar version, element-wise.
    a = np.exp(-np.abs(z))
    return np.where(z >= 0.0, a / (1.0 + a), 1.0 / (1.0 + a))


def collision_cost_terms(
    p: np.ndarray,
    obstacles: list[tuple[np.ndarray, float]],
    params: CollisionParams,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Logistic avoidance cost with gradient and a PSD-projected Hessian.

    `obstacles` holds (position, inflated threshold radius) pairs for one
    grid node. The exact Hessian of the cost has negative curvature along
    the approach direction on the far side of the threshold; clipping its
    eigenvalues keeps the quadratic subproblems convex.
    """
    cost = 0.0
    grad = np.zeros(3)
    hess = np.zeros((3, 3))
    kappa = params.steepness
    for p_obs, r_th in obstacles:
        d, direction = avoidance.separation(p, p_obs)
        s = _logistic(kappa * (d - r_th))
        cost += params.q_cost * s
        dc = -params.q_cost * kappa * s * (1.0 - s)  # d cost / d distance, <= 0
        d2c = params.q_cost * kappa * kappa * s * (1.0 - s) * (1.0 - 2.0 * s)
        grad += dc * direction
        outer = np.outer(direction, direction)
        if d > 1e-9:
            curv_perp = dc / d
        else:
            curv_perp = 0.0
        hess += d2c * outer + curv_perp * (np.eye(3) - outer)
    if obstacles:
        w, v = np.linalg.eigh(hess)
        hess = (v * np.maximum(w, 0.0)) @ v.T
    return cost, grad, hess


def stage_cost(
    x: np.ndarray,
    u: np.ndarray,
    x_ref: np.ndarray,
    u_ref: np.ndarray,
    config: OcpConfig,
    obstacles: list[tuple[np.ndarray, float]] | None = None,
    coll_params: CollisionParams | None = None,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Cost at one grid node with its Gauss-Newton expansion.

    Returns (value, grad_x, grad_u, hess_xx, hess_uu). The tracking terms
    are exactly quadratic; the collision term contributes its gradient and
    a convexified Hessian on the position block.
    """
    ex = x - x_ref
    eu = u - u_ref
    qx = config.q_state
    ru = config.r_input
    value = float(ex @ qx @ ex + eu @ ru @ eu)
    grad_x = 2.0 * (qx @ ex)
    grad_u = 2.0 * (ru @ eu)
    hess_xx = 2.0 * qx.copy()
    hess_uu = 2.0 * ru.copy()
    if obstacles:
        c, gc, hc = collision_cost_terms(x[POS], obstacles, coll_params)
        value += c
        grad_x = grad_x.copy()
        grad_x[POS] += gc
        hess_xx = hess_xx.copy()
        hess_xx[POS, POS] += hc
    return value, grad_x, grad_u, hess_xx, hess_uu


def terminal_cost(
    x: np.ndarray, x_ref: np.ndarray, q_terminal: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Quadratic end-of-horizon penalty compensating the truncation."""
    ex = x - x_ref
    return float(ex @ q_terminal @ ex), 2.0 * (q_terminal @ ex), 2.0 * q_terminal


@dataclass
class OcpProblem:
    """One transcribed instance, ready for the SQP solver."""

    t0: float
    x0: np.ndarray                      # (9,)
    node_times: np.ndarray              # (N+1,)
    x_ref: np.ndarray                   # (N+1, 9)
    u_ref: np.ndarray                   # (N, 3)
    yaw_rates: np.ndarray               # (N,), exogenous heading rate per interval
    f_ext: np.ndarray                   # (3,), estimated external force
    obstacles: list[ObstaclePrediction]
    config: OcpConfig
    coll_params: CollisionParams

    @property
    def n_nodes(self) -> int:
        return len(self.node_times)

    @property
    def dt(self) -> float:
        return float(self.node_times[1] - self.node_times[0])

    def node_obstacles(self, k: int) -> list[tuple[np.ndarray, float]]:
        """(position, inflated r_th) pairs for the cost at node k."""
        return [(ob.positions[k], float(ob.r_th[k])) for ob in self.obstacles]

    def objective(self, states: np.ndarray, inputs: np.ndarray) -> float:
        """Total cost of a candidate trajectory, collision terms included."""
        n = self.config.intervals
        ex = states[:n] - self.x_ref[:n]
        eu = inputs - self.u_ref
        total = float(np.einsum("ki,ij,kj->", ex, self.config.q_state, ex))
        total += float(np.einsum("ki,ij,kj->", eu, self.config.r_input, eu))
        et = states[n] - self.x_ref[n]
        total += float(et @ self.config.q_terminal @ et)
        kappa = self.coll_params.steepness
        for ob in self.obstacles:
            dist = np.linalg.norm(states[:, POS] - ob.positions, axis=1)
            s = _logistic_array(kappa * (dist - ob.r_th))
            total += self.coll_params.q_cost * float(s.sum())
        return total


def assemble(
    x0: np.ndarray,
    t0: float,
    reference: ReferenceTrajectory,
    beliefs: list[AgentBelief],
    config: OcpConfig,
    coll_params: CollisionParams,
    model: ModelParams,
    f_ext: np.ndarray | None = None,
    self_cov0: np.ndarray | None = None,
    nominal: tuple[np.ndarray, np.ndarray] | None = None,
    self_sigmas: np.ndarray | None = None,
    delay_compensation: bool = True,
) -> OcpProblem:
    """Build one solver-ready problem instance.

    Beliefs are expected to be pre-filtered by the priority graph. Ego
    uncertainty can be supplied either as per-node position spreads
    (`self_sigmas`, cheap path used by the simulation loop) or as an
    initial covariance plus a nominal trajectory to propagate it along.
    """
    if reference is None:
        raise ConfigError("reference trajectory is required")
    n = config.intervals
    node_times = t0 + config.dt * np.arange(n + 1)
    x_ref, a_ref, yaw_rate_nodes = reference.sample_many(node_times)
    u_ref = np.empty((n, NU))
    for k in range(n):
        u_ref[k] = input_reference(a_ref[k], float(x_ref[k, YAW]), model.gravity)

    if self_sigmas is None:
        if self_cov0 is not None:
            if nominal is not None:
                states, inputs = nominal
            else:
                states = np.tile(np.asarray(x0, dtype=float), (n + 1, 1))
                inputs = np.tile(
                    input_reference(np.zeros(3), float(x0[YAW]), model.gravity), (n, 1)
                )
            covs = avoidance.propagate_covariance_self(
                self_cov0,
                states,
                inputs,
                f_ext if f_ext is not None else np.zeros(3),
                model,
                config.dt,
                yaw_rates=yaw_rate_nodes[:n],
            )
            lam = np.linalg.eigvalsh(covs[:, :3, :3])[:, -1]
            self_sigmas = np.sqrt(np.maximum(lam, 0.0))
        else:
            self_sigmas = np.zeros(n + 1)

    obstacles = avoidance.predict_obstacles(
        beliefs,
        t0,
        node_times,
        coll_params,
        self_sigmas=self_sigmas,
        self_state=np.asarray(x0, dtype=float),
        delay_compensation=delay_compensation,
    )
    return OcpProblem(
        t0=t0,
        x0=np.asarray(x0, dtype=float).copy(),
        node_times=node_times,
        x_ref=x_ref,
        u_ref=u_ref,
        yaw_rates=yaw_rate_nodes[:n].copy(),
        f_ext=np.zeros(3) if f_ext is None else np.asarray(f_ext, dtype=float).copy(),
        obstacles=obstacles,
        config=config,
        coll_params=coll_params,
    )
