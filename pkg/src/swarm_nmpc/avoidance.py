"""Reasoning about other agents: motion prediction, uncertainty, safety radii.

Other agents are extrapolated with a constant-velocity model that
compensates the measured communication delay. Position uncertainty of both
the ego vehicle and the neighbors is propagated along the horizon and
converted into inflated minimum/threshold distances, reducing
ellipsoid-ellipsoid separation checks to sphere-sphere ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .errors import ModelDomainError

log = logging.getLogger(__name__)

_DEGENERATE_DIST = 1e-9
_E_X = np.array([1.0, 0.0, 0.0])


@dataclass
class CollisionParams:
    """Tuning of the inter-agent cost and hard separation constraint."""

    r_min: float = 0.9        # hard minimum distance, m
    r_th: float = 1.2         # cost half-value distance, m
    q_cost: float = 100.0     # peak magnitude of the avoidance cost
    steepness: float = 8.0    # logistic slope, 1/m
    v_threshold: float = 0.05  # speeds below this are treated as zero, m/s

    def validate(self) -> None:
        if not (0.0 < self.r_min < self.r_th):
            raise ValueError("need 0 < r_min < r_th")
        if self.q_cost <= 0 or self.steepness <= 0:
            raise ValueError("q_cost and steepness must be positive")
        if self.v_threshold < 0:
            raise ValueError("v_threshold must be non-negative")


@dataclass
class AgentBelief:
    """Last received snapshot of another agent."""

    agent_id: str
    position: np.ndarray          # (3,)
    velocity: np.ndarray          # (3,)
    covariance: np.ndarray        # (6,6) over (position, velocity)
    stamp: float                  # source timestamp, s
    priority: int = 0

    def validate(self, now: float | None = None) -> None:
        cov = np.asarray(self.covariance)
        if cov.shape != (6, 6) or not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError(f"belief covariance for {self.agent_id} must be symmetric 6x6")
        if np.linalg.eigvalsh(cov).min() < -1e-9:
            raise ValueError(f"belief covariance for {self.agent_id} must be PSD")
        if now is not None and self.stamp > now + 1e-9:
            raise ValueError(f"belief stamp for {self.agent_id} lies in the future")


@dataclass
class ObstaclePrediction:
    """Per-node predicted position and inflated radii for one neighbor."""

    agent_id: str
    positions: np.ndarray   # (K, 3)
    r_min: np.ndarray       # (K,)
    r_th: np.ndarray        # (K,)


def predict_agent(
    belief: AgentBelief,
    now: float,
    times: np.ndarray,
    v_threshold: float = 0.0,
    delay_compensation: bool = True,
) -> np.ndarray:
    """Constant-velocity extrapolation of a neighbor onto the given times.

    The belief is (position, velocity) at `belief.stamp`; the staleness
    now - stamp is added to the prediction horizon when compensation is on.
    Speeds below `v_threshold` are zeroed to suppress estimator noise.
    """
    times = np.asarray(times, dtype=float)
    delay = now - belief.stamp if delay_compensation else 0.0
    if delay < 0.0:
        log.warning(
            "belief from %s is %0.4f s in the future; clamping delay to zero",
            belief.agent_id,
            -delay,
        )
        delay = 0.0
    v = np.asarray(belief.velocity, dtype=float)
    if np.linalg.norm(v) < v_threshold:
        v = np.zeros(3)
    horizon = (times - now) + delay
    return np.asarray(belief.position, dtype=float)[None, :] + horizon[:, None] * v[None, :]


def propagate_covariance_cv(cov0: np.ndarray, dt: float) -> np.ndarray:
    """Closed-form covariance propagation under the constant-velocity model.

    For F = [[0, I], [0, 0]] the propagated covariance is
    exp(F t) S exp(F t)^T, i.e. the position block picks up the velocity
    uncertainty quadratically while the velocity block stays constant.
    """
    cov0 = np.asarray(cov0, dtype=float)
    if cov0.shape != (6, 6):
        raise ValueError("expected a 6x6 covariance")
    if not np.allclose(cov0, cov0.T, atol=1e-9) or np.linalg.eigvalsh(cov0).min() < -1e-9:
        raise ValueError("covariance must be symmetric PSD")
    pp = cov0[:3, :3]
    pv = cov0[:3, 3:]
    vp = cov0[3:, :3]
    vv = cov0[3:, 3:]
    out = np.empty((6, 6))
    out[:3, :3] = pp + dt * (pv + vp) + dt * dt * vv
    out[:3, 3:] = pv + dt * vv
    out[3:, :3] = out[:3, 3:].T
    out[3:, 3:] = vv
    return out


def _propagate_cv_batch(cov0: np.ndarray, dts: np.ndarray) -> np.ndarray:
    """Vectorized :func:`propagate_covariance_cv` over an array of horizons."""
    dts = np.asarray(dts, dtype=float)
    pp = cov0[:3, :3]
    pv = cov0[:3, 3:]
    vp = cov0[3:, :3]
    vv = cov0[3:, 3:]
    k = len(dts)
    out = np.empty((k, 6, 6))
    t = dts[:, None, None]
    out[:, :3, :3] = pp + t * (pv + vp) + t * t * vv
    out[:, :3, 3:] = pv + t * vv
    out[:, 3:, :3] = np.swapaxes(out[:, :3, 3:], 1, 2)
    out[:, 3:, 3:] = vv
    return out


def propagate_covariance_self(
    cov0: np.ndarray,
    states: np.ndarray,
    inputs: np.ndarray,
    f_ext: np.ndarray,
    prm: dynamics.ModelParams,
    dt: float,
    yaw_rates: np.ndarray | None = None,
    transitions: np.ndarray | None = None,
) -> np.ndarray:
    """Propagate the ego 9x9 covariance along a nominal trajectory.

    Uses the discrete Lyapunov recursion S_{k+1} = A_k S_k A_k^T with the
    integrator-consistent transition matrices. `transitions` may carry
    precomputed A_k (N, 9, 9) to avoid a second linearization pass.
    """
    states = np.asarray(states, dtype=float)
    n_steps = states.shape[0] - 1
    cov0 = np.asarray(cov0, dtype=float)
    if cov0.shape != (dynamics.NX, dynamics.NX):
        raise ValueError("expected a 9x9 initial covariance")
    if yaw_rates is None:
        yaw_rates = np.zeros(max(n_steps, 0))
    covs = np.empty((n_steps + 1, dynamics.NX, dynamics.NX))
    covs[0] = 0.5 * (cov0 + cov0.T)
    for k in range(n_steps):
        if transitions is not None:
            a_k = transitions[k]
        else:
            _, a_k, _ = dynamics.rk4_sensitivities(
                states[k], inputs[k], f_ext, prm, dt, yaw_rates[k]
            )
        s = a_k @ covs[k] @ a_k.T
        covs[k + 1] = 0.5 * (s + s.T)
    return covs


def position_sigma(cov: np.ndarray) -> float:
    """Conservative scalar spread: sqrt of the largest position eigenvalue."""
    block = np.asarray(cov, dtype=float)[:3, :3]
    lam = np.linalg.eigvalsh(block)[-1]
    return float(np.sqrt(max(lam, 0.0)))


def inflate_radii(
    cov_self: np.ndarray,
    cov_other: np.ndarray,
    params: CollisionParams,
) -> tuple[float, float]:
    """Grow both safety radii by three standard deviations of each side.

    The spread of each covariance is measured by the largest eigenvalue of
    its position block, i.e. the enclosing sphere of the uncertainty
    ellipsoid.
    """
    margin = 3.0 * position_sigma(cov_self) + 3.0 * position_sigma(cov_other)
    return params.r_min + margin, params.r_th + margin


def separation(p: np.ndarray, p_other: np.ndarray) -> tuple[float, np.ndarray]:
    """Distance and unit direction from the other agent toward us.

    Falls back to the world x axis when the positions coincide, so
    downstream linearizations stay well-posed.
    """
    diff = np.asarray(p, dtype=float) - np.asarray(p_other, dtype=float)
    d = float(np.linalg.norm(diff))
    if d < _DEGENERATE_DIST:
        return d, _E_X.copy()
    return d, diff / d


def collision_constraint(
    p: np.ndarray,
    p_other: np.ndarray,
    r_min: float,
) -> tuple[float, np.ndarray]:
    """Hard separation constraint g <= 0 and its gradient wrt our position.

    g = r_min^2 - |p - p_other|^2, so feasibility means the squared
    distance exceeds the squared inflated radius.
    """
    diff = np.asarray(p, dtype=float) - np.asarray(p_other, dtype=float)
    g = float(r_min * r_min - diff @ diff)
    return g, -2.0 * diff


def predict_obstacles(
    beliefs: list[AgentBelief],
    now: float,
    node_times: np.ndarray,
    params: CollisionParams,
    self_sigmas: np.ndarray | None = None,
    self_state: np.ndarray | None = None,
    delay_compensation: bool = True,
) -> list[ObstaclePrediction]:
    """Build per-node obstacle positions and inflated radii for the solver.

    `self_sigmas` is the per-node position spread of the ego covariance
    (zeros when no estimate is available). When `self_state` is given, a
    small deterministic lateral offset is applied to neighbors approaching
    exactly head-on, which breaks the symmetry of reciprocal encounters.
    """
    node_times = np.asarray(node_times, dtype=float)
    k = len(node_times)
    if self_sigmas is None:
        self_sigmas = np.zeros(k)
    out = []
    for belief in sorted(beliefs, key=lambda b: b.agent_id):
        positions = predict_agent(belief, now, node_times, params.v_threshold, delay_compensation)
        if self_state is not None:
            positions = positions + _head_on_bias(self_state, belief)
        delay = max(now - belief.stamp, 0.0) if delay_compensation else 0.0
        horizons = (node_times - now) + delay
        covs = _propagate_cv_batch(np.asarray(belief.covariance, dtype=float), horizons)
        lam = np.linalg.eigvalsh(covs[:, :3, :3])[:, -1]
        other_sigmas = np.sqrt(np.maximum(lam, 0.0))
        margin = 3.0 * self_sigmas + 3.0 * other_sigmas
        out.append(
            ObstaclePrediction(
                agent_id=belief.agent_id,
                positions=positions,
                r_min=params.r_min + margin,
                r_th=params.r_th + margin,
            )
        )
    return out


def _head_on_bias(self_state: np.ndarray, belief: AgentBelief) -> np.ndarray:
    """Right-hand tie-break for exactly anti-parallel approach geometry.

    Perfectly symmetric head-on encounters make the avoidance gradient
    directionally degenerate; both vehicles then shift the perceived
    opponent slightly to one side, and the biases of the two vehicles are
    complementary.
    """
    rel_p = np.asarray(belief.position, dtype=float) - self_state[dynamics.POS]
    rel_v = np.asarray(belief.velocity, dtype=float) - self_state[dynamics.VEL]
    np_ = np.linalg.norm(rel_p)
    nv = np.linalg.norm(rel_v)
    if np_ < 1e-9 or nv < 1e-6:
        return np.zeros(3)
    cos = rel_p @ rel_v / (np_ * nv)
    sin = np.linalg.norm(np.cross(rel_p, rel_v)) / (np_ * nv)
    if cos >= 0.0 or sin > 1e-6:
        return np.zeros(3)
    lateral = np.cross(rel_p / np_, np.array([0.0, 0.0, 1.0]))
    n_lat = np.linalg.norm(lateral)
    if n_lat < 1e-9:
        lateral, n_lat = _E_X, 1.0
    return 1e-3 * lateral / n_lat
