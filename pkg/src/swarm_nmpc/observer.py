"""External-force estimator for offset-free tracking.

A random-walk Kalman filter on the inertial force vector: the velocity
innovation between the measured state and the model's one-step prediction
is attributed to an unmodeled constant force. Feeding the estimate back
into the controller model removes steady-state position error under wind.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ModelParams, VEL


@dataclass
class ObserverConfig:
    process_noise: float = 0.1   # force random-walk intensity, N^2/s
    meas_noise_var: float = 1e-4  # velocity innovation variance, (m/s)^2


@dataclass
class DisturbanceEstimate:
    """Current force estimate with its variance (per-axis, decoupled)."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    covariance: np.ndarray = field(default_factory=lambda: 4.0 * np.eye(3))

    def validate(self) -> None:
        if not np.all(np.isfinite(self.force)):
            raise ValueError("force estimate must be finite")
        if np.linalg.eigvalsh(self.covariance).min() < -1e-9:
            raise ValueError("estimate covariance must be PSD")


def observer_update(
    prev: DisturbanceEstimate,
    measured_state: np.ndarray,
    predicted_state: np.ndarray,
    dt: float,
    prm: ModelParams,
    config: ObserverConfig | None = None,
) -> DisturbanceEstimate:
    """One filter update from a velocity innovation.

    `predicted_state` is the model propagation of the previous estimate
    over `dt` using the previous force estimate, so the innovation is
    (approximately) (F_true - F_est) * dt / m plus measurement noise.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    config = config or ObserverConfig()
    innovation = np.asarray(measured_state)[VEL] - np.asarray(predicted_state)[VEL]
    h = dt / prm.mass
    p_pred = prev.covariance + config.process_noise * dt * np.eye(3)
    s = h * h * p_pred + config.meas_noise_var * np.eye(3)
    gain = h * p_pred @ np.linalg.inv(s)
    force = prev.force + gain @ innovation
    cov = (np.eye(3) - h * gain) @ p_pred
    return DisturbanceEstimate(force=force, covariance=0.5 * (cov + cov.T))
