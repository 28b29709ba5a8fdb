"""Constant-velocity Kalman filtering in pixel space.

State is [x, y, vx, vy]: box-center position in pixels and velocity in
pixels per frame.  Process noise combines continuous white-noise
acceleration (intensity ``process_std_vel**2``) with an independent
position diffusion term (``process_std_pos**2`` per frame), so both
noise knobs stay meaningful and Q(dt) is positive definite for dt > 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .core import BoundingBox, Detection
from .errors import DimensionMismatch, NonFiniteInput, SingularInnovation

STATE_DIM = 4
MEAS_DIM = 2

# Measurement model: observe position only.
H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class NoiseConfig:
    """Noise magnitudes in pixels / pixels-per-frame."""

    measurement_std: float = 2.0
    process_std_pos: float = 1.0
    process_std_vel: float = 0.5
    init_vel_var_inflation: float = 10.0


@dataclass(frozen=True)
class KinematicState:
    """Gaussian state estimate: mean 4-vector and 4x4 covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.shape != (STATE_DIM,) or cov.shape != (STATE_DIM, STATE_DIM):
            raise DimensionMismatch(
                f"state must be ({STATE_DIM},) mean with ({STATE_DIM},{STATE_DIM}) cov"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonFiniteInput("state mean/cov must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]


def make_cv_matrices(dt: float, cfg: NoiseConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Transition F(dt) and process noise Q(dt) for the CV model."""
    dt = float(dt)
    F = np.eye(STATE_DIM)
    F[0, 2] = dt
    F[1, 3] = dt
    qv = cfg.process_std_vel**2
    qp = cfg.process_std_pos**2
    # Per-axis white-noise-acceleration block plus position diffusion.
    q_pp = qv * dt**3 / 3.0 + qp * dt
    q_pv = qv * dt**2 / 2.0
    q_vv = qv * dt
    Q = np.zeros((STATE_DIM, STATE_DIM))
    for axis in range(2):
        p, v = axis, axis + 2
        Q[p, p] = q_pp
        Q[p, v] = Q[v, p] = q_pv
        Q[v, v] = q_vv
    return F, Q


def kf_init(box: BoundingBox, cfg: NoiseConfig = NoiseConfig()) -> KinematicState:
    """Initial state from a first detection: box center, zero velocity.

    Velocity variance is inflated so the first update can pull velocity
    toward the implied displacement.
    """
    cx, cy = box.center
    mean = np.array([cx, cy, 0.0, 0.0])
    m2 = cfg.measurement_std**2
    v2 = cfg.init_vel_var_inflation * cfg.process_std_vel**2
    cov = np.diag([m2, m2, v2, v2])
    return KinematicState(mean=mean, cov=cov)


def kf_predict(state: KinematicState, dt: float, cfg: NoiseConfig = NoiseConfig()) -> KinematicState:
    """Propagate the state dt frames forward."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    F, Q = make_cv_matrices(dt, cfg)
    mean = F @ state.mean
    cov = F @ state.cov @ F.T + Q
    cov = 0.5 * (cov + cov.T)
    return KinematicState(mean=mean, cov=cov)


def _measurement_vector(meas: Union[BoundingBox, Detection, np.ndarray]) -> np.ndarray:
    if isinstance(meas, Detection):
        meas = meas.box
    if isinstance(meas, BoundingBox):
        return np.array(meas.center)
    z = np.asarray(meas, dtype=np.float64).reshape(-1)
    if z.shape != (MEAS_DIM,):
        raise DimensionMismatch(f"measurement must be a 2-vector, got shape {z.shape}")
    return z


def innovation_of(state: KinematicState, meas, cfg: NoiseConfig = NoiseConfig()) -> Tuple[np.ndarray, np.ndarray]:
    """Innovation (residual) and its covariance S for a predicted state."""
    z = _measurement_vector(meas)
    nu = z - H @ state.mean
    R = cfg.measurement_std**2 * np.eye(MEAS_DIM)
    S = H @ state.cov @ H.T + R
    return nu, S


def kf_update(
    state: KinematicState, meas, cfg: NoiseConfig = NoiseConfig()
) -> Tuple[KinematicState, np.ndarray, np.ndarray]:
    """Measurement update; returns (posterior, innovation, innovation covariance)."""
    nu, S = innovation_of(state, meas, cfg)
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(f"innovation covariance singular: {S}") from exc
    if np.linalg.det(S) <= 0.0:
        raise SingularInnovation(f"innovation covariance not positive definite: {S}")
    K = state.cov @ H.T @ S_inv
    mean = state.mean + K @ nu
    # Joseph form keeps the covariance symmetric PSD under roundoff.
    R = cfg.measurement_std**2 * np.eye(MEAS_DIM)
    A = np.eye(STATE_DIM) - K @ H
    cov = A @ state.cov @ A.T + K @ R @ K.T
    cov = 0.5 * (cov + cov.T)
    return KinematicState(mean=mean, cov=cov), nu, S


def kf_likelihood(innovation: np.ndarray, S: np.ndarray) -> float:
    """Gaussian measurement density at the innovation.

    Value is (2*pi)**-1 * det(S)**-0.5 * exp(-0.5 * nu' S^-1 nu) for the
    2-d measurement space.
    """
    nu = np.asarray(innovation, dtype=np.float64).reshape(-1)
    S = np.asarray(S, dtype=np.float64)
    if nu.shape != (MEAS_DIM,) or S.shape != (MEAS_DIM, MEAS_DIM):
        raise DimensionMismatch("likelihood expects a 2-vector and 2x2 covariance")
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    if det <= 0.0 or not np.isfinite(det):
        raise SingularInnovation(f"innovation covariance not positive definite: {S}")
    d2 = mahalanobis_sq(nu, S)
    return float(math.exp(-0.5 * d2) / (2.0 * math.pi * math.sqrt(det)))


def mahalanobis_sq(innovation: np.ndarray, S: np.ndarray) -> float:
    """Squared Mahalanobis distance nu' S^-1 nu."""
    nu = np.asarray(innovation, dtype=np.float64).reshape(-1)
    S = np.asarray(S, dtype=np.float64)
    try:
        sol = np.linalg.solve(S, nu)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(f"innovation covariance singular: {S}") from exc
    return float(nu @ sol)


def kf_gate(innovation: np.ndarray, S: np.ndarray, threshold: float) -> bool:
    """True when the innovation passes the chi-square gate (boundary inclusive)."""
    return mahalanobis_sq(innovation, S) <= threshold


def chi2_gate_threshold(p: float = 0.99) -> float:
    """Chi-square quantile for 2 degrees of freedom.

    The 2-dof CDF is 1 - exp(-x/2), so the quantile is -2*ln(1-p);
    p = 0.99 gives 9.2103...
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must be in (0, 1), got {p}")
    return -2.0 * math.log(1.0 - p)
