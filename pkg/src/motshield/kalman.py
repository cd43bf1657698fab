"""Constant-velocity Kalman filtering for box centers.

The state interleaves position and per-frame velocity per axis,
s = (x, vx, y, vy, ...), so the transition operator is block
[[1, 1], [0, 1]] and the projection operator picks the positions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class SingularInnovation(RuntimeError):
    """Innovation covariance is not invertible to tolerance."""


@dataclass(frozen=True)
class KfModel:
    dims: int
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class KfState:
    s: np.ndarray  # (2 * dims,)
    P: np.ndarray  # (2 * dims, 2 * dims)


def constant_velocity_model(dims: int, q: float = 0.01, r: float = 1.0) -> KfModel:
    """Build the constant-velocity model for `dims` spatial axes.

    q scales the process-noise covariance, r the observation-noise covariance.
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")
    n = 2 * dims
    A = np.eye(n)
    H = np.zeros((dims, n))
    for i in range(dims):
        A[2 * i, 2 * i + 1] = 1.0
        H[i, 2 * i] = 1.0
    return KfModel(dims=dims, A=A, H=H, Q=q * np.eye(n), R=r * np.eye(dims))


def initial_state(center, model: KfModel, velocity_var_factor: float = 10.0) -> KfState:
    """State from a first detection: position at the center, velocity zero.

    The initial covariance takes the observation-noise scale on the position
    diagonal and `velocity_var_factor` times that on the velocity diagonal.
    """
    z = np.asarray(center, dtype=float).ravel()
    if z.shape != (model.dims,):
        raise ValueError(f"center must have {model.dims} components")
    n = 2 * model.dims
    s = np.zeros(n)
    s[0::2] = z
    r_scale = float(np.mean(np.diag(model.R)))
    P = np.zeros((n, n))
    P[0::2, 0::2] = r_scale * np.eye(model.dims)
    P[1::2, 1::2] = velocity_var_factor * r_scale * np.eye(model.dims)
    return KfState(s=s, P=P)


def predict(state: KfState, model: KfModel) -> KfState:
    """One prediction step: s- = A s, P- = A P A^T + Q."""
    s = model.A @ state.s
    P = model.A @ state.P @ model.A.T + model.Q
    return KfState(s=s, P=P)


def predict_only_step(state: KfState, model: KfModel) -> KfState:
    """Prediction adopted as the estimate when no observation matched."""
    return predict(state, model)


def gain(state_pred: KfState, model: KfModel) -> np.ndarray:
    """Gain operator K = P- H^T (H P- H^T + R)^-1, shape (2*dims, dims)."""
    H, R = model.H, model.R
    S = H @ state_pred.P @ H.T + R
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(f"innovation covariance singular: {exc}") from exc
    if not np.all(np.isfinite(S_inv)):
        raise SingularInnovation("innovation covariance inverse not finite")
    check = np.max(np.abs(S @ S_inv - np.eye(model.dims)))
    if check > 1e-6:
        raise SingularInnovation(f"innovation inverse residual {check:.3g}")
    return state_pred.P @ H.T @ S_inv


def residual(state_pred: KfState, z, model: KfModel) -> np.ndarray:
    """Observation-prediction deviation z - H s-."""
    zv = np.asarray(z, dtype=float).ravel()
    return zv - model.H @ state_pred.s


def update(state_pred: KfState, z, model: KfModel,
           modulate: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> KfState:
    """Merge the prediction with an observation.

    s = s- + K phi(z - H s-), with phi the optional deviation modulation
    (identity when absent); P = (I - K H) P-, symmetrized against drift.
    """
    K = gain(state_pred, model)
    delta = residual(state_pred, z, model)
    if modulate is not None:
        delta = np.asarray(modulate(delta), dtype=float)
    s = state_pred.s + K @ delta
    n = 2 * model.dims
    P = (np.eye(n) - K @ model.H) @ state_pred.P
    P = 0.5 * (P + P.T)
    return KfState(s=s, P=P)


def position(state: KfState) -> np.ndarray:
    """Projected position H s."""
    return state.s[0::2].copy()


def velocity(state: KfState) -> np.ndarray:
    return state.s[1::2].copy()
